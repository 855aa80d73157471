#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fooloc/attack.hpp"
#include "fooloc/channel.hpp"
#include "fooloc/harness.hpp"
#include "fooloc/models.hpp"

namespace fooloc {

/// Raised when a stage runs before the stage whose artifacts it needs.
class StageDependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AttackSettings {
    AttackConfig config; ///< d_max and d_min come from the selection thresholds
    std::vector<Arch> untargeted{Arch::dnn_a, Arch::dnn_b};
    std::vector<Arch> targeted{Arch::dnn_a, Arch::dnn_b};
    std::vector<Arch> transfer_victims{Arch::dnn_b}; ///< substitute is the other architecture, trained on D_B
    std::size_t max_pairs = 0;                       ///< 0 keeps every selected pair
};

struct BaselineSettings {
    std::vector<double> delta_max{0.15, 0.3, 0.45};
    std::size_t repeats = 10;
};

enum class ReportFormat { json, csv, plotdata };

std::string to_string(ReportFormat format);
ReportFormat report_format_from_string(const std::string& text);

struct IoSettings {
    PsrAggregation psr_aggregation = PsrAggregation::decibel;
    std::vector<ReportFormat> formats{ReportFormat::json, ReportFormat::csv, ReportFormat::plotdata};
};

struct RunConfig {
    ChannelParams channel;
    GridConfig grid;
    std::size_t samples_per_spot = 250;
    TrainConfig train;
    AttackSettings attack;
    BaselineSettings baseline;
    IoSettings io;
    std::uint64_t master_seed = 0;
    std::string output_dir = "fooloc_out";
};

/// Parses a JSON config over the defaults, then applies section.key=value overrides.
/// Unknown keys, type mismatches and malformed JSON raise FormatError; invalid values ContractError.
RunConfig parse_config(std::string_view json_text, std::span<const std::string> overrides = {});
RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Sorted-key JSON of every setting; the basis of config_hash.
std::string canonical_json(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string config_hash(const RunConfig& cfg);

enum class Stage { synth, train, attack, transfer, baseline, report, all };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& text);

struct PipelineOptions {
    std::size_t jobs = 1;
    std::function<void(const std::string&)> log;
};

/**
 * Runs one stage (or all of them) under cfg.output_dir. Artifacts carry a
 * content hash in their file names and are listed in manifest.json together
 * with a hash of the settings each stage depends on; a stage whose inputs are
 * missing or were produced under different settings raises StageDependencyError.
 */
void run_pipeline(const RunConfig& cfg, Stage stage, const PipelineOptions& opts = {});

/// Experiment reports registered in the manifest, in stage order.
std::vector<ExperimentReport> load_reports(const std::filesystem::path& output_dir);

std::string csv_header();
std::string plotdata_header();

/// Renders reports; json = one summary record per report.
std::string render_report(std::span<const ExperimentReport> reports, ReportFormat format,
                          const Provenance& provenance);

/// Writes the rendering into dir with a content-hash-stamped name and returns the path.
std::filesystem::path emit_report(std::span<const ExperimentReport> reports, ReportFormat format,
                                  const std::filesystem::path& dir, const Provenance& provenance);

} // namespace fooloc
