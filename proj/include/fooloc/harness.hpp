#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fooloc/attack.hpp"
#include "fooloc/channel.hpp"
#include "fooloc/metrics.hpp"
#include "fooloc/models.hpp"

namespace fooloc {

/// splitmix64 finalizer; used to derive independent per-task seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Runs task(i) for i in [0, count) on up to jobs threads. Results must be
/// written by index, so output never depends on scheduling.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task);

struct GridConfig {
    AreaBounds area{0.0, 9.0, 0.0, 9.0};
    std::size_t nx = 6;
    std::size_t ny = 6;
    double spacing = 1.5;
    Point2 origin{0.75, 0.75};  ///< first A-spot
    double offset_fraction = 0.5; ///< B = A + fraction * (spacing, spacing), clipped
    Point2 ap_location{4.5, -0.5};
};

struct SpotGrid {
    std::vector<Point2> a_spots;
    std::vector<Point2> b_spots;
    std::vector<std::string> a_ids;
    std::vector<std::string> b_ids;
    double spacing = 0.0;
    Point2 ap_location;
    AreaBounds area;
};

SpotGrid build_grid(const GridConfig& cfg);

enum class DatasetRole { d_a, d_b, d_c };

std::string to_string(DatasetRole role);
DatasetRole role_from_string(const std::string& text);

struct SpotSamples {
    std::string spot_id;
    Point2 location;
    std::vector<AmplitudeSample> samples;
};

/// Samples of one role, grouped by spot. The role fixes the link direction:
/// d_a is uplink at A-spots, d_b downlink at B-spots, d_c uplink at B-spots.
struct RoleDataset {
    DatasetRole role = DatasetRole::d_a;
    std::vector<SpotSamples> spots;

    std::vector<DatasetRecord> records() const;
    const SpotSamples& spot(const std::string& id) const;
};

RoleDataset role_dataset_from_records(DatasetRole role, std::span<const DatasetRecord> records);

struct ExperimentData {
    SpotGrid grid;
    RoleDataset d_a{DatasetRole::d_a, {}};
    RoleDataset d_b{DatasetRole::d_b, {}};
    RoleDataset d_c{DatasetRole::d_c, {}};
};

/// Synthesizes all three roles. Every spot shares the room scene drawn from seed.
ExperimentData synthesize_datasets(const SpotGrid& grid, const ChannelParams& params, std::size_t samples_per_spot,
                                   std::uint64_t seed);

struct Thresholds {
    double global_p90 = 0.0;
    double ball_radius = 0.0;
    double d_max = 0.0;
    std::vector<double> spot_p90; ///< per B-spot
    std::vector<double> d_min;    ///< per B-spot
};

/// Threshold rules from clean predictions at every B-spot (same order as grid.b_spots).
Thresholds selection_thresholds(const SpotGrid& grid, std::span<const std::vector<Point2>> predictions);
Thresholds selection_thresholds(const SpotGrid& grid, const LocalizationModel& model, const RoleDataset& eval);

struct SpotPair {
    std::size_t genuine = 0; ///< index into b_spots
    std::size_t target = 0;
    Point2 p;
    Point2 q;
    double d_max = 0.0;
    double d_min = 0.0;
};

struct TargetSelection {
    std::vector<SpotPair> pairs;
    std::vector<std::size_t> skipped; ///< genuine spots with no candidate outside the ball
};

/// For each genuine B-spot, every B-spot at the minimal distance beyond the ball radius (ties within 1e-9 m).
TargetSelection select_targets(const SpotGrid& grid, const Thresholds& thresholds);

struct ReportRow {
    std::string pair_id;
    std::string p_id;
    Point2 p;
    std::optional<std::string> q_id;
    std::optional<Point2> q;
    int omega = 1;
    double d_max = 0.0;
    double d_min = 0.0;
    LeSummary le_p_before;
    LeSummary le_p_after;
    std::optional<LeSummary> le_q_before;
    std::optional<LeSummary> le_q_after;
    double asr_before = 0.0;
    double asr_after = 0.0;
    double psr_db = 0.0;
    std::size_t already_in_target = 0; ///< clean samples that already meet the attack goal
    std::uint64_t seed = 0;
    std::vector<double> gamma;
    std::vector<double> asr_runs; ///< per repeat, random baselines only
    std::vector<double> psr_runs;
    std::vector<Point2> predictions_before;
    std::vector<Point2> predictions_after;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ReportSummary {
    std::size_t rows = 0;
    double mean_asr_before = 0.0;
    double mean_asr_after = 0.0;
    double mean_psr_db = 0.0;
    double le_p50_before = 0.0; ///< pooled over every sample of every row
    double le_p50_after = 0.0;
    std::optional<double> le_q50_before;
    std::optional<double> le_q50_after;
    std::size_t already_in_target = 0;

    friend bool operator==(const ReportSummary&, const ReportSummary&) = default;
};

struct ExperimentReport {
    std::string experiment; ///< e.g. whitebox_untargeted
    std::string victim;
    std::optional<std::string> substitute;
    int omega = 1;
    double delta_max = 0.0;
    std::vector<ReportRow> rows;
    ReportSummary summary;

    friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

ReportSummary summarize(std::span<const ReportRow> rows, PsrAggregation aggregation = PsrAggregation::decibel);

struct RunOptions {
    std::size_t jobs = 1;
    std::uint64_t seed = 0;
    PsrAggregation psr_aggregation = PsrAggregation::decibel;
    std::function<void(const std::string&)> log; ///< progress lines, optional
};

/// Scores gamma on the clean uplink samples of the genuine spot and fills a report row.
ReportRow evaluate_perturbation(const LocalizationModel& victim, std::span<const double> gamma,
                                const SpotSamples& uplink, const Point2& p, std::optional<Point2> q, int omega,
                                double d_max, double d_min, PsrAggregation aggregation = PsrAggregation::decibel);

struct AttackRun {
    ExperimentReport report;
    std::vector<Perturbation> perturbations;
};

/// White-box attacks: optimize on downlink (d_b) samples, evaluate on uplink (d_c) samples.
/// omega = 1 iterates B-spots with per-spot d_min; omega = 0 iterates pairs.
AttackRun run_whitebox(const LocalizationModel& model, const ExperimentData& data, const Thresholds& thresholds,
                       std::span<const SpotPair> pairs, int omega, const AttackConfig& cfg, const RunOptions& opts);

/// Untargeted perturbations optimized against the substitute, scored on the victim.
AttackRun run_transfer(const LocalizationModel& victim, const LocalizationModel& substitute,
                       const ExperimentData& data, const Thresholds& thresholds, const AttackConfig& cfg,
                       const RunOptions& opts);

/// Untargeted random multiplicative weights gamma ~ U(1 - delta_max, 1 + delta_max), averaged over repeats.
ExperimentReport run_random_baseline(const LocalizationModel& victim, const ExperimentData& data,
                                     const Thresholds& thresholds, double delta_max, std::size_t repeats,
                                     const RunOptions& opts);

// Report persistence: JSON lines, one record per row followed by a summary record.
std::string report_to_jsonl(const ExperimentReport& report, const std::optional<Provenance>& provenance = {});
ExperimentReport report_from_jsonl(const std::string& text);
std::string summary_to_json(const ExperimentReport& report, const std::optional<Provenance>& provenance = {});

} // namespace fooloc
