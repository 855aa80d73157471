#include "fooloc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"

namespace fooloc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json area_json(const AreaBounds& a)
{
    return {{"x_min", a.x_min}, {"x_max", a.x_max}, {"y_min", a.y_min}, {"y_max", a.y_max}};
}

AreaBounds area_from(const json& j)
{
    return {j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("y_min").get<double>(),
            j.at("y_max").get<double>()};
}

json point_json(const Point2& p) { return {{"x", p.x}, {"y", p.y}}; }

Point2 point_from(const json& j) { return {j.at("x").get<double>(), j.at("y").get<double>()}; }

json arch_list(const std::vector<Arch>& archs)
{
    json a = json::array();
    for (Arch arch : archs) {
        a.push_back(to_string(arch));
    }
    return a;
}

std::vector<Arch> arch_list_from(const json& j, const std::string& key)
{
    std::vector<Arch> out;
    for (const json& e : j) {
        try {
            out.push_back(arch_from_string(e.get<std::string>()));
        } catch (const std::exception&) {
            throw FormatError(key + ": unknown architecture '" + e.get<std::string>() + "'");
        }
    }
    return out;
}

json config_json(const RunConfig& c)
{
    const ChannelParams& ch = c.channel;
    const GridConfig& g = c.grid;
    const AttackConfig& a = c.attack.config;
    json formats = json::array();
    for (ReportFormat f : c.io.formats) {
        formats.push_back(to_string(f));
    }
    return {
        {"channel",
         {{"n_antennas", ch.n_antennas},
          {"n_subcarriers", ch.n_subcarriers},
          {"subcarrier_spacing_hz", ch.subcarrier_spacing_hz},
          {"carrier_hz", ch.carrier_hz},
          {"antenna_reference_hz", ch.antenna_reference_hz},
          {"min_reflectors", ch.min_reflectors},
          {"max_reflectors", ch.max_reflectors},
          {"reflection_min", ch.reflection_min},
          {"reflection_max", ch.reflection_max},
          {"excess_delay_min", ch.excess_delay_min},
          {"excess_delay_max", ch.excess_delay_max},
          {"room", area_json(ch.room)},
          {"noise_sigma", ch.noise_sigma},
          {"reciprocity_sigma", ch.reciprocity_sigma},
          {"uplink_extra_noise_sigma", ch.uplink_extra_noise_sigma},
          {"agc_gains", ch.agc_gains}}},
        {"grid",
         {{"area", area_json(g.area)},
          {"nx", g.nx},
          {"ny", g.ny},
          {"spacing", g.spacing},
          {"origin", point_json(g.origin)},
          {"offset_fraction", g.offset_fraction},
          {"ap_location", point_json(g.ap_location)},
          {"samples_per_spot", c.samples_per_spot}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"validation_fraction", c.train.validation_fraction},
          {"optimizer", c.train.optimizer == Optimizer::adam ? "adam" : "sgd"},
          {"width_divisor", c.train.width_divisor}}},
        {"attack",
         {{"beta", a.beta},
          {"eta", a.eta},
          {"iterations", a.iterations},
          {"batch_size", a.batch_size},
          {"delta_max", a.delta_max},
          {"xi_init_std", a.xi_init_std},
          {"untargeted", arch_list(c.attack.untargeted)},
          {"targeted", arch_list(c.attack.targeted)},
          {"transfer_victims", arch_list(c.attack.transfer_victims)},
          {"max_pairs", c.attack.max_pairs}}},
        {"baseline", {{"delta_max", c.baseline.delta_max}, {"repeats", c.baseline.repeats}}},
        {"io",
         {{"psr_aggregation", c.io.psr_aggregation == PsrAggregation::decibel ? "decibel" : "linear"},
          {"formats", formats}}},
        {"master_seed", c.master_seed},
        {"output_dir", c.output_dir},
    };
}

RunConfig config_from(const json& j)
{
    RunConfig c;
    const json& ch = j.at("channel");
    c.channel.n_antennas = ch.at("n_antennas").get<std::size_t>();
    c.channel.n_subcarriers = ch.at("n_subcarriers").get<std::size_t>();
    c.channel.subcarrier_spacing_hz = ch.at("subcarrier_spacing_hz").get<double>();
    c.channel.carrier_hz = ch.at("carrier_hz").get<double>();
    c.channel.antenna_reference_hz = ch.at("antenna_reference_hz").get<double>();
    c.channel.min_reflectors = ch.at("min_reflectors").get<std::size_t>();
    c.channel.max_reflectors = ch.at("max_reflectors").get<std::size_t>();
    c.channel.reflection_min = ch.at("reflection_min").get<double>();
    c.channel.reflection_max = ch.at("reflection_max").get<double>();
    c.channel.excess_delay_min = ch.at("excess_delay_min").get<double>();
    c.channel.excess_delay_max = ch.at("excess_delay_max").get<double>();
    c.channel.room = area_from(ch.at("room"));
    c.channel.noise_sigma = ch.at("noise_sigma").get<double>();
    c.channel.reciprocity_sigma = ch.at("reciprocity_sigma").get<double>();
    c.channel.uplink_extra_noise_sigma = ch.at("uplink_extra_noise_sigma").get<double>();
    c.channel.agc_gains = ch.at("agc_gains").get<std::vector<double>>();

    const json& g = j.at("grid");
    c.grid.area = area_from(g.at("area"));
    c.grid.nx = g.at("nx").get<std::size_t>();
    c.grid.ny = g.at("ny").get<std::size_t>();
    c.grid.spacing = g.at("spacing").get<double>();
    c.grid.origin = point_from(g.at("origin"));
    c.grid.offset_fraction = g.at("offset_fraction").get<double>();
    c.grid.ap_location = point_from(g.at("ap_location"));
    c.samples_per_spot = g.at("samples_per_spot").get<std::size_t>();

    const json& t = j.at("train");
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.validation_fraction = t.at("validation_fraction").get<double>();
    const std::string opt = t.at("optimizer").get<std::string>();
    if (opt != "adam" && opt != "sgd") {
        throw FormatError("train.optimizer: expected \"adam\" or \"sgd\", got \"" + opt + "\"");
    }
    c.train.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
    c.train.width_divisor = t.at("width_divisor").get<std::size_t>();

    const json& a = j.at("attack");
    c.attack.config.beta = a.at("beta").get<double>();
    c.attack.config.eta = a.at("eta").get<double>();
    c.attack.config.iterations = a.at("iterations").get<std::size_t>();
    c.attack.config.batch_size = a.at("batch_size").get<std::size_t>();
    c.attack.config.delta_max = a.at("delta_max").get<double>();
    c.attack.config.xi_init_std = a.at("xi_init_std").get<double>();
    c.attack.untargeted = arch_list_from(a.at("untargeted"), "attack.untargeted");
    c.attack.targeted = arch_list_from(a.at("targeted"), "attack.targeted");
    c.attack.transfer_victims = arch_list_from(a.at("transfer_victims"), "attack.transfer_victims");
    c.attack.max_pairs = a.at("max_pairs").get<std::size_t>();

    c.baseline.delta_max = j.at("baseline").at("delta_max").get<std::vector<double>>();
    c.baseline.repeats = j.at("baseline").at("repeats").get<std::size_t>();

    const std::string psr = j.at("io").at("psr_aggregation").get<std::string>();
    if (psr != "decibel" && psr != "linear") {
        throw FormatError("io.psr_aggregation: expected \"decibel\" or \"linear\", got \"" + psr + "\"");
    }
    c.io.psr_aggregation = psr == "decibel" ? PsrAggregation::decibel : PsrAggregation::linear;
    c.io.formats.clear();
    for (const json& f : j.at("io").at("formats")) {
        try {
            c.io.formats.push_back(report_format_from_string(f.get<std::string>()));
        } catch (const ContractError& e) {
            throw FormatError(std::string("io.formats: ") + e.what());
        }
    }
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
    return c;
}

std::string kind_name(const json& v)
{
    if (v.is_number_unsigned() || v.is_number_integer()) {
        return "integer";
    }
    if (v.is_number()) {
        return "number";
    }
    return v.type_name();
}

void check_scalar(const json& slot, const json& v, const std::string& key)
{
    bool ok = false;
    std::string expected = slot.type_name();
    if (slot.is_number_unsigned()) {
        ok = v.is_number_unsigned();
        expected = "non-negative integer";
    } else if (slot.is_number()) {
        ok = v.is_number();
    } else if (slot.is_string()) {
        ok = v.is_string();
    } else if (slot.is_boolean()) {
        ok = v.is_boolean();
    }
    if (!ok) {
        throw FormatError(key + ": expected " + expected + ", got " + kind_name(v));
    }
}

void merge_into(json& base, const json& patch, const std::string& path)
{
    if (!patch.is_object()) {
        throw FormatError((path.empty() ? std::string("config") : path) + ": expected object, got " +
                          kind_name(patch));
    }
    for (const auto& [k, v] : patch.items()) {
        const std::string key = path.empty() ? k : path + "." + k;
        if (!base.contains(k)) {
            throw FormatError("unknown config key '" + key + "'");
        }
        json& slot = base[k];
        if (slot.is_object()) {
            merge_into(slot, v, key);
        } else if (slot.is_array()) {
            if (!v.is_array()) {
                throw FormatError(key + ": expected array, got " + kind_name(v));
            }
            // element type follows the default; empty defaults hold numbers
            const json element = slot.empty() ? json(0.0) : slot.front();
            for (std::size_t i = 0; i < v.size(); ++i) {
                check_scalar(element, v[i], key + "[" + std::to_string(i) + "]");
            }
            slot = v;
        } else {
            check_scalar(slot, v, key);
            slot = v;
        }
    }
}

json override_patch(const std::string& text)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw FormatError("override '" + text + "' must look like section.key=value");
    }
    const std::string path = text.substr(0, eq);
    const std::string raw = text.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) {
            throw FormatError("override '" + text + "' has an empty key segment");
        }
        parts.push_back(part);
    }
    json patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        patch = json{{*it, patch}};
    }
    return patch;
}

void validate(const RunConfig& c)
{
    require(c.channel.n_antennas >= 1 && c.channel.n_subcarriers >= 2, "channel needs an antenna and two subcarriers");
    require(c.channel.min_reflectors <= c.channel.max_reflectors, "channel.min_reflectors exceeds max_reflectors");
    require(c.samples_per_spot >= 1, "grid.samples_per_spot must be positive");
    build_grid(c.grid);
    validate(c.train);
    require(c.attack.config.delta_max > 0.0 && c.attack.config.delta_max < 1.0,
            "attack.delta_max must lie in (0, 1)");
    validate(c.attack.config);
    for (double d : c.baseline.delta_max) {
        require(d >= 0.0 && d < 1.0, "baseline.delta_max entries must lie in [0, 1)");
    }
    require(c.baseline.repeats >= 1, "baseline.repeats must be positive");
    require(!c.output_dir.empty(), "output_dir must not be empty");
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot read " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& content)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
}

} // namespace

std::string to_string(ReportFormat format)
{
    switch (format) {
    case ReportFormat::json: return "json";
    case ReportFormat::csv: return "csv";
    case ReportFormat::plotdata: return "plotdata";
    }
    return "?";
}

ReportFormat report_format_from_string(const std::string& text)
{
    if (text == "json") {
        return ReportFormat::json;
    }
    if (text == "csv") {
        return ReportFormat::csv;
    }
    if (text == "plotdata") {
        return ReportFormat::plotdata;
    }
    throw ContractError("unknown report format '" + text + "' (expected json, csv or plotdata)");
}

RunConfig parse_config(std::string_view json_text, std::span<const std::string> overrides)
{
    json merged = config_json(RunConfig{});
    json user;
    try {
        user = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed config: ") + e.what());
    }
    merge_into(merged, user, "");
    for (const std::string& o : overrides) {
        merge_into(merged, override_patch(o), "");
    }
    RunConfig cfg;
    try {
        cfg = config_from(merged);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const fs::path& path, std::span<const std::string> overrides)
{
    if (!fs::exists(path)) {
        throw FormatError("config file not found: " + path.string());
    }
    try {
        return parse_config(read_file(path), overrides);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string canonical_json(const RunConfig& cfg) { return config_json(cfg).dump(); }

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string config_hash(const RunConfig& cfg)
{
    // output_dir does not change any result
    json j = config_json(cfg);
    j.erase("output_dir");
    return hex64(fnv1a64(j.dump()));
}

std::string to_string(Stage stage)
{
    switch (stage) {
    case Stage::synth: return "synth-data";
    case Stage::train: return "train";
    case Stage::attack: return "attack";
    case Stage::transfer: return "transfer";
    case Stage::baseline: return "baseline";
    case Stage::report: return "report";
    case Stage::all: return "all";
    }
    return "?";
}

Stage stage_from_string(const std::string& text)
{
    for (Stage s : {Stage::synth, Stage::train, Stage::attack, Stage::transfer, Stage::baseline, Stage::report,
                    Stage::all}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    throw ContractError("unknown stage '" + text + "'");
}

namespace {

std::string fmt(double v)
{
    if (std::isinf(v)) {
        return v < 0 ? "-inf" : "inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string provenance_comment(const Provenance& p)
{
    return "# config_hash=" + p.config_hash + " master_seed=" + std::to_string(p.master_seed) + "\n";
}

} // namespace

std::string csv_header()
{
    return "experiment,victim,substitute,omega,delta_max,rows,mean_asr_before,mean_asr_after,mean_psr_db,"
           "le_p50_before,le_p50_after,le_q50_before,le_q50_after,already_in_target";
}

std::string plotdata_header() { return "experiment,victim,pair_id,x,y,label"; }

std::string render_report(std::span<const ExperimentReport> reports, ReportFormat format,
                          const Provenance& provenance)
{
    std::string out;
    switch (format) {
    case ReportFormat::json:
        for (const ExperimentReport& r : reports) {
            out += summary_to_json(r, provenance) + "\n";
        }
        break;
    case ReportFormat::csv:
        out = provenance_comment(provenance) + csv_header() + "\n";
        for (const ExperimentReport& r : reports) {
            const ReportSummary& s = r.summary;
            out += r.experiment + "," + r.victim + "," + r.substitute.value_or("") + "," + std::to_string(r.omega) +
                   "," + fmt(r.delta_max) + "," + std::to_string(s.rows) + "," + fmt(s.mean_asr_before) + "," +
                   fmt(s.mean_asr_after) + "," + fmt(s.mean_psr_db) + "," + fmt(s.le_p50_before) + "," +
                   fmt(s.le_p50_after) + "," + (s.le_q50_before ? fmt(*s.le_q50_before) : "") + "," +
                   (s.le_q50_after ? fmt(*s.le_q50_after) : "") + "," + std::to_string(s.already_in_target) + "\n";
        }
        break;
    case ReportFormat::plotdata:
        out = provenance_comment(provenance) + plotdata_header() + "\n";
        for (const ExperimentReport& r : reports) {
            for (const ReportRow& row : r.rows) {
                const std::string prefix = r.experiment + "," + r.victim + "," + row.pair_id + ",";
                for (const Point2& p : row.predictions_before) {
                    out += prefix + fmt(p.x) + "," + fmt(p.y) + ",before\n";
                }
                const std::string label = row.omega == 0 ? ",targeted\n" : ",untargeted\n";
                for (const Point2& p : row.predictions_after) {
                    out += prefix + fmt(p.x) + "," + fmt(p.y) + label;
                }
            }
        }
        break;
    }
    return out;
}

namespace {

std::string stamped_name(const std::string& stem, const std::string& ext, const std::string& content)
{
    return stem + "." + hex64(fnv1a64(content)).substr(0, 12) + ext;
}

std::string stem_of(ReportFormat f)
{
    switch (f) {
    case ReportFormat::json: return "summary";
    case ReportFormat::csv: return "table";
    case ReportFormat::plotdata: return "scatter";
    }
    return "";
}

std::string ext_of(ReportFormat f)
{
    switch (f) {
    case ReportFormat::json: return ".jsonl";
    case ReportFormat::csv: return ".csv";
    case ReportFormat::plotdata: return ".plot.csv";
    }
    return "";
}

} // namespace

fs::path emit_report(std::span<const ExperimentReport> reports, ReportFormat format, const fs::path& dir,
                     const Provenance& provenance)
{
    const std::string content = render_report(reports, format, provenance);
    const fs::path path = dir / stamped_name(stem_of(format), ext_of(format), content);
    write_file(path, content);
    return path;
}

namespace {

const char* kManifest = "manifest.json";

class Workspace {
public:
    Workspace(const RunConfig& cfg, const PipelineOptions& opts)
      : cfg_(cfg)
      , opts_(opts)
      , root_(cfg.output_dir)
      , provenance_{config_hash(cfg), cfg.master_seed}
    {
        fs::create_directories(root_);
        if (fs::exists(root_ / kManifest)) {
            try {
                manifest_ = json::parse(read_file(root_ / kManifest));
            } catch (const json::exception& e) {
                throw FormatError("corrupt manifest: " + std::string(e.what()));
            }
        }
        if (!manifest_.contains("stages")) {
            manifest_["stages"] = json::object();
        }
        hashes_["synth-data"] = section_hash("", {"channel", "grid"});
        hashes_["train"] = section_hash(hashes_["synth-data"], {"train"});
        hashes_["attack"] = section_hash(hashes_["train"], {"attack", "io"});
        hashes_["transfer"] = hashes_["attack"];
        hashes_["baseline"] = section_hash(hashes_["train"], {"baseline", "io"});
    }

    const RunConfig& cfg() const { return cfg_; }
    const Provenance& provenance() const { return provenance_; }

    void log(const std::string& line) const
    {
        if (opts_.log) {
            opts_.log(line);
        }
    }

    RunOptions run_options(std::uint64_t stream) const
    {
        RunOptions o;
        o.jobs = opts_.jobs;
        o.seed = mix_seed(cfg_.master_seed, stream);
        o.psr_aggregation = cfg_.io.psr_aggregation;
        o.log = opts_.log;
        return o;
    }

    bool fresh(const std::string& stage) const
    {
        const json& stages = manifest_.at("stages");
        return stages.contains(stage) && stages.at(stage).at("hash").get<std::string>() == hashes_.at(stage);
    }

    /// Throws unless the upstream stage ran under the current settings and its files exist.
    void require_stage(const std::string& needed, const std::string& by) const
    {
        const json& stages = manifest_.at("stages");
        if (!stages.contains(needed)) {
            throw StageDependencyError("stage '" + by + "' requires stage '" + needed + "' to run first in " +
                                       root_.string());
        }
        if (!fresh(needed)) {
            throw StageDependencyError("stage '" + by + "' requires stage '" + needed +
                                       "', but its artifacts were produced with different settings; rerun '" +
                                       needed + "'");
        }
        for (const auto& [name, rel] : stages.at(needed).at("artifacts").items()) {
            if (!fs::exists(root_ / rel.get<std::string>())) {
                throw StageDependencyError("stage '" + by + "' requires stage '" + needed + "': missing artifact " +
                                           rel.get<std::string>());
            }
        }
    }

    fs::path artifact(const std::string& stage, const std::string& name) const
    {
        const json& a = manifest_.at("stages").at(stage).at("artifacts");
        if (!a.contains(name)) {
            throw StageDependencyError("stage '" + stage + "' did not produce '" + name +
                                       "'; rerun it with the current settings");
        }
        return root_ / a.at(name).get<std::string>();
    }

    std::vector<std::string> artifact_names(const std::string& stage, const std::string& prefix) const
    {
        std::vector<std::string> out;
        const json& stages = manifest_.at("stages");
        if (!stages.contains(stage)) {
            return out;
        }
        for (const auto& [name, rel] : stages.at(stage).at("artifacts").items()) {
            if (name.rfind(prefix, 0) == 0) {
                out.push_back(name);
            }
        }
        return out;
    }

    void begin(const std::string& stage) { pending_ = json::object(); current_ = stage; }

    fs::path put(const std::string& name, const std::string& subdir, const std::string& stem, const std::string& ext,
                 const std::string& content)
    {
        const fs::path rel = fs::path(subdir) / stamped_name(stem, ext, content);
        write_file(root_ / rel, content);
        pending_[name] = rel.generic_string();
        return root_ / rel;
    }

    void put_model(const std::string& name, const LocalizationModel& model)
    {
        const fs::path tmp = root_ / "models" / (name + ".partial");
        fs::create_directories(tmp.parent_path());
        save_model(tmp, model, provenance_);
        const std::string bytes = read_file(tmp);
        const fs::path rel = fs::path("models") / stamped_name(name, ".model", bytes);
        fs::rename(tmp, root_ / rel);
        pending_[name] = rel.generic_string();
    }

    void commit()
    {
        json entry = {{"hash", hashes_.count(current_) ? hashes_.at(current_) : std::string()},
                      {"config_hash", provenance_.config_hash},
                      {"master_seed", provenance_.master_seed},
                      {"artifacts", pending_}};
        manifest_["stages"][current_] = entry;
        manifest_["config_hash"] = provenance_.config_hash;
        manifest_["master_seed"] = provenance_.master_seed;
        write_file(root_ / kManifest, manifest_.dump(2) + "\n");
        log(current_ + ": wrote " + std::to_string(pending_.size()) + " artifacts");
    }

private:
    std::string section_hash(const std::string& upstream, std::initializer_list<const char*> sections) const
    {
        const json full = config_json(cfg_);
        json j = {{"upstream", upstream}, {"master_seed", cfg_.master_seed}};
        for (const char* s : sections) {
            j[s] = full.at(s);
        }
        return hex64(fnv1a64(j.dump()));
    }

    const RunConfig& cfg_;
    const PipelineOptions& opts_;
    fs::path root_;
    Provenance provenance_;
    json manifest_;
    std::map<std::string, std::string> hashes_;
    json pending_;
    std::string current_;
};

constexpr std::uint64_t kSynthStream = 1;

std::uint64_t arch_stream(std::uint64_t base, Arch arch) { return base + (arch == Arch::dnn_a ? 0 : 1); }

Arch other(Arch a) { return a == Arch::dnn_a ? Arch::dnn_b : Arch::dnn_a; }

std::string role_jsonl(const RoleDataset& d, const Provenance& prov)
{
    std::string out;
    for (const DatasetRecord& r : d.records()) {
        out += dataset_record_to_json(r, prov);
        out += '\n';
    }
    return out;
}

ExperimentData load_data(const Workspace& ws, bool with_a)
{
    ExperimentData data;
    data.grid = build_grid(ws.cfg().grid);
    const auto load = [&](DatasetRole role) {
        const std::vector<DatasetRecord> records = read_dataset(ws.artifact("synth-data", to_string(role)));
        return role_dataset_from_records(role, records);
    };
    if (with_a) {
        data.d_a = load(DatasetRole::d_a);
    }
    data.d_b = load(DatasetRole::d_b);
    data.d_c = load(DatasetRole::d_c);
    return data;
}

LocalizationModel load_victim(const Workspace& ws, Arch arch)
{
    Provenance prov;
    LocalizationModel m = load_model(ws.artifact("train", to_string(arch)), &prov);
    if (prov.config_hash.empty()) {
        throw FormatError("model " + to_string(arch) + " carries no provenance");
    }
    return m;
}

std::string thresholds_json(const Thresholds& t, const Provenance& prov)
{
    json j = {{"global_p90", t.global_p90}, {"ball_radius", t.ball_radius}, {"d_max", t.d_max},
              {"spot_p90", t.spot_p90},     {"d_min", t.d_min},             {"config_hash", prov.config_hash},
              {"master_seed", prov.master_seed}};
    return j.dump() + "\n";
}

void put_run(Workspace& ws, const std::string& name, const AttackRun& run, const AttackConfig& cfg)
{
    ws.put("report:" + name, "reports", name, ".jsonl", report_to_jsonl(run.report, ws.provenance()));
    std::string perts;
    for (std::size_t i = 0; i < run.perturbations.size(); ++i) {
        AttackConfig used = cfg;
        used.d_max = run.report.rows[i].d_max;
        used.d_min = run.report.rows[i].d_min;
        used.seed = run.perturbations[i].seed;
        perts += perturbation_to_json(run.perturbations[i], used, ws.provenance()) + "\n";
    }
    ws.put("perturbations:" + name, "perturbations", name, ".jsonl", perts);
    const ReportSummary& s = run.report.summary;
    ws.log(name + ": asr " + fmt(s.mean_asr_before) + " -> " + fmt(s.mean_asr_after) + ", psr " + fmt(s.mean_psr_db) +
           " dB over " + std::to_string(s.rows) + " rows");
}

void stage_synth(Workspace& ws)
{
    const RunConfig& cfg = ws.cfg();
    ws.begin("synth-data");
    const SpotGrid grid = build_grid(cfg.grid);
    ws.log("synth-data: " + std::to_string(grid.a_spots.size()) + " A-spots, " + std::to_string(grid.b_spots.size()) +
           " B-spots, " + std::to_string(cfg.samples_per_spot) + " samples per spot and link");
    const ExperimentData data =
        synthesize_datasets(grid, cfg.channel, cfg.samples_per_spot, mix_seed(cfg.master_seed, kSynthStream));
    for (const RoleDataset* d : {&data.d_a, &data.d_b, &data.d_c}) {
        ws.put(to_string(d->role), "datasets", to_string(d->role), ".jsonl", role_jsonl(*d, ws.provenance()));
    }
    const json stamped = {{"config_hash", ws.provenance().config_hash},
                          {"master_seed", ws.provenance().master_seed},
                          {"config", json::parse(canonical_json(cfg))}};
    ws.put("config", "", "config", ".json", stamped.dump(2) + "\n");
    ws.commit();
}

LocalizationModel train_logged(const Workspace& ws, Arch arch, const RoleDataset& data, std::uint64_t stream,
                               const std::string& label, json& summary)
{
    TrainConfig t = ws.cfg().train;
    t.seed = mix_seed(ws.cfg().master_seed, stream);
    TrainReport report;
    const std::vector<DatasetRecord> records = data.records();
    LocalizationModel m = train_localizer(arch, records, t, ws.cfg().grid.area, &report, [&](const EpochStats& e) {
        ws.log(label + " epoch " + std::to_string(e.epoch) + ": loss " + fmt(e.train_loss) + ", validation median " +
               fmt(e.validation_median) + " m");
    });
    json history = json::array();
    for (const EpochStats& e : report.history) {
        history.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"validation_median", e.validation_median},
                           {"validation_p90", e.validation_p90}});
    }
    summary[label] = {{"arch", to_string(arch)},
                      {"dataset", to_string(data.role)},
                      {"best_epoch", report.best_epoch},
                      {"validation_median", report.best_validation_median},
                      {"validation_p90", report.best_validation_p90},
                      {"history", history}};
    return m;
}

void stage_train(Workspace& ws)
{
    ws.require_stage("synth-data", "train");
    ws.begin("train");
    ExperimentData data;
    data.d_a = role_dataset_from_records(DatasetRole::d_a, read_dataset(ws.artifact("synth-data", "D_A")));
    json summary = {{"config_hash", ws.provenance().config_hash}, {"master_seed", ws.provenance().master_seed}};
    for (Arch arch : {Arch::dnn_a, Arch::dnn_b}) {
        const LocalizationModel m = train_logged(ws, arch, data.d_a, arch_stream(100, arch), to_string(arch), summary);
        ws.put_model(to_string(arch), m);
    }
    ws.put("training", "models", "training", ".json", summary.dump(2) + "\n");
    ws.commit();
}

void stage_attack(Workspace& ws)
{
    ws.require_stage("train", "attack");
    ws.begin("attack");
    const RunConfig& cfg = ws.cfg();
    const ExperimentData data = load_data(ws, false);
    std::vector<Arch> archs = cfg.attack.untargeted;
    archs.insert(archs.end(), cfg.attack.targeted.begin(), cfg.attack.targeted.end());
    std::sort(archs.begin(), archs.end());
    archs.erase(std::unique(archs.begin(), archs.end()), archs.end());
    for (Arch arch : archs) {
        const LocalizationModel model = load_victim(ws, arch);
        const Thresholds t = selection_thresholds(data.grid, model, data.d_c);
        ws.put("thresholds:" + to_string(arch), "reports", "thresholds_" + to_string(arch), ".json",
               thresholds_json(t, ws.provenance()));
        ws.log(to_string(arch) + ": global p90 " + fmt(t.global_p90) + " m, ball radius " + fmt(t.ball_radius) + " m");
        if (std::count(cfg.attack.untargeted.begin(), cfg.attack.untargeted.end(), arch)) {
            const AttackRun run = run_whitebox(model, data, t, {}, 1, cfg.attack.config,
                                               ws.run_options(arch_stream(200, arch)));
            put_run(ws, "whitebox_untargeted_" + to_string(arch), run, cfg.attack.config);
        }
        if (std::count(cfg.attack.targeted.begin(), cfg.attack.targeted.end(), arch)) {
            TargetSelection sel = select_targets(data.grid, t);
            for (std::size_t s : sel.skipped) {
                ws.log("warning: " + data.grid.b_ids[s] + " has no B-spot outside the " + fmt(t.ball_radius) +
                       " m ball; skipped");
            }
            if (cfg.attack.max_pairs > 0 && sel.pairs.size() > cfg.attack.max_pairs) {
                sel.pairs.resize(cfg.attack.max_pairs);
            }
            if (sel.pairs.empty()) {
                ws.log("warning: no targeted pairs for " + to_string(arch));
                continue;
            }
            const AttackRun run = run_whitebox(model, data, t, sel.pairs, 0, cfg.attack.config,
                                               ws.run_options(arch_stream(300, arch)));
            put_run(ws, "whitebox_targeted_" + to_string(arch), run, cfg.attack.config);
        }
    }
    ws.commit();
}

void stage_transfer(Workspace& ws)
{
    ws.require_stage("train", "transfer");
    ws.begin("transfer");
    const RunConfig& cfg = ws.cfg();
    const ExperimentData data = load_data(ws, false);
    json summary = {{"config_hash", ws.provenance().config_hash}, {"master_seed", ws.provenance().master_seed}};
    for (Arch victim_arch : cfg.attack.transfer_victims) {
        const Arch sub_arch = other(victim_arch);
        const std::string label = "substitute_" + to_string(sub_arch);
        const LocalizationModel substitute =
            train_logged(ws, sub_arch, data.d_b, arch_stream(400, sub_arch), label, summary);
        ws.put_model(label, substitute);
        const LocalizationModel victim = load_victim(ws, victim_arch);
        const Thresholds t = selection_thresholds(data.grid, victim, data.d_c);
        const AttackRun run = run_transfer(victim, substitute, data, t, cfg.attack.config,
                                           ws.run_options(arch_stream(500, victim_arch)));
        put_run(ws, "transfer_" + to_string(sub_arch) + "_to_" + to_string(victim_arch), run, cfg.attack.config);
    }
    ws.put("training", "models", "substitutes", ".json", summary.dump(2) + "\n");
    ws.commit();
}

void stage_baseline(Workspace& ws)
{
    ws.require_stage("train", "baseline");
    ws.begin("baseline");
    const RunConfig& cfg = ws.cfg();
    const ExperimentData data = load_data(ws, false);
    std::vector<Arch> victims = cfg.attack.untargeted;
    victims.insert(victims.end(), cfg.attack.transfer_victims.begin(), cfg.attack.transfer_victims.end());
    std::sort(victims.begin(), victims.end());
    victims.erase(std::unique(victims.begin(), victims.end()), victims.end());
    for (Arch arch : victims) {
        const LocalizationModel victim = load_victim(ws, arch);
        const Thresholds t = selection_thresholds(data.grid, victim, data.d_c);
        for (std::size_t i = 0; i < cfg.baseline.delta_max.size(); ++i) {
            const double delta = cfg.baseline.delta_max[i];
            const ExperimentReport rep = run_random_baseline(victim, data, t, delta, cfg.baseline.repeats,
                                                             ws.run_options(arch_stream(600 + 2 * i, arch)));
            char name[64];
            std::snprintf(name, sizeof name, "baseline_%03d_%s", static_cast<int>(std::lround(delta * 100)),
                          to_string(arch).c_str());
            ws.put(std::string("report:") + name, "reports", name, ".jsonl",
                   report_to_jsonl(rep, ws.provenance()));
        }
    }
    ws.commit();
}

std::vector<ExperimentReport> collect_reports(const Workspace& ws, bool fresh_only)
{
    std::vector<ExperimentReport> out;
    for (const char* stage : {"attack", "transfer", "baseline"}) {
        if (fresh_only && !ws.fresh(stage)) {
            continue;
        }
        for (const std::string& name : ws.artifact_names(stage, "report:")) {
            out.push_back(report_from_jsonl(read_file(ws.artifact(stage, name))));
        }
    }
    return out;
}

void stage_report(Workspace& ws)
{
    ws.require_stage("attack", "report");
    ws.begin("report");
    for (const char* optional : {"transfer", "baseline"}) {
        if (!ws.fresh(optional)) {
            ws.log(std::string("report: no current '") + optional + "' results; omitted");
        }
    }
    const std::vector<ExperimentReport> reports = collect_reports(ws, true);
    for (ReportFormat f : ws.cfg().io.formats) {
        ws.put(to_string(f), "report", stem_of(f), ext_of(f), render_report(reports, f, ws.provenance()));
    }
    for (const ExperimentReport& r : reports) {
        ws.log(r.experiment + " " + r.victim + (r.substitute ? " (substitute " + *r.substitute + ")" : "") +
               ": ASR " + fmt(r.summary.mean_asr_after) + ", PSR " + format_psr(r.summary.mean_psr_db));
    }
    ws.commit();
}

} // namespace

void run_pipeline(const RunConfig& cfg, Stage stage, const PipelineOptions& opts)
{
    validate(cfg);
    Workspace ws(cfg, opts);
    switch (stage) {
    case Stage::synth: stage_synth(ws); break;
    case Stage::train: stage_train(ws); break;
    case Stage::attack: stage_attack(ws); break;
    case Stage::transfer: stage_transfer(ws); break;
    case Stage::baseline: stage_baseline(ws); break;
    case Stage::report: stage_report(ws); break;
    case Stage::all:
        stage_synth(ws);
        stage_train(ws);
        stage_attack(ws);
        stage_transfer(ws);
        stage_baseline(ws);
        stage_report(ws);
        break;
    }
}

std::vector<ExperimentReport> load_reports(const fs::path& output_dir)
{
    if (!fs::exists(output_dir / kManifest)) {
        throw StageDependencyError("no manifest in " + output_dir.string() + "; run the pipeline first");
    }
    const json manifest = json::parse(read_file(output_dir / kManifest));
    std::vector<ExperimentReport> out;
    for (const char* stage : {"attack", "transfer", "baseline"}) {
        if (!manifest.at("stages").contains(stage)) {
            continue;
        }
        for (const auto& [name, rel] : manifest.at("stages").at(stage).at("artifacts").items()) {
            if (name.rfind("report:", 0) == 0) {
                out.push_back(report_from_jsonl(read_file(output_dir / rel.get<std::string>())));
            }
        }
    }
    return out;
}

} // namespace fooloc
