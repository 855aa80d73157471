// Command-line front end for the simulator pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"
#include "fooloc/pipeline.hpp"

namespace {

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw fooloc::FormatError("config file not found: " + path);
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool mentions_output_dir(const std::string& config_text, const std::vector<std::string>& sets)
{
    for (const std::string& s : sets) {
        if (s.rfind("output_dir=", 0) == 0) {
            return true;
        }
    }
    const nlohmann::json j = nlohmann::json::parse(config_text, nullptr, false);
    return !j.is_discarded() && j.is_object() && j.contains("output_dir");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Over-the-air adversarial attack simulator for CSI fingerprint localization"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t jobs = 1;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON config file; missing keys take their defaults");
    app.add_option("--set", sets, "override a setting, e.g. --set attack.beta=0.5")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out, "output directory; beats output_dir in the config, which beats $FOOLOC_SIM_OUT");
    app.add_option("--jobs", jobs, "worker threads for attack jobs")->check(CLI::PositiveNumber);
    app.add_flag("-q,--quiet", quiet, "suppress progress lines");

    std::vector<std::string> formats;
    const std::vector<std::pair<std::string, std::string>> stages{
        {"synth-data", "synthesize D_A, D_B and D_C datasets"},
        {"train", "train DNN_A and DNN_B on D_A"},
        {"attack", "white-box untargeted and targeted attacks"},
        {"transfer", "black-box transfer through a substitute trained on D_B"},
        {"baseline", "random multiplicative baselines"},
        {"report", "summary, table and scatter outputs"},
        {"all", "every stage in order"},
    };
    for (const auto& [name, help] : stages) {
        CLI::App* sub = app.add_subcommand(name, help);
        if (name == "report") {
            sub->add_option("--format", formats, "json, csv or plotdata (repeatable)")
                ->expected(1)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                ->check(CLI::IsMember({"json", "csv", "plotdata"}));
        }
    }

    CLI11_PARSE(app, argc, argv);

    const std::string stage_name = app.get_subcommands().front()->get_name();
    try {
        const std::string config_text = config_path.empty() ? std::string("{}") : slurp(config_path);
        std::vector<std::string> overrides;
        if (const char* env = std::getenv("FOOLOC_SIM_OUT"); env && *env && !mentions_output_dir(config_text, sets)) {
            overrides.push_back("output_dir=" + nlohmann::json(std::string(env)).dump());
        }
        overrides.insert(overrides.end(), sets.begin(), sets.end());
        if (seed) {
            overrides.push_back("master_seed=" + std::to_string(*seed));
        }
        if (!out.empty()) {
            overrides.push_back("output_dir=" + nlohmann::json(out).dump());
        }
        if (!formats.empty()) {
            overrides.push_back("io.formats=" + nlohmann::json(formats).dump());
        }
        fooloc::RunConfig cfg;
        try {
            cfg = fooloc::parse_config(config_text, overrides);
        } catch (const fooloc::FormatError& e) {
            throw fooloc::FormatError((config_path.empty() ? std::string("config") : config_path) + ": " + e.what());
        }

        fooloc::PipelineOptions opts;
        opts.jobs = jobs;
        if (!quiet) {
            opts.log = [](const std::string& line) { std::cerr << "[fooloc] " << line << std::endl; };
            std::cerr << "[fooloc] config " << fooloc::config_hash(cfg) << ", seed " << cfg.master_seed << ", out "
                      << cfg.output_dir << std::endl;
        }
        fooloc::run_pipeline(cfg, fooloc::stage_from_string(stage_name), opts);
    } catch (const std::exception& e) {
        std::cerr << "fooloc_sim " << stage_name << ": error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
