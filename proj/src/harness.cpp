#include "fooloc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"

namespace fooloc {

namespace {

constexpr double kTieTolerance = 1e-9;

std::string spot_label(char prefix, std::size_t i, std::size_t j)
{
    return std::string(1, prefix) + std::to_string(i) + "_" + std::to_string(j);
}

std::vector<double> errors_to(std::span<const Point2> preds, const Point2& truth)
{
    std::vector<double> e;
    e.reserve(preds.size());
    for (const Point2& p : preds) {
        e.push_back(localization_error(p, truth));
    }
    return e;
}

void require_role(const RoleDataset& d, DatasetRole role, const SpotGrid& grid)
{
    require(d.role == role, "dataset role mismatch: expected " + to_string(role) + ", got " + to_string(d.role));
    require(!d.spots.empty(), "dataset role " + to_string(role) + " is empty");
    if (role != DatasetRole::d_a) {
        require(d.spots.size() == grid.b_spots.size(), "dataset role " + to_string(role) + " must cover every B-spot");
    }
}

void log_line(const RunOptions& opts, const std::string& line)
{
    if (opts.log) {
        opts.log(line);
    }
}

std::string fixed(double v, int digits = 3)
{
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

} // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task)
{
    const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            task(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                    next = count;
                }
            }
        });
    }
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

SpotGrid build_grid(const GridConfig& cfg)
{
    require(cfg.spacing > 0.0, "grid spacing must be positive");
    require(cfg.nx > 0 && cfg.ny > 0, "grid counts must be positive");
    require(cfg.area.width() > 0.0 && cfg.area.height() > 0.0, "grid area must be nonempty");
    require(cfg.offset_fraction >= 0.0 && cfg.offset_fraction < 1.0, "offset fraction must be in [0, 1)");
    const Point2 last{cfg.origin.x + cfg.spacing * static_cast<double>(cfg.nx - 1),
                      cfg.origin.y + cfg.spacing * static_cast<double>(cfg.ny - 1)};
    require(cfg.area.contains(cfg.origin) && cfg.area.contains(last), "grid does not fit in the area");

    SpotGrid g;
    g.spacing = cfg.spacing;
    g.ap_location = cfg.ap_location;
    g.area = cfg.area;
    const double shift = cfg.offset_fraction * cfg.spacing;
    for (std::size_t i = 0; i < cfg.nx; ++i) {
        for (std::size_t j = 0; j < cfg.ny; ++j) {
            const Point2 a{cfg.origin.x + cfg.spacing * static_cast<double>(i),
                           cfg.origin.y + cfg.spacing * static_cast<double>(j)};
            g.a_spots.push_back(a);
            g.a_ids.push_back(spot_label('A', i, j));
            g.b_spots.push_back(cfg.area.clip({a.x + shift, a.y + shift}));
            g.b_ids.push_back(spot_label('B', i, j));
        }
    }
    for (std::size_t i = 0; i < g.b_spots.size(); ++i) {
        for (std::size_t j = i + 1; j < g.b_spots.size(); ++j) {
            require(distance(g.b_spots[i], g.b_spots[j]) > kTieTolerance,
                    "clipping merged B-spots " + g.b_ids[i] + " and " + g.b_ids[j]);
        }
    }
    return g;
}

std::string to_string(DatasetRole role)
{
    switch (role) {
    case DatasetRole::d_a: return "D_A";
    case DatasetRole::d_b: return "D_B";
    case DatasetRole::d_c: return "D_C";
    }
    return "?";
}

DatasetRole role_from_string(const std::string& text)
{
    if (text == "D_A") {
        return DatasetRole::d_a;
    }
    if (text == "D_B") {
        return DatasetRole::d_b;
    }
    if (text == "D_C") {
        return DatasetRole::d_c;
    }
    throw FormatError("unknown dataset role: " + text);
}

std::vector<DatasetRecord> RoleDataset::records() const
{
    std::vector<DatasetRecord> out;
    for (const SpotSamples& s : spots) {
        for (const AmplitudeSample& x : s.samples) {
            out.push_back({x, s.location, {}});
        }
    }
    return out;
}

const SpotSamples& RoleDataset::spot(const std::string& id) const
{
    for (const SpotSamples& s : spots) {
        if (s.spot_id == id) {
            return s;
        }
    }
    throw ContractError("spot " + id + " missing from " + to_string(role));
}

RoleDataset role_dataset_from_records(DatasetRole role, std::span<const DatasetRecord> records)
{
    const Link expected = role == DatasetRole::d_b ? Link::down : Link::up;
    RoleDataset d{role, {}};
    for (const DatasetRecord& r : records) {
        require(r.sample.link == expected, "record of spot " + r.sample.spot_id + " has the wrong link for " +
                                               to_string(role));
        auto it = std::find_if(d.spots.begin(), d.spots.end(),
                               [&](const SpotSamples& s) { return s.spot_id == r.sample.spot_id; });
        if (it == d.spots.end()) {
            d.spots.push_back({r.sample.spot_id, r.location, {}});
            it = d.spots.end() - 1;
        }
        require(it->location == r.location, "spot " + r.sample.spot_id + " has inconsistent locations");
        it->samples.push_back(r.sample);
    }
    return d;
}

ExperimentData synthesize_datasets(const SpotGrid& grid, const ChannelParams& params, std::size_t samples_per_spot,
                                   std::uint64_t seed)
{
    require(samples_per_spot > 0, "samples per spot must be positive");
    ExperimentData data;
    data.grid = grid;
    const auto features = [](const std::vector<CsiMeasurement>& ms) {
        std::vector<AmplitudeSample> out;
        out.reserve(ms.size());
        for (const CsiMeasurement& m : ms) {
            out.push_back(amplitude_features(m));
        }
        return out;
    };
    for (std::size_t i = 0; i < grid.a_spots.size(); ++i) {
        const SpotEnvironment env = synth_environment(grid.a_spots[i], grid.ap_location, seed, params);
        Rng rng(mix_seed(seed, 2 * i));
        const LinkPairSamples s = sample_link_pair(env, samples_per_spot, 0, rng, grid.a_ids[i]);
        data.d_a.spots.push_back({grid.a_ids[i], grid.a_spots[i], features(s.uplink)});
    }
    for (std::size_t i = 0; i < grid.b_spots.size(); ++i) {
        const SpotEnvironment env = synth_environment(grid.b_spots[i], grid.ap_location, seed, params);
        Rng rng(mix_seed(seed, 2 * i + 1));
        const LinkPairSamples s = sample_link_pair(env, samples_per_spot, samples_per_spot, rng, grid.b_ids[i]);
        data.d_b.spots.push_back({grid.b_ids[i], grid.b_spots[i], features(s.downlink)});
        data.d_c.spots.push_back({grid.b_ids[i], grid.b_spots[i], features(s.uplink)});
    }
    return data;
}

Thresholds selection_thresholds(const SpotGrid& grid, std::span<const std::vector<Point2>> predictions)
{
    require(predictions.size() == grid.b_spots.size(), "need predictions for every B-spot");
    Thresholds t;
    std::vector<double> pooled;
    const double half = grid.spacing / 2.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        require(!predictions[i].empty(), "no predictions for " + grid.b_ids[i]);
        const std::vector<double> e = errors_to(predictions[i], grid.b_spots[i]);
        t.spot_p90.push_back(percentile(e, 90.0));
        t.d_min.push_back(t.spot_p90.back() + half);
        pooled.insert(pooled.end(), e.begin(), e.end());
    }
    t.global_p90 = percentile(std::move(pooled), 90.0);
    t.ball_radius = t.global_p90 + half;
    t.d_max = half;
    return t;
}

Thresholds selection_thresholds(const SpotGrid& grid, const LocalizationModel& model, const RoleDataset& eval)
{
    require_role(eval, DatasetRole::d_c, grid);
    std::vector<std::vector<Point2>> preds;
    for (std::size_t i = 0; i < grid.b_spots.size(); ++i) {
        preds.push_back(predict_batch(model, eval.spot(grid.b_ids[i]).samples));
    }
    return selection_thresholds(grid, preds);
}

TargetSelection select_targets(const SpotGrid& grid, const Thresholds& thresholds)
{
    require(thresholds.d_min.size() == grid.b_spots.size(), "thresholds do not match the grid");
    require(thresholds.d_max > 0.0, "d_max must be positive");
    TargetSelection sel;
    const std::size_t n = grid.b_spots.size();
    for (std::size_t p = 0; p < n; ++p) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < n; ++q) {
            const double d = distance(grid.b_spots[p], grid.b_spots[q]);
            if (d > thresholds.ball_radius) {
                nearest = std::min(nearest, d);
            }
        }
        if (std::isinf(nearest)) {
            sel.skipped.push_back(p);
            continue;
        }
        for (std::size_t q = 0; q < n; ++q) {
            const double d = distance(grid.b_spots[p], grid.b_spots[q]);
            if (d > thresholds.ball_radius && d <= nearest + kTieTolerance) {
                sel.pairs.push_back({p, q, grid.b_spots[p], grid.b_spots[q], thresholds.d_max, thresholds.d_min[p]});
            }
        }
    }
    return sel;
}

ReportRow evaluate_perturbation(const LocalizationModel& victim, std::span<const double> gamma,
                                const SpotSamples& uplink, const Point2& p, std::optional<Point2> q, int omega,
                                double d_max, double d_min, PsrAggregation aggregation)
{
    require(omega == 0 || omega == 1, "omega must be 0 or 1");
    require(omega == 1 || q.has_value(), "targeted rows need a target");
    require(!uplink.samples.empty(), "no uplink samples at " + uplink.spot_id);
    require(gamma.size() == victim.n_subcarriers, "gamma length must equal the subcarrier count");

    AttackOutcome after;
    after.genuine = p;
    after.target = q;
    after.d_max = d_max;
    after.d_min = d_min;
    after.original = uplink.samples;
    after.perturbed.reserve(uplink.samples.size());
    for (const AmplitudeSample& x : uplink.samples) {
        after.perturbed.push_back(apply_perturbation(gamma, x));
    }
    after.predictions = predict_batch(victim, after.perturbed);
    AttackOutcome before = after;
    before.perturbed = before.original;
    before.predictions = predict_batch(victim, before.original);

    ReportRow row;
    row.p_id = uplink.spot_id;
    row.p = p;
    row.q = q;
    row.omega = omega;
    row.d_max = d_max;
    row.d_min = d_min;
    row.le_p_before = summarize_errors(before.predictions, p);
    row.le_p_after = summarize_errors(after.predictions, p);
    if (q) {
        row.le_q_before = summarize_errors(before.predictions, *q);
        row.le_q_after = summarize_errors(after.predictions, *q);
    }
    row.asr_before = attack_success_rate(before, omega);
    row.asr_after = attack_success_rate(after, omega);
    row.already_in_target = static_cast<std::size_t>(std::lround(row.asr_before * before.predictions.size()));
    row.psr_db = mean_psr(after, aggregation);
    row.gamma.assign(gamma.begin(), gamma.end());
    row.predictions_before = std::move(before.predictions);
    row.predictions_after = std::move(after.predictions);
    return row;
}

ReportSummary summarize(std::span<const ReportRow> rows, PsrAggregation aggregation)
{
    ReportSummary s;
    s.rows = rows.size();
    if (rows.empty()) {
        return s;
    }
    std::vector<double> psr, ep_before, ep_after, eq_before, eq_after;
    bool targeted = true;
    for (const ReportRow& r : rows) {
        s.mean_asr_before += r.asr_before;
        s.mean_asr_after += r.asr_after;
        s.already_in_target += r.already_in_target;
        psr.push_back(r.psr_db);
        const auto add = [](std::vector<double>& into, std::span<const Point2> preds, const Point2& truth) {
            const std::vector<double> e = errors_to(preds, truth);
            into.insert(into.end(), e.begin(), e.end());
        };
        add(ep_before, r.predictions_before, r.p);
        add(ep_after, r.predictions_after, r.p);
        if (r.q) {
            add(eq_before, r.predictions_before, *r.q);
            add(eq_after, r.predictions_after, *r.q);
        } else {
            targeted = false;
        }
    }
    const double n = static_cast<double>(rows.size());
    s.mean_asr_before /= n;
    s.mean_asr_after /= n;
    s.mean_psr_db = aggregate_psr(psr, aggregation);
    if (!ep_before.empty()) {
        s.le_p50_before = percentile(ep_before, 50.0);
        s.le_p50_after = percentile(ep_after, 50.0);
    }
    if (targeted && !eq_before.empty()) {
        s.le_q50_before = percentile(eq_before, 50.0);
        s.le_q50_after = percentile(eq_after, 50.0);
    }
    return s;
}

namespace {

struct AttackTask {
    std::size_t genuine = 0;
    std::optional<std::size_t> target;
    double d_max = 0.0;
    double d_min = 0.0;
};

AttackRun run_attacks(const std::string& experiment, const LocalizationModel& optimize_on,
                      const LocalizationModel& victim, const ExperimentData& data, std::span<const AttackTask> tasks,
                      int omega, const AttackConfig& cfg, const RunOptions& opts, std::uint64_t stream_base)
{
    validate(cfg);
    require_role(data.d_b, DatasetRole::d_b, data.grid);
    require_role(data.d_c, DatasetRole::d_c, data.grid);
    const SpotGrid& grid = data.grid;

    std::vector<ReportRow> rows(tasks.size());
    std::vector<Perturbation> perts(tasks.size());
    std::mutex log_mutex;
    parallel_for(tasks.size(), opts.jobs, [&](std::size_t i) {
        const AttackTask& t = tasks[i];
        const std::string& p_id = grid.b_ids[t.genuine];
        const Point2 p = grid.b_spots[t.genuine];
        const std::optional<Point2> q = t.target ? std::optional(grid.b_spots[*t.target]) : std::nullopt;

        AttackConfig local = cfg;
        local.seed = mix_seed(opts.seed, stream_base + i);
        local.d_max = t.d_max;
        local.d_min = t.d_min;
        // optimized on downlink D_B only; D_C is reserved for scoring
        Perturbation pert = optimize_perturbation(optimize_on, data.d_b.spot(p_id).samples, p, q, omega, local);
        pert.spot_id = p_id;
        if (t.target) {
            pert.target_spot_id = grid.b_ids[*t.target];
        }
        ReportRow row = evaluate_perturbation(victim, pert.gamma, data.d_c.spot(p_id), p, q, omega, t.d_max,
                                              t.d_min, opts.psr_aggregation);
        row.pair_id = t.target ? p_id + "->" + grid.b_ids[*t.target] : p_id;
        row.q_id = pert.target_spot_id;
        row.seed = local.seed;
        if (opts.log) {
            std::lock_guard lock(log_mutex);
            opts.log(experiment + " " + row.pair_id + " asr " + fixed(row.asr_before) + " -> " +
                     fixed(row.asr_after) + " psr " + fixed(row.psr_db, 2) + " dB");
        }
        rows[i] = std::move(row);
        perts[i] = std::move(pert);
    });

    AttackRun run;
    run.report.experiment = experiment;
    run.report.victim = to_string(victim.arch);
    run.report.omega = omega;
    run.report.delta_max = cfg.delta_max;
    run.report.rows = std::move(rows);
    run.report.summary = summarize(run.report.rows, opts.psr_aggregation);
    run.perturbations = std::move(perts);
    return run;
}

} // namespace

AttackRun run_whitebox(const LocalizationModel& model, const ExperimentData& data, const Thresholds& thresholds,
                       std::span<const SpotPair> pairs, int omega, const AttackConfig& cfg, const RunOptions& opts)
{
    require(omega == 0 || omega == 1, "omega must be 0 or 1");
    require(thresholds.d_min.size() == data.grid.b_spots.size(), "thresholds do not match the grid");
    std::vector<AttackTask> tasks;
    if (omega == 1) {
        for (std::size_t i = 0; i < data.grid.b_spots.size(); ++i) {
            tasks.push_back({i, std::nullopt, thresholds.d_max, thresholds.d_min[i]});
        }
    } else {
        require(!pairs.empty(), "targeted attacks need at least one pair");
        for (const SpotPair& pr : pairs) {
            require(pr.genuine < data.grid.b_spots.size() && pr.target < data.grid.b_spots.size(),
                    "pair index out of range");
            require(distance(data.grid.b_spots[pr.genuine], data.grid.b_spots[pr.target]) > thresholds.ball_radius,
                    "pair " + data.grid.b_ids[pr.genuine] + "->" + data.grid.b_ids[pr.target] +
                        " lies inside the ball");
            require(pr.d_max > 0.0 && pr.d_min > 0.0, "pair thresholds must be positive");
            tasks.push_back({pr.genuine, pr.target, pr.d_max, pr.d_min});
        }
    }
    const std::string name = omega == 1 ? "whitebox_untargeted" : "whitebox_targeted";
    log_line(opts, name + ": " + std::to_string(tasks.size()) + " tasks on " + to_string(model.arch));
    return run_attacks(name, model, model, data, tasks, omega, cfg, opts, omega == 1 ? 0x1000 : 0x2000);
}

AttackRun run_transfer(const LocalizationModel& victim, const LocalizationModel& substitute,
                       const ExperimentData& data, const Thresholds& thresholds, const AttackConfig& cfg,
                       const RunOptions& opts)
{
    require(thresholds.d_min.size() == data.grid.b_spots.size(), "thresholds do not match the grid");
    require(victim.n_antennas == substitute.n_antennas && victim.n_subcarriers == substitute.n_subcarriers,
            "victim and substitute disagree on input shape");
    std::vector<AttackTask> tasks;
    for (std::size_t i = 0; i < data.grid.b_spots.size(); ++i) {
        tasks.push_back({i, std::nullopt, thresholds.d_max, thresholds.d_min[i]});
    }
    log_line(opts, "transfer: " + to_string(substitute.arch) + " -> " + to_string(victim.arch));
    // same seed streams as the white-box untargeted run, so substitute == victim reproduces it
    AttackRun run = run_attacks("transfer", substitute, victim, data, tasks, 1, cfg, opts, 0x1000);
    run.report.substitute = to_string(substitute.arch);
    return run;
}

ExperimentReport run_random_baseline(const LocalizationModel& victim, const ExperimentData& data,
                                     const Thresholds& thresholds, double delta_max, std::size_t repeats,
                                     const RunOptions& opts)
{
    require(delta_max >= 0.0 && delta_max < 1.0, "delta_max must be in [0, 1)");
    require(repeats > 0, "repeats must be positive");
    require_role(data.d_c, DatasetRole::d_c, data.grid);
    require(thresholds.d_min.size() == data.grid.b_spots.size(), "thresholds do not match the grid");
    const SpotGrid& grid = data.grid;
    const std::size_t k = victim.n_subcarriers;
    const std::uint64_t salt = static_cast<std::uint64_t>(std::llround(delta_max * 1e6));

    std::vector<ReportRow> rows(grid.b_spots.size());
    parallel_for(grid.b_spots.size(), opts.jobs, [&](std::size_t i) {
        const SpotSamples& uplink = data.d_c.spot(grid.b_ids[i]);
        const std::uint64_t seed = mix_seed(opts.seed ^ (salt << 20), 0x3000 + i);
        Rng rng(seed);
        std::uniform_real_distribution<double> u(1.0 - delta_max, 1.0 + delta_max);
        std::vector<double> gamma(k, 1.0);
        ReportRow row;
        for (std::size_t r = 0; r < repeats; ++r) {
            for (double& g : gamma) {
                g = delta_max > 0.0 ? u(rng) : 1.0;
            }
            ReportRow run = evaluate_perturbation(victim, gamma, uplink, grid.b_spots[i], std::nullopt, 1,
                                                  thresholds.d_max, thresholds.d_min[i], opts.psr_aggregation);
            if (r == 0) {
                row = run;
                row.predictions_before.clear();
                row.predictions_after.clear();
                row.gamma.clear();
            }
            row.asr_runs.push_back(run.asr_after);
            row.psr_runs.push_back(run.psr_db);
            // clean predictions repeat alongside each run so pooled percentiles compare like with like
            row.predictions_before.insert(row.predictions_before.end(), run.predictions_before.begin(),
                                          run.predictions_before.end());
            row.predictions_after.insert(row.predictions_after.end(), run.predictions_after.begin(),
                                         run.predictions_after.end());
        }
        double asr = 0.0;
        for (double a : row.asr_runs) {
            asr += a;
        }
        row.asr_after = asr / static_cast<double>(repeats);
        row.psr_db = aggregate_psr(row.psr_runs, opts.psr_aggregation);
        row.le_p_after = summarize_errors(row.predictions_after, grid.b_spots[i]);
        row.pair_id = grid.b_ids[i];
        row.seed = seed;
        rows[i] = std::move(row);
    });

    ExperimentReport rep;
    rep.experiment = "baseline";
    rep.victim = to_string(victim.arch);
    rep.omega = 1;
    rep.delta_max = delta_max;
    rep.rows = std::move(rows);
    rep.summary = summarize(rep.rows, opts.psr_aggregation);
    log_line(opts, "baseline delta " + fixed(delta_max, 2) + " asr " + fixed(rep.summary.mean_asr_after) + " psr " +
                       fixed(rep.summary.mean_psr_db, 2) + " dB");
    return rep;
}

namespace {

using nlohmann::json;

json dbl(double v)
{
    // JSON has no infinities; PSR of an identity perturbation is stored as a string
    if (std::isinf(v)) {
        return v < 0 ? "-inf" : "inf";
    }
    return v;
}

double dbl_from(const json& j)
{
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "-inf") {
            return -std::numeric_limits<double>::infinity();
        }
        if (s == "inf") {
            return std::numeric_limits<double>::infinity();
        }
        throw FormatError("bad number: " + s);
    }
    return j.get<double>();
}

json point_json(const Point2& p) { return json::array({p.x, p.y}); }

Point2 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json points_json(std::span<const Point2> ps)
{
    json a = json::array();
    for (const Point2& p : ps) {
        a.push_back(point_json(p));
    }
    return a;
}

std::vector<Point2> points_from(const json& j)
{
    std::vector<Point2> out;
    for (const json& p : j) {
        out.push_back(point_from(p));
    }
    return out;
}

json le_json(const LeSummary& s) { return {{"p50", s.p50}, {"p90", s.p90}, {"mean", s.mean}}; }

LeSummary le_from(const json& j)
{
    return {j.at("p50").get<double>(), j.at("p90").get<double>(), j.at("mean").get<double>()};
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j)
{
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

json dbl_array(std::span<const double> v)
{
    json a = json::array();
    for (double x : v) {
        a.push_back(dbl(x));
    }
    return a;
}

std::vector<double> dbl_array_from(const json& j)
{
    std::vector<double> out;
    for (const json& x : j) {
        out.push_back(dbl_from(x));
    }
    return out;
}

void stamp(json& j, const ExperimentReport& rep, const std::optional<Provenance>& provenance)
{
    j["experiment"] = rep.experiment;
    j["victim"] = rep.victim;
    j["substitute"] = rep.substitute ? json(*rep.substitute) : json(nullptr);
    j["delta_max"] = rep.delta_max;
    if (provenance) {
        j["config_hash"] = provenance->config_hash;
        j["master_seed"] = provenance->master_seed;
    }
}

json summary_json(const ExperimentReport& rep, const std::optional<Provenance>& provenance)
{
    const ReportSummary& s = rep.summary;
    json j = {
        {"type", "summary"},
        {"omega", rep.omega},
        {"rows", s.rows},
        {"mean_asr_before", s.mean_asr_before},
        {"mean_asr_after", s.mean_asr_after},
        {"mean_psr_db", dbl(s.mean_psr_db)},
        {"le_p50_before", s.le_p50_before},
        {"le_p50_after", s.le_p50_after},
        {"le_q50_before", opt_json(s.le_q50_before)},
        {"le_q50_after", opt_json(s.le_q50_after)},
        {"already_in_target", s.already_in_target},
    };
    stamp(j, rep, provenance);
    return j;
}

} // namespace

std::string summary_to_json(const ExperimentReport& report, const std::optional<Provenance>& provenance)
{
    return summary_json(report, provenance).dump();
}

std::string report_to_jsonl(const ExperimentReport& report, const std::optional<Provenance>& provenance)
{
    std::string out;
    for (const ReportRow& r : report.rows) {
        json j = {
            {"type", "row"},
            {"pair_id", r.pair_id},
            {"p_id", r.p_id},
            {"p", point_json(r.p)},
            {"q_id", r.q_id ? json(*r.q_id) : json(nullptr)},
            {"q", r.q ? point_json(*r.q) : json(nullptr)},
            {"omega", r.omega},
            {"d_max", r.d_max},
            {"d_min", r.d_min},
            {"le_p_before", le_json(r.le_p_before)},
            {"le_p_after", le_json(r.le_p_after)},
            {"le_q_before", r.le_q_before ? le_json(*r.le_q_before) : json(nullptr)},
            {"le_q_after", r.le_q_after ? le_json(*r.le_q_after) : json(nullptr)},
            {"asr_before", r.asr_before},
            {"asr_after", r.asr_after},
            {"psr_db", dbl(r.psr_db)},
            {"already_in_target", r.already_in_target},
            {"seed", r.seed},
            {"gamma", r.gamma},
            {"asr_runs", r.asr_runs},
            {"psr_runs", dbl_array(r.psr_runs)},
            {"predictions_before", points_json(r.predictions_before)},
            {"predictions_after", points_json(r.predictions_after)},
        };
        stamp(j, report, provenance);
        out += j.dump();
        out += '\n';
    }
    out += summary_json(report, provenance).dump();
    out += '\n';
    return out;
}

ExperimentReport report_from_jsonl(const std::string& text)
{
    ExperimentReport rep;
    bool have_summary = false;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            require(!have_summary, "records after the summary");
            rep.experiment = j.at("experiment").get<std::string>();
            rep.victim = j.at("victim").get<std::string>();
            if (!j.at("substitute").is_null()) {
                rep.substitute = j.at("substitute").get<std::string>();
            }
            rep.delta_max = j.at("delta_max").get<double>();
            const std::string type = j.at("type").get<std::string>();
            if (type == "summary") {
                have_summary = true;
                rep.omega = j.at("omega").get<int>();
                ReportSummary& s = rep.summary;
                s.rows = j.at("rows").get<std::size_t>();
                s.mean_asr_before = j.at("mean_asr_before").get<double>();
                s.mean_asr_after = j.at("mean_asr_after").get<double>();
                s.mean_psr_db = dbl_from(j.at("mean_psr_db"));
                s.le_p50_before = j.at("le_p50_before").get<double>();
                s.le_p50_after = j.at("le_p50_after").get<double>();
                s.le_q50_before = opt_from(j.at("le_q50_before"));
                s.le_q50_after = opt_from(j.at("le_q50_after"));
                s.already_in_target = j.at("already_in_target").get<std::size_t>();
                continue;
            }
            if (type != "row") {
                throw FormatError("unknown record type " + type);
            }
            ReportRow r;
            r.pair_id = j.at("pair_id").get<std::string>();
            r.p_id = j.at("p_id").get<std::string>();
            r.p = point_from(j.at("p"));
            if (!j.at("q_id").is_null()) {
                r.q_id = j.at("q_id").get<std::string>();
            }
            if (!j.at("q").is_null()) {
                r.q = point_from(j.at("q"));
            }
            r.omega = j.at("omega").get<int>();
            r.d_max = j.at("d_max").get<double>();
            r.d_min = j.at("d_min").get<double>();
            r.le_p_before = le_from(j.at("le_p_before"));
            r.le_p_after = le_from(j.at("le_p_after"));
            if (!j.at("le_q_before").is_null()) {
                r.le_q_before = le_from(j.at("le_q_before"));
                r.le_q_after = le_from(j.at("le_q_after"));
            }
            r.asr_before = j.at("asr_before").get<double>();
            r.asr_after = j.at("asr_after").get<double>();
            r.psr_db = dbl_from(j.at("psr_db"));
            r.already_in_target = j.at("already_in_target").get<std::size_t>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.gamma = j.at("gamma").get<std::vector<double>>();
            r.asr_runs = j.at("asr_runs").get<std::vector<double>>();
            r.psr_runs = dbl_array_from(j.at("psr_runs"));
            r.predictions_before = points_from(j.at("predictions_before"));
            r.predictions_after = points_from(j.at("predictions_after"));
            rep.rows.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw FormatError("report line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ContractError& e) {
            throw FormatError("report line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_summary) {
        throw FormatError("report has no summary record");
    }
    if (rep.summary.rows != rep.rows.size()) {
        throw FormatError("summary row count disagrees with the rows");
    }
    return rep;
}

} // namespace fooloc
