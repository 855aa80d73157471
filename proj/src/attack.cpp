#include "fooloc/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"

namespace fooloc {
namespace {

void check_omega(int omega, const std::optional<Point2>& target, const Point2& genuine)
{
    require(omega == 0 || omega == 1, "omega must be 0 or 1, got " + std::to_string(omega));
    if (omega == 0) {
        require(target.has_value(), "a targeted attack needs a target spot");
        require(distance(*target, genuine) > 0.0, "target spot must differ from the genuine spot");
    } else {
        require(!target.has_value(), "an untargeted attack takes no target spot");
    }
}

Complex complex_noise(Rng& rng, double sigma)
{
    if (sigma == 0.0) {
        return {};
    }
    std::normal_distribution<double> normal(0.0, sigma / std::sqrt(2.0));
    const double re = normal(rng);
    return {re, normal(rng)};
}

nlohmann::json point_json(const Point2& p) { return nlohmann::json::array({p.x, p.y}); }

Point2 point_from(const nlohmann::json& j)
{
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 2) {
        throw FormatError("a point needs two coordinates");
    }
    return {v[0], v[1]};
}

} // namespace

void validate(const AttackConfig& cfg)
{
    require(cfg.d_max >= 0.0 && cfg.d_min >= 0.0, "d_max and d_min must be non-negative");
    require(cfg.beta >= 0.0, "beta must be non-negative");
    require(cfg.eta >= 0.0, "eta must be non-negative");
    require(cfg.batch_size >= 1, "attack batch size must be positive");
    require(cfg.delta_max > 0.0 && cfg.delta_max < 1.0, "delta_max must lie in (0, 1)");
    require(cfg.xi_init_std >= 0.0, "xi_init_std must be non-negative");
}

Perturbation make_perturbation(std::vector<double> xi, double delta_max, const Point2& genuine,
                               std::optional<Point2> target, int omega)
{
    check_omega(omega, target, genuine);
    Perturbation p;
    p.gamma = tanh_reparam(Tensor(Shape{xi.size()}, xi), delta_max).values();
    p.xi = std::move(xi);
    p.delta_max = delta_max;
    p.genuine = genuine;
    p.target = target;
    p.omega = omega;
    return p;
}

void validate(const Perturbation& p)
{
    check_omega(p.omega, p.target, p.genuine);
    require(p.delta_max > 0.0 && p.delta_max < 1.0, "delta_max must lie in (0, 1)");
    require(p.xi.size() == p.gamma.size(), "xi and gamma differ in length");
    for (double g : p.gamma) {
        require(g > 1.0 - p.delta_max && g < 1.0 + p.delta_max, "gamma leaves the feasible box");
    }
}

Tensor expand_weights(std::span<const double> gamma, std::size_t n_antennas)
{
    require(n_antennas >= 1, "need at least one antenna");
    Tensor out(Shape{n_antennas, gamma.size()});
    for (std::size_t n = 0; n < n_antennas; ++n) {
        std::copy(gamma.begin(), gamma.end(), out.data().begin() + static_cast<std::ptrdiff_t>(n * gamma.size()));
    }
    return out;
}

AmplitudeSample apply_perturbation(std::span<const double> gamma, const AmplitudeSample& x)
{
    require(x.amps.rank() == 2 && x.amps.dim(1) == gamma.size(),
            "gamma has " + std::to_string(gamma.size()) + " weights for a sample of shape " + shape_string(x.amps.shape()));
    AmplitudeSample out = x;
    const std::size_t k = gamma.size();
    auto v = out.amps.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] *= gamma[i % k];
    }
    return out;
}

AttackObjective::AttackObjective(const LocalizationModel& model, const Point2& genuine, std::optional<Point2> target,
                                 int omega, const AttackConfig& cfg)
  : k_(model.n_subcarriers)
{
    validate(cfg);
    check_omega(omega, target, genuine);
    xi_ = graph_.parameter(Tensor(Shape{k_}), "xi");
    gamma_ = graph_.tanh_reparam(xi_, cfg.delta_max);
    batch_ = graph_.input(Tensor(Shape{1, model.n_antennas, k_}, 1.0), "downlink");
    const NodeId perturbed = graph_.mul(batch_, gamma_);
    predictions_ = build_model_graph(graph_, model, perturbed, false).output;
    const Point2 anchor = omega == 0 ? *target : genuine;
    const NodeId dist = graph_.row_l2_norm(graph_.sub(predictions_, graph_.input(Tensor::vector({anchor.x, anchor.y}))));
    hinges_ = omega == 0 ? graph_.hinge(graph_.affine(dist, 1.0, -cfg.d_max))
                         : graph_.hinge(graph_.affine(dist, -1.0, cfg.d_min));
    const NodeId smooth = graph_.affine(graph_.l2_norm(graph_.adjacent_diff(gamma_)), cfg.beta, 0.0);
    loss_ = graph_.add(graph_.mean(hinges_), smooth);
}

void AttackObjective::set_xi(std::span<const double> xi)
{
    require(xi.size() == k_, "xi has " + std::to_string(xi.size()) + " entries, expected " + std::to_string(k_));
    graph_.set_value(xi_, Tensor(Shape{k_}, std::vector<double>(xi.begin(), xi.end())));
    fresh_ = false;
}

void AttackObjective::set_batch(const Tensor& batch)
{
    require(batch.rank() == 3 && batch.dim(2) == k_ && batch.dim(0) >= 1,
            "attack batch must be B x N x K, got " + shape_string(batch.shape()));
    graph_.set_value(batch_, batch);
    fresh_ = false;
}

double AttackObjective::evaluate()
{
    const double v = graph_.evaluate(loss_).item();
    fresh_ = true;
    return v;
}

std::vector<double> AttackObjective::gradient()
{
    if (!fresh_) {
        evaluate();
    }
    return graph_.backward(loss_).at(xi_).values();
}

std::vector<double> AttackObjective::gamma() const { return graph_.value(gamma_).values(); }

std::vector<Point2> AttackObjective::predictions() const
{
    const Tensor& y = graph_.value(predictions_);
    std::vector<Point2> out;
    for (std::size_t i = 0; i + 1 < y.size(); i += 2) {
        out.push_back({y[i], y[i + 1]});
    }
    return out;
}

std::vector<double> AttackObjective::hinge_terms() const { return graph_.value(hinges_).values(); }

double attack_objective(const Perturbation& p, const LocalizationModel& model, std::span<const AmplitudeSample> batch,
                        const AttackConfig& cfg)
{
    require(!batch.empty(), "attack objective needs a nonempty batch");
    AttackConfig local = cfg;
    local.delta_max = p.delta_max;
    AttackObjective objective(model, p.genuine, p.target, p.omega, local);
    objective.set_xi(p.xi);
    objective.set_batch(stack_samples(batch));
    return objective.evaluate();
}

Perturbation optimize_perturbation(const LocalizationModel& model, std::span<const AmplitudeSample> downlink,
                                   const Point2& genuine, std::optional<Point2> target, int omega,
                                   const AttackConfig& cfg, const IterateObserver& observer)
{
    require(!downlink.empty(), "no downlink samples to optimize on");
    AttackObjective objective(model, genuine, target, omega, cfg);
    const Tensor all = stack_samples(downlink);
    const std::size_t k = model.n_subcarriers;
    const std::size_t stride = model.n_antennas * k;

    Rng rng(cfg.seed);
    std::vector<double> xi(k, 0.0);
    if (cfg.xi_init_std > 0.0) {
        std::normal_distribution<double> init(0.0, cfg.xi_init_std);
        for (double& v : xi) {
            v = init(rng);
        }
    }

    const std::size_t m = std::min(cfg.batch_size, downlink.size());
    std::vector<std::size_t> pool(downlink.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Tensor batch(Shape{m, model.n_antennas, k});
    if (m == downlink.size()) {
        objective.set_batch(all);
    }

    std::vector<double> best_xi = xi;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_iteration = 0;
    for (std::size_t it = 0; it <= cfg.iterations; ++it) {
        if (m < downlink.size()) {
            // Partial Fisher-Yates draw of m distinct samples.
            for (std::size_t i = 0; i < m; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
                std::swap(pool[i], pool[pick(rng)]);
                std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(pool[i] * stride), stride,
                            batch.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
            }
            objective.set_batch(batch);
        }
        objective.set_xi(xi);
        const double value = objective.evaluate();
        if (observer) {
            const std::vector<double> gamma = objective.gamma();
            observer(it, gamma, value);
        }
        if (value < best) {
            best = value;
            best_xi = xi;
            best_iteration = it;
        }
        if (it == cfg.iterations) {
            break;
        }
        const std::vector<double> grad = objective.gradient();
        for (std::size_t i = 0; i < k; ++i) {
            xi[i] -= cfg.eta * grad[i];
        }
    }

    Perturbation p = make_perturbation(std::move(best_xi), cfg.delta_max, genuine, target, omega);
    p.seed = cfg.seed;
    p.objective = best;
    p.best_iteration = best_iteration;
    return p;
}

std::pair<std::vector<Complex>, std::vector<Complex>> perturb_transmission(std::span<const double> gamma,
                                                                           std::span<const Complex> ltf,
                                                                           std::span<const Complex> payload)
{
    require(ltf.size() == gamma.size() && payload.size() == gamma.size(),
            "gamma, training symbols and payload must share one length");
    std::vector<Complex> s(ltf.size());
    std::vector<Complex> u(payload.size());
    for (std::size_t k = 0; k < gamma.size(); ++k) {
        require(gamma[k] > 0.0, "perturbation weights must be positive");
        s[k] = gamma[k] * ltf[k];
        u[k] = gamma[k] * payload[k];
    }
    return {std::move(s), std::move(u)};
}

std::vector<Complex> default_ltf(std::size_t k)
{
    std::vector<Complex> s(k);
    std::uint32_t lfsr = 0x5Bu;
    for (Complex& v : s) {
        const std::uint32_t bit = ((lfsr >> 6) ^ (lfsr >> 3)) & 1u;
        lfsr = ((lfsr << 1) | bit) & 0x7Fu;
        v = bit ? Complex(1.0, 0.0) : Complex(-1.0, 0.0);
    }
    return s;
}

DemodulationResult check_demodulation(const SpotEnvironment& env, std::span<const double> gamma,
                                      std::span<const Complex> payload, Rng& rng)
{
    validate(env);
    const std::size_t n = env.n_antennas();
    const std::size_t k = env.n_subcarriers();
    require(gamma.size() == k && payload.size() == k, "gamma and payload must have one entry per subcarrier");
    const std::vector<Complex> ltf = default_ltf(k);
    const auto [s_t, u_t] = perturb_transmission(gamma, ltf, payload);

    SpotEnvironment clean = env;
    clean.noise_sigma = 0.0;
    ComplexMatrix y_ltf(n, k);
    ComplexMatrix y_pay(n, k);
    for (std::size_t a = 0; a < n; ++a) {
        const std::vector<Complex> h = channel_response(clean, a, rng);
        for (std::size_t c = 0; c < k; ++c) {
            y_ltf(a, c) = h[c] * s_t[c] + complex_noise(rng, env.noise_sigma);
            y_pay(a, c) = h[c] * u_t[c] + complex_noise(rng, env.noise_sigma);
        }
    }
    const ComplexMatrix h_hat = estimate_csi(y_ltf, ltf).h;
    DemodulationResult result;
    result.recovered = ComplexMatrix(n, k);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t c = 0; c < k; ++c) {
            const Complex u_hat = y_pay(a, c) / h_hat(a, c);
            result.recovered(a, c) = u_hat;
            result.max_relative_error = std::max(result.max_relative_error, std::abs(u_hat - payload[c]) / std::abs(payload[c]));
        }
    }
    return result;
}

std::string perturbation_to_json(const Perturbation& p, const AttackConfig& cfg,
                                 const std::optional<Provenance>& provenance)
{
    nlohmann::json j = {
        {"spot_id", p.spot_id},
        {"target_spot_id", p.target_spot_id ? nlohmann::json(*p.target_spot_id) : nlohmann::json(nullptr)},
        {"omega", p.omega},
        {"delta_max", p.delta_max},
        {"gamma", p.gamma},
        {"xi", p.xi},
        {"genuine", point_json(p.genuine)},
        {"target", p.target ? point_json(*p.target) : nlohmann::json(nullptr)},
        {"objective", p.objective},
        {"best_iteration", p.best_iteration},
        {"config",
         {{"d_max", cfg.d_max},
          {"d_min", cfg.d_min},
          {"beta", cfg.beta},
          {"eta", cfg.eta},
          {"iterations", cfg.iterations},
          {"batch_size", cfg.batch_size},
          {"delta_max", cfg.delta_max},
          {"xi_init_std", cfg.xi_init_std}}},
        {"seed", p.seed},
    };
    if (provenance) {
        j["config_hash"] = provenance->config_hash;
        j["master_seed"] = provenance->master_seed;
    }
    return j.dump();
}

Perturbation perturbation_from_json(const std::string& text)
{
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        Perturbation p;
        p.spot_id = j.at("spot_id").get<std::string>();
        if (!j.at("target_spot_id").is_null()) {
            p.target_spot_id = j.at("target_spot_id").get<std::string>();
        }
        p.omega = j.at("omega").get<int>();
        p.delta_max = j.at("delta_max").get<double>();
        p.gamma = j.at("gamma").get<std::vector<double>>();
        p.xi = j.at("xi").get<std::vector<double>>();
        p.genuine = point_from(j.at("genuine"));
        if (!j.at("target").is_null()) {
            p.target = point_from(j.at("target"));
        }
        p.objective = j.value("objective", 0.0);
        p.best_iteration = j.value("best_iteration", std::size_t{0});
        p.seed = j.at("seed").get<std::uint64_t>();
        validate(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad perturbation record: ") + e.what());
    } catch (const ContractError& e) {
        throw FormatError(std::string("bad perturbation record: ") + e.what());
    }
}

} // namespace fooloc
