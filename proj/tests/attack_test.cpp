#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "fooloc/attack.hpp"
#include "fooloc/error.hpp"
#include "fooloc/metrics.hpp"

namespace fooloc {
namespace {

const AreaBounds kArea{0.0, 9.0, 0.0, 9.0};

AmplitudeSample random_sample(std::size_t n, std::size_t k, Rng& rng)
{
    std::uniform_real_distribution<double> u(0.05, 2.0);
    AmplitudeSample s;
    s.amps = Tensor(Shape{n, k});
    for (double& v : s.amps.data()) {
        v = u(rng);
    }
    return s;
}

std::vector<AmplitudeSample> random_batch(std::size_t count, std::size_t k, Rng& rng)
{
    std::vector<AmplitudeSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(random_sample(2, k, rng));
    }
    return out;
}

/// Model whose output is always the area center.
LocalizationModel center_model(std::size_t k)
{
    LocalizationModel m = init_model(Arch::dnn_a, 2, k, kArea, 1, 64);
    m.theta[10] = Tensor(m.theta[10].shape());
    m.theta[11] = Tensor(m.theta[11].shape());
    return m;
}

/// Small random model with predictions spread over the area.
LocalizationModel spread_model(Arch arch, std::size_t k, std::uint64_t seed)
{
    LocalizationModel m = init_model(arch, 2, k, kArea, seed, arch == Arch::dnn_a ? 32 : 8);
    for (double& v : m.theta[10].data()) {
        v *= 30.0;
    }
    return m;
}

double smoothness_oracle(const std::vector<double>& gamma)
{
    double total = 0.0;
    for (std::size_t i = 1; i < gamma.size(); ++i) {
        total += (gamma[i] - gamma[i - 1]) * (gamma[i] - gamma[i - 1]);
    }
    return std::sqrt(total);
}

TEST(ExpandWeightsTest, Examples)
{
    EXPECT_EQ(expand_weights(std::vector{0.9, 1.1}, 2), Tensor(Shape{2, 2}, {0.9, 1.1, 0.9, 1.1}));
    EXPECT_EQ(expand_weights(std::vector(5, 1.0), 3), Tensor(Shape{3, 5}, 1.0));
    EXPECT_EQ(expand_weights(std::vector{1.05, 0.95, 1.0}, 1).values(), (std::vector{1.05, 0.95, 1.0}));
    EXPECT_THROW(expand_weights(std::vector{1.0}, 0), ContractError);
}

TEST(ApplyPerturbationTest, Examples)
{
    AmplitudeSample x;
    x.amps = Tensor(Shape{2, 2}, {2, 4, 6, 8});
    EXPECT_EQ(apply_perturbation(std::vector{1.0, 1.0}, x).amps, x.amps);
    const Tensor scaled = apply_perturbation(std::vector{1.1, 1.1}, x).amps;
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(scaled[i], 1.1 * x.amps[i]);
    }
    const Tensor y = apply_perturbation(std::vector{1.1, 0.9}, x).amps;
    const std::vector<double> oracle{2.2, 3.6, 6.6, 7.2};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(y[i], oracle[i], 1e-12);
    }
    EXPECT_THROW(apply_perturbation(std::vector{1.0, 1.0, 1.0}, x), ContractError);
}

TEST(ApplyPerturbationTest, EqualsRepeatedWeightsProduct)
{
    Rng rng(1);
    std::uniform_real_distribution<double> w(0.85, 1.15);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 4;
        const std::size_t k = 1 + trial % 13;
        const AmplitudeSample x = random_sample(n, k, rng);
        std::vector<double> gamma(k);
        for (double& g : gamma) {
            g = w(rng);
        }
        const Tensor big = expand_weights(gamma, n);
        const Tensor y = apply_perturbation(gamma, x).amps;
        for (std::size_t i = 0; i < y.size(); ++i) {
            EXPECT_EQ(y[i], big[i] * x.amps[i]);
        }
    }
}

TEST(PerturbationTest, OmegaTargetPairing)
{
    EXPECT_THROW(make_perturbation({0.0}, 0.15, {1, 1}, std::nullopt, 0), ContractError);
    EXPECT_THROW(make_perturbation({0.0}, 0.15, {1, 1}, Point2{1, 1}, 0), ContractError);
    EXPECT_THROW(make_perturbation({0.0}, 0.15, {1, 1}, Point2{2, 1}, 1), ContractError);
    EXPECT_THROW(make_perturbation({0.0}, 1.5, {1, 1}, std::nullopt, 1), ContractError);
    const Perturbation p = make_perturbation({0.0, 100.0}, 0.15, {1, 1}, Point2{2, 1}, 0);
    EXPECT_EQ(p.gamma[0], 1.0);
    EXPECT_LT(p.gamma[1], 1.15);
}

TEST(AttackObjectiveTest, InactiveHingeLeavesSmoothnessOnly)
{
    const LocalizationModel m = center_model(8);
    Rng rng(2);
    const auto batch = random_batch(5, 8, rng);
    AttackConfig cfg;
    cfg.beta = 0.7;
    cfg.d_max = 0.5;
    Perturbation p = make_perturbation({0.3, -0.2, 0.5, 0.0, 1.0, -1.0, 0.2, 0.1}, 0.15, {1.0, 1.0},
                                       Point2{4.6, 4.5}, 0);
    EXPECT_NEAR(attack_objective(p, m, batch, cfg), 0.7 * smoothness_oracle(p.gamma), 1e-12);
}

TEST(AttackObjectiveTest, ConstantGammaLeavesHingeOnly)
{
    const LocalizationModel m = center_model(8);
    Rng rng(3);
    const auto batch = random_batch(4, 8, rng);
    AttackConfig cfg;
    cfg.d_max = 0.75;
    const Perturbation p = make_perturbation(std::vector(8, 0.4), 0.15, {1.0, 1.0}, Point2{7.5, 4.5}, 0);
    // Every prediction is the center, 3 m from the target.
    EXPECT_NEAR(attack_objective(p, m, batch, cfg), 3.0 - 0.75, 1e-12);
}

TEST(AttackObjectiveTest, UntargetedAtGenuineSpot)
{
    const LocalizationModel m = center_model(8);
    Rng rng(4);
    const auto batch = random_batch(1, 8, rng);
    AttackConfig cfg;
    cfg.beta = 0.0;
    cfg.d_min = 3.0;
    const Perturbation p = make_perturbation(std::vector(8, 0.0), 0.15, {4.5, 4.5}, std::nullopt, 1);
    EXPECT_DOUBLE_EQ(attack_objective(p, m, batch, cfg), 3.0);
    EXPECT_THROW(attack_objective(p, m, {}, cfg), ContractError);
}

TEST(AttackObjectiveTest, GradientMatchesFiniteDifferences)
{
    Rng rng(5);
    for (Arch arch : {Arch::dnn_a, Arch::dnn_b}) {
        for (int omega : {0, 1}) {
            const LocalizationModel m = spread_model(arch, 8, 6 + omega);
            AttackConfig cfg;
            cfg.beta = 0.3;
            cfg.d_max = 0.2;
            cfg.d_min = 8.0;
            std::optional<Point2> target;
            if (omega == 0) {
                target = Point2{8.0, 1.0};
            }
            AttackObjective obj(m, {1.0, 1.0}, target, omega, cfg);
            obj.set_batch(stack_samples(random_batch(6, 8, rng)));
            std::normal_distribution<double> normal(0.0, 0.5);
            std::vector<double> xi(8);
            for (double& v : xi) {
                v = normal(rng);
            }
            obj.set_xi(xi);
            const std::vector<double> grad = obj.gradient();
            for (std::size_t i = 0; i < xi.size(); ++i) {
                std::vector<double> probe = xi;
                probe[i] += 1e-6;
                obj.set_xi(probe);
                const double up = obj.evaluate();
                probe[i] -= 2e-6;
                obj.set_xi(probe);
                const double down = obj.evaluate();
                const double numeric = (up - down) / 2e-6;
                EXPECT_NEAR(grad[i], numeric, 1e-4 * std::max({std::abs(grad[i]), std::abs(numeric), 1e-3}))
                    << to_string(arch) << " omega " << omega << " k " << i;
            }
        }
    }
}

// Per-sample gradient decomposition: with beta = 0 the batch gradient is the
// mean of single-sample gradients, and samples already inside the ball add
// exactly nothing.
TEST(AttackObjectiveTest, InsideSamplesContributeNoGradient)
{
    Rng rng(7);
    const LocalizationModel m = spread_model(Arch::dnn_a, 8, 8);
    const auto batch = random_batch(16, 8, rng);
    const std::vector<Point2> preds = predict_batch(m, batch);
    const Point2 q{6.0, 6.0};
    std::vector<double> dists;
    for (const Point2& p : preds) {
        dists.push_back(distance(p, q));
    }
    std::vector<double> sorted = dists;
    std::sort(sorted.begin(), sorted.end());
    AttackConfig cfg;
    cfg.beta = 0.0;
    cfg.d_max = (sorted[7] + sorted[8]) / 2.0;

    const std::vector<double> xi(8, 0.0);
    AttackObjective whole(m, {1.0, 1.0}, q, 0, cfg);
    whole.set_xi(xi);
    whole.set_batch(stack_samples(batch));
    const std::vector<double> total = whole.gradient();

    std::vector<double> summed(8, 0.0);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        AttackObjective single(m, {1.0, 1.0}, q, 0, cfg);
        single.set_xi(xi);
        single.set_batch(stack_samples(std::span(batch).subspan(i, 1)));
        const std::vector<double> g = single.gradient();
        if (dists[i] < cfg.d_max) {
            ++inside;
            for (double v : g) {
                EXPECT_EQ(v, 0.0);
            }
        } else {
            EXPECT_GT(std::inner_product(g.begin(), g.end(), g.begin(), 0.0), 0.0);
        }
        for (std::size_t k = 0; k < 8; ++k) {
            summed[k] += g[k] / static_cast<double>(batch.size());
        }
    }
    EXPECT_EQ(inside, 8u);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_NEAR(summed[k], total[k], 1e-12 * std::max(1.0, std::abs(total[k])));
    }
}

TEST(OptimizePerturbationTest, ZeroIterationsReturnsInitialization)
{
    const LocalizationModel m = spread_model(Arch::dnn_a, 8, 9);
    Rng rng(8);
    const auto batch = random_batch(10, 8, rng);
    AttackConfig cfg;
    cfg.iterations = 0;
    cfg.seed = 3;
    const Perturbation p = optimize_perturbation(m, batch, {1, 1}, std::nullopt, 1, cfg);
    Rng init(3);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(p.xi[k], normal(init));
        EXPECT_GT(p.gamma[k], 0.85);
        EXPECT_LT(p.gamma[k], 1.15);
    }
}

TEST(OptimizePerturbationTest, IteratesStayInBoxAndBestIsMinimum)
{
    const LocalizationModel m = spread_model(Arch::dnn_b, 8, 10);
    Rng rng(9);
    const auto batch = random_batch(40, 8, rng);
    AttackConfig cfg;
    cfg.iterations = 60;
    cfg.eta = 50.0; // large steps drive xi toward saturation
    cfg.delta_max = 0.15;
    std::size_t seen = 0;
    double lowest = 1e300;
    const Perturbation p = optimize_perturbation(m, batch, {1, 1}, std::nullopt, 1, cfg,
                                                 [&](std::size_t, std::span<const double> gamma, double value) {
                                                     ++seen;
                                                     lowest = std::min(lowest, value);
                                                     for (double g : gamma) {
                                                         ASSERT_GT(g, 0.85);
                                                         ASSERT_LT(g, 1.15);
                                                     }
                                                 });
    EXPECT_EQ(seen, 61u);
    EXPECT_EQ(p.objective, lowest);
    validate(p);
}

TEST(OptimizePerturbationTest, DeterministicPerSeed)
{
    const LocalizationModel m = spread_model(Arch::dnn_a, 8, 11);
    Rng rng(10);
    const auto batch = random_batch(50, 8, rng);
    AttackConfig cfg;
    cfg.iterations = 20;
    cfg.seed = 17;
    const Perturbation a = optimize_perturbation(m, batch, {1, 1}, Point2{7, 7}, 0, cfg);
    const Perturbation b = optimize_perturbation(m, batch, {1, 1}, Point2{7, 7}, 0, cfg);
    EXPECT_EQ(a.xi, b.xi);
    cfg.seed = 18;
    EXPECT_NE(optimize_perturbation(m, batch, {1, 1}, Point2{7, 7}, 0, cfg).xi, a.xi);
}

TEST(OptimizePerturbationTest, HugeBetaFlattensGamma)
{
    const LocalizationModel m = spread_model(Arch::dnn_a, 12, 12);
    Rng rng(11);
    const auto batch = random_batch(20, 12, rng);
    AttackConfig cfg;
    cfg.beta = 1e4;
    cfg.eta = 1e-4;
    cfg.iterations = 400;
    cfg.xi_init_std = 0.3;
    const Perturbation p = optimize_perturbation(m, batch, {1, 1}, std::nullopt, 1, cfg);
    const auto [lo, hi] = std::minmax_element(p.gamma.begin(), p.gamma.end());
    EXPECT_LT(*hi - *lo, 1e-3);
}

TEST(PerturbTransmissionTest, Examples)
{
    Rng rng(12);
    std::normal_distribution<double> normal;
    std::vector<Complex> s(6), u(6);
    for (std::size_t k = 0; k < 6; ++k) {
        s[k] = {normal(rng), normal(rng)};
        u[k] = {normal(rng), normal(rng)};
    }
    const auto [s1, u1] = perturb_transmission(std::vector(6, 1.0), s, u);
    EXPECT_EQ(s1, s);
    EXPECT_EQ(u1, u);

    const std::vector<double> gamma{1.1, 0.9, 1.05, 0.95, 1.0, 1.12};
    const auto [st, ut] = perturb_transmission(gamma, s, u);
    // Flat unit channel: estimation against the original symbols returns gamma.
    ComplexMatrix y(1, 6);
    y.data = st;
    const CsiMeasurement est = estimate_csi(y, s);
    double power = 0.0, oracle = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_NEAR(est.h(0, k).real(), gamma[k], 1e-12);
        EXPECT_NEAR(est.h(0, k).imag(), 0.0, 1e-12);
        power += std::norm(st[k]);
        oracle += gamma[k] * gamma[k] * std::norm(s[k]);
    }
    EXPECT_NEAR(power, oracle, 1e-12 * oracle);
    EXPECT_THROW(perturb_transmission(std::vector{1.0}, s, u), ContractError);
}

TEST(DemodulationTest, NoiseFreeRecoveryIsExact)
{
    ChannelParams params;
    params.noise_sigma = 0.0;
    const SpotEnvironment env = synth_environment({3.0, 4.0}, {4.5, -0.5}, 5, params);
    Rng rng(13);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> w(0.8501, 1.1499);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> gamma(env.n_subcarriers());
        std::vector<Complex> u(env.n_subcarriers());
        for (std::size_t k = 0; k < gamma.size(); ++k) {
            gamma[k] = trial == 0 ? 1.0 : w(rng);
            u[k] = {normal(rng), normal(rng)};
        }
        const DemodulationResult r = check_demodulation(env, gamma, u, rng);
        EXPECT_LT(r.max_relative_error, 1e-9);
        EXPECT_EQ(r.recovered.rows, env.n_antennas());
    }
}

TEST(DemodulationTest, NoisyErrorDoesNotDependOnWeights)
{
    ChannelParams params;
    params.noise_sigma = 0.01;
    const SpotEnvironment env = synth_environment({3.0, 4.0}, {4.5, -0.5}, 5, params);
    const std::size_t k = env.n_subcarriers();
    Rng setup(14);
    std::normal_distribution<double> small(0.0, 0.1);
    std::vector<double> gamma(k);
    for (double& g : gamma) {
        g = 1.0 + 0.15 * std::tanh(small(setup));
    }
    std::vector<Complex> u(k);
    std::normal_distribution<double> normal;
    for (Complex& v : u) {
        v = {normal(setup), normal(setup)};
    }
    double flat_error = 0.0, weighted_error = 0.0;
    Rng a(15), b(15);
    for (int trial = 0; trial < 1000; ++trial) {
        flat_error += check_demodulation(env, std::vector(k, 1.0), u, a).max_relative_error / 1000.0;
        weighted_error += check_demodulation(env, gamma, u, b).max_relative_error / 1000.0;
    }
    EXPECT_GT(flat_error, 1e-4);
    EXPECT_NEAR(weighted_error, flat_error, 0.05 * flat_error);
}

TEST(PerturbationJsonTest, RoundTrip)
{
    Perturbation p = make_perturbation({0.1, -0.2, 0.3}, 0.15, {1.5, 2.25}, Point2{6.0, 7.5}, 0);
    p.spot_id = "B03";
    p.target_spot_id = "B21";
    p.seed = 99;
    p.objective = 0.125;
    AttackConfig cfg;
    const std::string text = perturbation_to_json(p, cfg, Provenance{"abc", 7});
    EXPECT_NE(text.find("\"config_hash\":\"abc\""), std::string::npos);
    const Perturbation back = perturbation_from_json(text);
    EXPECT_EQ(back.xi, p.xi);
    EXPECT_EQ(back.gamma, p.gamma);
    EXPECT_EQ(back.target, p.target);
    EXPECT_EQ(back.target_spot_id, p.target_spot_id);
    EXPECT_EQ(back.omega, 0);
    EXPECT_EQ(back.seed, 99u);

    Perturbation u = make_perturbation({0.0}, 0.3, {1, 1}, std::nullopt, 1);
    const Perturbation ub = perturbation_from_json(perturbation_to_json(u, cfg));
    EXPECT_FALSE(ub.target.has_value());
    EXPECT_FALSE(ub.target_spot_id.has_value());
    EXPECT_THROW(perturbation_from_json("{\"spot_id\":1}"), FormatError);
}

} // namespace
} // namespace fooloc
