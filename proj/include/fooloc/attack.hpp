#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fooloc/channel.hpp"
#include "fooloc/geometry.hpp"
#include "fooloc/graph.hpp"
#include "fooloc/models.hpp"

namespace fooloc {

struct AttackConfig {
    double d_max = 0.75;
    double d_min = 0.75;
    double beta = 1.0;
    double eta = 1.0;
    std::size_t iterations = 300;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double delta_max = 0.15;
    double xi_init_std = 0.1;
};

void validate(const AttackConfig& cfg);

/// Per-subcarrier weights gamma = tanh(xi) * delta_max + 1 shared by every antenna.
struct Perturbation {
    std::vector<double> xi;
    std::vector<double> gamma;
    double delta_max = 0.15;
    Point2 genuine;
    std::optional<Point2> target;
    int omega = 1; ///< 0 targeted, 1 untargeted
    std::string spot_id;
    std::optional<std::string> target_spot_id;
    std::uint64_t seed = 0;
    double objective = 0.0; ///< best running objective
    std::size_t best_iteration = 0;
};

/// Builds a perturbation from xi, enforcing the omega/target pairing.
Perturbation make_perturbation(std::vector<double> xi, double delta_max, const Point2& genuine,
                               std::optional<Point2> target, int omega);
void validate(const Perturbation& p);

/// N x K matrix whose rows all equal gamma.
Tensor expand_weights(std::span<const double> gamma, std::size_t n_antennas);

/// X_hat[n, k] = gamma[k] * X[n, k].
AmplitudeSample apply_perturbation(std::span<const double> gamma, const AmplitudeSample& x);

/**
 * The attack objective as a reusable graph: a batch of raw amplitudes is
 * scaled by gamma(xi), fed through a frozen model, and scored by the hinge
 * of the distance to the anchor plus beta times the norm of adjacent
 * differences of gamma. Only xi carries gradients.
 */
class AttackObjective {
public:
    AttackObjective(const LocalizationModel& model, const Point2& genuine, std::optional<Point2> target, int omega,
                    const AttackConfig& cfg);

    void set_xi(std::span<const double> xi);
    void set_batch(const Tensor& batch); ///< B x N x K raw amplitudes

    double evaluate();
    /// Gradient of the objective with respect to xi; evaluates first.
    std::vector<double> gradient();

    std::vector<double> gamma() const;
    std::vector<Point2> predictions() const; ///< from the latest evaluation
    std::vector<double> hinge_terms() const; ///< per sample, from the latest evaluation
    std::size_t n_subcarriers() const noexcept { return k_; }

private:
    Graph graph_;
    std::size_t k_ = 0;
    NodeId xi_ = 0;
    NodeId gamma_ = 0;
    NodeId batch_ = 0;
    NodeId predictions_ = 0;
    NodeId hinges_ = 0;
    NodeId loss_ = 0;
    bool fresh_ = false;
};

/// One-shot objective value for a perturbation on a batch of samples from its genuine spot.
double attack_objective(const Perturbation& p, const LocalizationModel& model, std::span<const AmplitudeSample> batch,
                        const AttackConfig& cfg);

/// Called with (iteration, gamma, objective) before every update.
using IterateObserver = std::function<void(std::size_t, std::span<const double>, double)>;

/// Mini-batch gradient descent on xi; returns the iterate with the lowest mini-batch objective.
Perturbation optimize_perturbation(const LocalizationModel& model, std::span<const AmplitudeSample> downlink,
                                   const Point2& genuine, std::optional<Point2> target, int omega,
                                   const AttackConfig& cfg, const IterateObserver& observer = {});

/// Scales training symbols and payload by gamma per subcarrier.
std::pair<std::vector<Complex>, std::vector<Complex>> perturb_transmission(std::span<const double> gamma,
                                                                           std::span<const Complex> ltf,
                                                                           std::span<const Complex> payload);

/// Fixed BPSK training sequence of length k.
std::vector<Complex> default_ltf(std::size_t k);

struct DemodulationResult {
    ComplexMatrix recovered; ///< N x K payload estimates, one row per antenna
    double max_relative_error = 0.0;
};

/// Sends a perturbed frame through env, estimates the channel from its training
/// symbols and equalizes the payload. Receiver noise follows env.noise_sigma.
DemodulationResult check_demodulation(const SpotEnvironment& env, std::span<const double> gamma,
                                      std::span<const Complex> payload, Rng& rng);

std::string perturbation_to_json(const Perturbation& p, const AttackConfig& cfg,
                                 const std::optional<Provenance>& provenance = {});
Perturbation perturbation_from_json(const std::string& text);

} // namespace fooloc
