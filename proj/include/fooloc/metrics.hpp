#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fooloc/channel.hpp"
#include "fooloc/geometry.hpp"

namespace fooloc {

inline double localization_error(const Point2& prediction, const Point2& truth)
{
    return distance(prediction, truth);
}

/// Percentile with linear interpolation between closest ranks; q in [0, 100].
double percentile(std::vector<double> values, double q);

struct LeSummary {
    double p50 = 0.0;
    double p90 = 0.0;
    double mean = 0.0;

    friend bool operator==(const LeSummary&, const LeSummary&) = default;
};

LeSummary summarize_errors(std::span<const Point2> predictions, const Point2& truth);

struct AttackOutcome {
    std::vector<Point2> predictions;
    Point2 genuine;
    std::optional<Point2> target;
    std::optional<double> d_max;
    std::optional<double> d_min;
    std::vector<AmplitudeSample> perturbed;
    std::vector<AmplitudeSample> original;
};

/// omega = 0: share of predictions within d_max of the target; omega = 1:
/// share at least d_min away from the genuine spot. Boundaries count as hits.
double attack_success_rate(const AttackOutcome& outcome, int omega);

/// 20 log10(|perturbed - original| / |original|) over all elements; -inf when identical.
double perturbation_to_signal_ratio(const AmplitudeSample& perturbed, const AmplitudeSample& original);

enum class PsrAggregation { decibel, linear };

/// Mean PSR over the paired samples of an outcome.
double mean_psr(const AttackOutcome& outcome, PsrAggregation aggregation = PsrAggregation::decibel);
double aggregate_psr(std::span<const double> psr_db, PsrAggregation aggregation = PsrAggregation::decibel);

inline constexpr double kPsrFloorDb = -120.0;

/// Human-readable PSR; values below the floor print as "< -120 dB".
std::string format_psr(double psr_db);

} // namespace fooloc
