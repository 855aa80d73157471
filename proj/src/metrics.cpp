#include "fooloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fooloc/error.hpp"

namespace fooloc {

double percentile(std::vector<double> values, double q)
{
    require(!values.empty(), "percentile of an empty list");
    require(q >= 0.0 && q <= 100.0, "percentile rank must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

LeSummary summarize_errors(std::span<const Point2> predictions, const Point2& truth)
{
    require(!predictions.empty(), "no predictions to summarize");
    std::vector<double> errors;
    errors.reserve(predictions.size());
    double total = 0.0;
    for (const Point2& p : predictions) {
        errors.push_back(localization_error(p, truth));
        total += errors.back();
    }
    LeSummary s;
    s.mean = total / static_cast<double>(errors.size());
    s.p50 = percentile(errors, 50.0);
    s.p90 = percentile(std::move(errors), 90.0);
    return s;
}

double attack_success_rate(const AttackOutcome& outcome, int omega)
{
    require(omega == 0 || omega == 1, "omega must be 0 or 1");
    require(!outcome.predictions.empty(), "attack outcome has no predictions");
    std::size_t hits = 0;
    if (omega == 0) {
        require(outcome.target.has_value() && outcome.d_max.has_value(), "targeted success needs a target and d_max");
        for (const Point2& p : outcome.predictions) {
            hits += localization_error(p, *outcome.target) <= *outcome.d_max ? 1 : 0;
        }
    } else {
        require(outcome.d_min.has_value(), "untargeted success needs d_min");
        for (const Point2& p : outcome.predictions) {
            hits += localization_error(p, outcome.genuine) >= *outcome.d_min ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(outcome.predictions.size());
}

double perturbation_to_signal_ratio(const AmplitudeSample& perturbed, const AmplitudeSample& original)
{
    require(perturbed.amps.shape() == original.amps.shape(),
            "PSR operands differ in shape: " + shape_string(perturbed.amps.shape()) + " vs "
                + shape_string(original.amps.shape()));
    double diff = 0.0;
    double base = 0.0;
    for (std::size_t i = 0; i < original.amps.size(); ++i) {
        const double d = perturbed.amps[i] - original.amps[i];
        diff += d * d;
        base += original.amps[i] * original.amps[i];
    }
    require(base > 0.0, "PSR of an all-zero original sample");
    if (diff == 0.0) {
        return -std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(diff / base);
}

double aggregate_psr(std::span<const double> psr_db, PsrAggregation aggregation)
{
    require(!psr_db.empty(), "no PSR values to aggregate");
    double total = 0.0;
    for (double v : psr_db) {
        total += aggregation == PsrAggregation::decibel ? v : std::pow(10.0, v / 20.0);
    }
    const double mean = total / static_cast<double>(psr_db.size());
    if (aggregation == PsrAggregation::decibel) {
        return mean;
    }
    return mean == 0.0 ? -std::numeric_limits<double>::infinity() : 20.0 * std::log10(mean);
}

double mean_psr(const AttackOutcome& outcome, PsrAggregation aggregation)
{
    require(outcome.perturbed.size() == outcome.original.size(), "perturbed and original lists differ in length");
    std::vector<double> values;
    values.reserve(outcome.original.size());
    for (std::size_t i = 0; i < outcome.original.size(); ++i) {
        values.push_back(perturbation_to_signal_ratio(outcome.perturbed[i], outcome.original[i]));
    }
    return aggregate_psr(values, aggregation);
}

std::string format_psr(double psr_db)
{
    if (!(psr_db >= kPsrFloorDb)) {
        return "< -120 dB";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f dB", psr_db);
    return buf;
}

} // namespace fooloc
