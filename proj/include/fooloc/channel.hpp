#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fooloc/geometry.hpp"
#include "fooloc/tensor.hpp"

namespace fooloc {

using Complex = std::complex<double>;
using Rng = std::mt19937_64;

inline constexpr double kSpeedOfLight = 299'792'458.0;

/// One propagation path of the sum-of-paths channel model.
struct PathComponent {
    double attenuation = 0.0; ///< unitless gain, >= 0
    double delay = 0.0;       ///< seconds, >= 0 and below 1 us
};

enum class Link { up, down };

std::string to_string(Link link);
Link link_from_string(const std::string& text);

/**
 * Knobs for synthetic environments.
 *
 * Reflectors form a room-level scene drawn from the environment seed: every
 * spot synthesized with the same seed sees the same scatterers, so nearby
 * spots get similar fingerprints. Each scatterer contributes a path with
 * gain rho / L and delay L / c + excess, where L is the bounce path length
 * and excess models multi-bounce propagation.
 *
 * carrier_hz = 0 evaluates subcarriers at their baseband offsets (the carrier
 * phase of each path is absorbed into its real gain); a nonzero carrier puts
 * every f_k at carrier_hz + offset_k.
 */
struct ChannelParams {
    std::size_t n_antennas = 2;
    std::size_t n_subcarriers = 56;
    double subcarrier_spacing_hz = 312.5e3;
    double carrier_hz = 0.0;
    double antenna_reference_hz = 2.412e9; ///< sets the lambda/2 antenna spacing
    std::size_t min_reflectors = 4;
    std::size_t max_reflectors = 6;
    double reflection_min = 0.3;
    double reflection_max = 0.9;
    double excess_delay_min = 20e-9;
    double excess_delay_max = 300e-9;
    AreaBounds room{-1.5, 10.5, -1.5, 16.5};
    double noise_sigma = 0.005;
    double reciprocity_sigma = 0.05;
    double uplink_extra_noise_sigma = 0.0; ///< emulates noisier over-the-air uplinks
    std::vector<double> agc_gains;         ///< empty disables gain clusters

    /// 52-subcarrier variant of the defaults.
    static ChannelParams online_preset();
};

struct SpotEnvironment {
    Point2 location;
    Point2 ap_location;
    std::vector<std::vector<PathComponent>> paths; ///< per antenna; first entry is the direct path
    std::vector<double> subcarrier_frequencies;    ///< Hz
    double noise_sigma = 0.0;
    double reciprocity_sigma = 0.0;
    double uplink_extra_noise_sigma = 0.0;
    std::vector<double> agc_gains;

    std::size_t n_antennas() const { return paths.size(); }
    std::size_t n_subcarriers() const { return subcarrier_frequencies.size(); }
};

/// Throws ContractError when an environment breaks the model's invariants.
void validate(const SpotEnvironment& env);

/// Row-major complex matrix (antennas x subcarriers).
struct ComplexMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Complex> data;

    ComplexMatrix() = default;
    ComplexMatrix(std::size_t r, std::size_t c, Complex fill = {})
      : rows(r)
      , cols(c)
      , data(r * c, fill)
    { }

    Complex& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const Complex& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const Complex> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;
};

struct CsiMeasurement {
    ComplexMatrix h;
    Link link = Link::up;
    std::string spot_id;
    double gain_applied = 1.0;
};

struct AmplitudeSample {
    Tensor amps; ///< N x K, elementwise modulus of the CSI
    Link link = Link::up;
    std::string spot_id;
};

struct LinkPairSamples {
    std::vector<CsiMeasurement> uplink;
    std::vector<CsiMeasurement> downlink;
};

/// Subcarrier frequencies for the given parameters.
std::vector<double> subcarrier_frequencies(const ChannelParams& params);

SpotEnvironment synth_environment(const Point2& location, const Point2& ap_location, std::uint64_t seed,
                                  const ChannelParams& params);

/// Sum-of-paths response of one antenna with fresh complex Gaussian noise.
std::vector<Complex> channel_response(const SpotEnvironment& env, std::size_t antenna, Rng& rng);

/// Least-squares channel estimate H[n, k] = Y[n, k] / s_k from known training symbols.
CsiMeasurement estimate_csi(const ComplexMatrix& received, std::span<const Complex> ltf);

LinkPairSamples sample_link_pair(const SpotEnvironment& env, std::size_t count_up, std::size_t count_down,
                                 Rng& rng, const std::string& spot_id = {});

AmplitudeSample amplitude_features(const CsiMeasurement& m);

// Dataset persistence: JSON lines, one record per measurement.

struct DatasetRecord {
    AmplitudeSample sample;
    Point2 location;
    std::optional<ComplexMatrix> complex;
};

struct Provenance {
    std::string config_hash;
    std::uint64_t master_seed = 0;
};

std::string dataset_record_to_json(const DatasetRecord& record, const std::optional<Provenance>& provenance = {});
DatasetRecord dataset_record_from_json(const std::string& line);

/// Appends records to a JSON-lines file, creating it when absent.
void append_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records,
                    const std::optional<Provenance>& provenance = {});
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

} // namespace fooloc
