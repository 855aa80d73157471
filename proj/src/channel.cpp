#include "fooloc/channel.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"

namespace fooloc {

namespace {

constexpr int kMaxResampleAttempts = 64;

bool has_zero_entry(const ComplexMatrix& h)
{
    for (const Complex& v : h.data) {
        if (v == Complex{}) {
            return true;
        }
    }
    return false;
}

Complex complex_noise(double sigma, Rng& rng)
{
    if (sigma <= 0.0) {
        return {};
    }
    std::normal_distribution<double> normal(0.0, sigma / std::numbers::sqrt2);
    const double re = normal(rng);
    const double im = normal(rng);
    return {re, im};
}

} // namespace

std::string to_string(Link link)
{
    return link == Link::up ? "up" : "down";
}

Link link_from_string(const std::string& text)
{
    if (text == "up") {
        return Link::up;
    }
    if (text == "down") {
        return Link::down;
    }
    throw FormatError("unknown link '" + text + "', expected \"up\" or \"down\"");
}

ChannelParams ChannelParams::online_preset()
{
    ChannelParams params;
    params.n_subcarriers = 52;
    return params;
}

std::vector<double> subcarrier_frequencies(const ChannelParams& params)
{
    std::vector<double> freqs(params.n_subcarriers);
    const double mid = (static_cast<double>(params.n_subcarriers) - 1.0) / 2.0;
    for (std::size_t k = 0; k < freqs.size(); ++k) {
        freqs[k] = params.carrier_hz + (static_cast<double>(k) - mid) * params.subcarrier_spacing_hz;
    }
    return freqs;
}

void validate(const SpotEnvironment& env)
{
    require(env.n_antennas() >= 1, "environment needs at least one antenna");
    require(env.n_subcarriers() >= 2, "environment needs at least two subcarriers");
    require(env.noise_sigma >= 0.0 && env.reciprocity_sigma >= 0.0 && env.uplink_extra_noise_sigma >= 0.0,
            "noise levels must be non-negative");
    for (std::size_t n = 0; n < env.paths.size(); ++n) {
        const auto& paths = env.paths[n];
        require(!paths.empty(), "antenna " + std::to_string(n) + " has no direct path");
        for (const PathComponent& path : paths) {
            require(std::isfinite(path.attenuation) && path.attenuation >= 0.0, "path attenuation must be finite and >= 0");
            require(path.delay >= 0.0 && path.delay < 1e-6, "path delay must lie in [0, 1 us)");
            require(path.attenuation <= paths.front().attenuation,
                    "reflected path stronger than the direct path at antenna " + std::to_string(n));
        }
    }
    for (double gain : env.agc_gains) {
        require(gain > 0.0, "AGC gains must be positive");
    }
}

SpotEnvironment synth_environment(const Point2& location, const Point2& ap_location, std::uint64_t seed,
                                  const ChannelParams& params)
{
    require(params.n_antennas >= 1 && params.n_subcarriers >= 2, "need N >= 1 antennas and K >= 2 subcarriers");
    require(params.min_reflectors <= params.max_reflectors, "reflector count range is empty");
    require(params.reflection_min >= 0.0 && params.reflection_max < 1.0 && params.reflection_min <= params.reflection_max,
            "reflection coefficients must lie in [0, 1)");
    require(params.excess_delay_min >= 0.0 && params.excess_delay_min <= params.excess_delay_max,
            "excess delay range is invalid");
    require(distance(location, ap_location) > 0.0, "client and access point locations coincide");

    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> count_dist(params.min_reflectors, params.max_reflectors);
    std::uniform_real_distribution<double> x_dist(params.room.x_min, params.room.x_max);
    std::uniform_real_distribution<double> y_dist(params.room.y_min, params.room.y_max);
    std::uniform_real_distribution<double> rho_dist(params.reflection_min, params.reflection_max);
    std::uniform_real_distribution<double> excess_dist(params.excess_delay_min, params.excess_delay_max);

    struct Scatterer {
        Point2 position;
        double reflection;
        double excess_delay;
    };
    std::vector<Scatterer> scene(count_dist(rng));
    for (Scatterer& s : scene) {
        s.position.x = x_dist(rng);
        s.position.y = y_dist(rng);
        s.reflection = rho_dist(rng);
        s.excess_delay = excess_dist(rng);
    }

    SpotEnvironment env;
    env.location = location;
    env.ap_location = ap_location;
    env.subcarrier_frequencies = subcarrier_frequencies(params);
    env.noise_sigma = params.noise_sigma;
    env.reciprocity_sigma = params.reciprocity_sigma;
    env.uplink_extra_noise_sigma = params.uplink_extra_noise_sigma;
    env.agc_gains = params.agc_gains;

    const double antenna_spacing = kSpeedOfLight / params.antenna_reference_hz / 2.0;
    for (std::size_t n = 0; n < params.n_antennas; ++n) {
        const Point2 antenna{ap_location.x + static_cast<double>(n) * antenna_spacing, ap_location.y};
        const double direct = distance(location, antenna);
        require(direct > 0.0, "client location coincides with antenna " + std::to_string(n));
        std::vector<PathComponent> paths;
        paths.push_back({1.0 / direct, direct / kSpeedOfLight});
        for (const Scatterer& s : scene) {
            const double length = distance(antenna, s.position) + distance(s.position, location);
            paths.push_back({s.reflection / length, length / kSpeedOfLight + s.excess_delay});
        }
        env.paths.push_back(std::move(paths));
    }
    validate(env);
    return env;
}

std::vector<Complex> channel_response(const SpotEnvironment& env, std::size_t antenna, Rng& rng)
{
    require(antenna < env.n_antennas(), "antenna index " + std::to_string(antenna) + " out of range");
    const auto& paths = env.paths[antenna];
    std::vector<Complex> h(env.n_subcarriers());
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double f = env.subcarrier_frequencies[k];
        Complex sum{};
        for (const PathComponent& path : paths) {
            sum += path.attenuation * std::polar(1.0, 2.0 * std::numbers::pi * path.delay * f);
        }
        h[k] = sum + complex_noise(env.noise_sigma, rng);
    }
    return h;
}

CsiMeasurement estimate_csi(const ComplexMatrix& received, std::span<const Complex> ltf)
{
    require(ltf.size() == received.cols, "training sequence length " + std::to_string(ltf.size()) +
                                             " does not match " + std::to_string(received.cols) + " subcarriers");
    for (std::size_t k = 0; k < ltf.size(); ++k) {
        require(ltf[k] != Complex{}, "training symbol " + std::to_string(k) + " is zero");
    }
    CsiMeasurement m;
    m.h = ComplexMatrix(received.rows, received.cols);
    for (std::size_t n = 0; n < received.rows; ++n) {
        for (std::size_t k = 0; k < received.cols; ++k) {
            m.h(n, k) = received(n, k) / ltf[k];
        }
    }
    return m;
}

LinkPairSamples sample_link_pair(const SpotEnvironment& env, std::size_t count_up, std::size_t count_down, Rng& rng,
                                 const std::string& spot_id)
{
    const std::size_t antennas = env.n_antennas();
    const std::size_t subcarriers = env.n_subcarriers();
    std::normal_distribution<double> reciprocity(0.0, env.reciprocity_sigma > 0.0 ? env.reciprocity_sigma : 1.0);
    std::uniform_int_distribution<std::size_t> gain_pick(0, env.agc_gains.empty() ? 0 : env.agc_gains.size() - 1);

    const auto measure = [&](Link link) {
        for (int attempt = 0; attempt < kMaxResampleAttempts; ++attempt) {
            CsiMeasurement m;
            m.link = link;
            m.spot_id = spot_id;
            m.h = ComplexMatrix(antennas, subcarriers);
            for (std::size_t n = 0; n < antennas; ++n) {
                const std::vector<Complex> row = channel_response(env, n, rng);
                double row_scale = 1.0;
                if (link == Link::down && env.reciprocity_sigma > 0.0) {
                    row_scale += reciprocity(rng);
                }
                for (std::size_t k = 0; k < subcarriers; ++k) {
                    Complex v = row[k] * row_scale;
                    if (link == Link::up) {
                        v += complex_noise(env.uplink_extra_noise_sigma, rng);
                    }
                    m.h(n, k) = v;
                }
            }
            if (!env.agc_gains.empty()) {
                m.gain_applied = env.agc_gains[gain_pick(rng)];
                for (Complex& v : m.h.data) {
                    v *= m.gain_applied;
                }
            }
            if (!has_zero_entry(m.h)) {
                return m;
            }
        }
        throw ContractError("channel keeps producing zero-valued CSI entries; check the environment");
    };

    LinkPairSamples out;
    out.uplink.reserve(count_up);
    out.downlink.reserve(count_down);
    for (std::size_t i = 0; i < count_up; ++i) {
        out.uplink.push_back(measure(Link::up));
    }
    for (std::size_t i = 0; i < count_down; ++i) {
        out.downlink.push_back(measure(Link::down));
    }
    return out;
}

AmplitudeSample amplitude_features(const CsiMeasurement& m)
{
    AmplitudeSample sample;
    sample.link = m.link;
    sample.spot_id = m.spot_id;
    sample.amps = Tensor(Shape{m.h.rows, m.h.cols});
    for (std::size_t i = 0; i < m.h.data.size(); ++i) {
        sample.amps[i] = std::abs(m.h.data[i]);
    }
    return sample;
}

std::string dataset_record_to_json(const DatasetRecord& record, const std::optional<Provenance>& provenance)
{
    const Tensor& amps = record.sample.amps;
    require(amps.rank() == 2, "amplitude sample must be N x K");
    const std::size_t n = amps.dim(0);
    const std::size_t k = amps.dim(1);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < n; ++r) {
        rows.push_back(std::vector<double>(amps.values().begin() + static_cast<std::ptrdiff_t>(r * k),
                                           amps.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * k)));
    }
    nlohmann::json j = {
        {"spot_id", record.sample.spot_id},
        {"location", {record.location.x, record.location.y}},
        {"link", to_string(record.sample.link)},
        {"n", n},
        {"k", k},
        {"amps", std::move(rows)},
    };
    if (record.complex) {
        nlohmann::json cplx = nlohmann::json::array();
        for (std::size_t r = 0; r < record.complex->rows; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (const Complex& v : record.complex->row(r)) {
                row.push_back({v.real(), v.imag()});
            }
            cplx.push_back(std::move(row));
        }
        j["complex"] = std::move(cplx);
    }
    if (provenance) {
        j["config_hash"] = provenance->config_hash;
        j["master_seed"] = provenance->master_seed;
    }
    return j.dump();
}

DatasetRecord dataset_record_from_json(const std::string& line)
{
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        DatasetRecord record;
        record.sample.spot_id = j.at("spot_id").get<std::string>();
        const auto location = j.at("location").get<std::vector<double>>();
        if (location.size() != 2) {
            throw FormatError("location must have two coordinates");
        }
        record.location = {location[0], location[1]};
        record.sample.link = link_from_string(j.at("link").get<std::string>());
        const auto n = j.at("n").get<std::size_t>();
        const auto k = j.at("k").get<std::size_t>();
        const auto rows = j.at("amps").get<std::vector<std::vector<double>>>();
        if (rows.size() != n) {
            throw FormatError("amps has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(n));
        }
        std::vector<double> flat;
        flat.reserve(n * k);
        for (const auto& row : rows) {
            if (row.size() != k) {
                throw FormatError("amps row has " + std::to_string(row.size()) + " values, expected " + std::to_string(k));
            }
            flat.insert(flat.end(), row.begin(), row.end());
        }
        record.sample.amps = Tensor(Shape{n, k}, std::move(flat));
        if (j.contains("complex") && !j["complex"].is_null()) {
            const auto& cplx = j["complex"];
            ComplexMatrix h(n, k);
            if (cplx.size() != n) {
                throw FormatError("complex has wrong row count");
            }
            for (std::size_t r = 0; r < n; ++r) {
                if (cplx[r].size() != k) {
                    throw FormatError("complex row has wrong length");
                }
                for (std::size_t c = 0; c < k; ++c) {
                    h(r, c) = {cplx[r][c].at(0).get<double>(), cplx[r][c].at(1).get<double>()};
                }
            }
            record.complex = std::move(h);
        }
        return record;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad dataset record: ") + e.what());
    }
}

void append_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records,
                    const std::optional<Provenance>& provenance)
{
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for appending");
    }
    for (const DatasetRecord& record : records) {
        out << dataset_record_to_json(record, provenance) << '\n';
    }
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open dataset " + path.string());
    }
    std::vector<DatasetRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            records.push_back(dataset_record_from_json(line));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

} // namespace fooloc
