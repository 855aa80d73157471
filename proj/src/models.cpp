#include "fooloc/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "fooloc/error.hpp"
#include "fooloc/metrics.hpp"

namespace fooloc {
namespace {

constexpr std::size_t kEvalChunk = 256;

const char* activation_name(Activation a)
{
    switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    }
    return "linear";
}

Activation activation_from_string(const std::string& s)
{
    if (s == "linear") return Activation::linear;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw FormatError("unknown activation '" + s + "'");
}

std::vector<Shape> theta_shapes(const LocalizationModel& m)
{
    std::vector<Shape> shapes;
    std::size_t in = m.arch == Arch::dnn_a ? m.n_antennas * m.n_subcarriers : m.n_antennas;
    bool in_conv = m.arch == Arch::dnn_b;
    for (const LayerSpec& layer : m.layers) {
        if (in_conv && layer.kind == LayerKind::fc) {
            in *= m.n_subcarriers;
            in_conv = false;
        }
        shapes.push_back({in, layer.width});
        shapes.push_back({layer.width});
        in = layer.width;
    }
    return shapes;
}

NodeId activate(Graph& g, NodeId z, Activation a)
{
    switch (a) {
    case Activation::relu: return g.relu(z);
    case Activation::sigmoid: return g.sigmoid(z);
    case Activation::linear: break;
    }
    return z;
}

void check_sample_shape(const LocalizationModel& m, const Tensor& amps)
{
    require(amps.shape() == Shape{m.n_antennas, m.n_subcarriers},
            "sample shape " + shape_string(amps.shape()) + " does not match model input "
                + shape_string({m.n_antennas, m.n_subcarriers}));
}

/// Runs a model graph over rows of samples in fixed chunks.
template <typename Fill>
std::vector<Point2> run_chunks(Graph& g, NodeId x, NodeId out, std::size_t count, Fill&& fill)
{
    std::vector<Point2> result;
    result.reserve(count);
    for (std::size_t start = 0; start < count; start += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, count - start);
        g.set_value(x, fill(start, n));
        const Tensor& y = g.evaluate(out);
        for (std::size_t i = 0; i < n; ++i) {
            result.push_back({y[2 * i], y[2 * i + 1]});
        }
    }
    return result;
}

void write_le_f64(std::ostream& out, std::span<const double> values)
{
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double v : values) {
            const auto bits = __builtin_bswap64(std::bit_cast<std::uint64_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    }
}

void read_le_f64(std::istream& in, std::span<double> values)
{
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) {
        throw FormatError("model payload is truncated");
    }
    if constexpr (std::endian::native != std::endian::little) {
        for (double& v : values) {
            v = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(v)));
        }
    }
}

} // namespace

std::string to_string(Arch arch) { return arch == Arch::dnn_a ? "DNN_A" : "DNN_B"; }

Arch arch_from_string(const std::string& text)
{
    if (text == "DNN_A" || text == "dnn_a") return Arch::dnn_a;
    if (text == "DNN_B" || text == "dnn_b") return Arch::dnn_b;
    throw FormatError("unknown architecture '" + text + "', expected DNN_A or DNN_B");
}

std::vector<LayerSpec> table_layers(Arch arch, std::size_t width_divisor)
{
    require(width_divisor >= 1, "width divisor must be at least 1");
    auto w = [&](std::size_t width) { return std::max<std::size_t>(1, width / width_divisor); };
    if (arch == Arch::dnn_a) {
        return {
            {LayerKind::fc, w(1024), Activation::linear}, {LayerKind::fc, w(512), Activation::relu},
            {LayerKind::fc, w(1024), Activation::linear}, {LayerKind::fc, w(512), Activation::relu},
            {LayerKind::fc, w(1024), Activation::linear}, {LayerKind::fc, 2, Activation::sigmoid},
        };
    }
    return {
        {LayerKind::conv1x1, w(256), Activation::relu}, {LayerKind::conv1x1, w(128), Activation::relu},
        {LayerKind::conv1x1, w(128), Activation::relu}, {LayerKind::fc, w(512), Activation::relu},
        {LayerKind::fc, w(256), Activation::relu},      {LayerKind::fc, 2, Activation::sigmoid},
    };
}

std::size_t LocalizationModel::parameter_count() const
{
    std::size_t total = 0;
    for (const Tensor& t : theta) {
        total += t.size();
    }
    return total;
}

LocalizationModel init_model(Arch arch, std::size_t n_antennas, std::size_t n_subcarriers, const AreaBounds& bounds,
                             std::uint64_t seed, std::size_t width_divisor)
{
    require(n_antennas >= 1 && n_subcarriers >= 1, "model input must have at least one antenna and subcarrier");
    require(bounds.width() > 0.0 && bounds.height() > 0.0, "area bounds must have positive extent");
    LocalizationModel m;
    m.arch = arch;
    m.n_antennas = n_antennas;
    m.n_subcarriers = n_subcarriers;
    m.layers = table_layers(arch, width_divisor);
    m.area_bounds = bounds;
    m.seed = seed;
    Rng rng(seed);
    const auto shapes = theta_shapes(m);
    for (std::size_t i = 0; i < shapes.size(); i += 2) {
        const double limit = 1.0 / std::sqrt(static_cast<double>(shapes[i][0]));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        for (std::size_t j = i; j < i + 2; ++j) {
            Tensor t(shapes[j]);
            for (double& v : t.data()) {
                v = uniform(rng);
            }
            m.theta.push_back(std::move(t));
        }
    }
    return m;
}

Tensor normalize_input(const AmplitudeSample& x)
{
    require(x.amps.rank() == 2, "amplitude sample must be N x K");
    Tensor out(x.amps.shape());
    const std::size_t k = x.amps.dim(1);
    const auto src = x.amps.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < x.amps.dim(0); ++r) {
        const auto row = src.subspan(r * k, k);
        const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
        for (std::size_t c = 0; c < k; ++c) {
            dst[r * k + c] = *hi == *lo ? 0.5 : (row[c] - *lo) / (*hi - *lo);
        }
    }
    return out;
}

Tensor stack_samples(std::span<const AmplitudeSample> samples)
{
    require(!samples.empty(), "cannot stack an empty sample list");
    const Shape inner = samples[0].amps.shape();
    require(inner.size() == 2, "amplitude sample must be N x K");
    Tensor out(Shape{samples.size(), inner[0], inner[1]});
    auto dst = out.data();
    const std::size_t stride = shape_size(inner);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(samples[i].amps.shape() == inner, "samples differ in shape: " + shape_string(samples[i].amps.shape())
                                                      + " vs " + shape_string(inner));
        std::copy_n(samples[i].amps.data().begin(), stride, dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return out;
}

ModelNodes build_model_graph(Graph& g, const LocalizationModel& m, NodeId x, bool trainable)
{
    const auto shapes = theta_shapes(m);
    require(m.theta.size() == shapes.size(), "model has " + std::to_string(m.theta.size()) + " tensors, expected "
                                                 + std::to_string(shapes.size()));
    ModelNodes nodes;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        require(m.theta[i].shape() == shapes[i], "parameter " + std::to_string(i) + " has shape "
                                                     + shape_string(m.theta[i].shape()) + ", expected "
                                                     + shape_string(shapes[i]));
        const std::string label = (i % 2 == 0 ? "W" : "b") + std::to_string(i / 2);
        nodes.weights.push_back(trainable ? g.parameter(m.theta[i], label) : g.input(m.theta[i], label));
    }

    NodeId h = g.minmax_rows(x);
    std::size_t channels = m.n_antennas;
    if (m.arch == Arch::dnn_a) {
        h = g.reshape(h, {0, m.n_antennas * m.n_subcarriers});
    } else {
        // Subcarriers become rows so a 1x1 convolution is a matmul over antenna channels.
        h = g.reshape(g.swap_last_axes(h), {0, m.n_antennas});
    }
    bool in_conv = m.arch == Arch::dnn_b;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const LayerSpec& layer = m.layers[l];
        if (in_conv && layer.kind == LayerKind::fc) {
            h = g.reshape(h, {0, m.n_subcarriers * channels});
            in_conv = false;
        }
        h = activate(g, g.add(g.matmul(h, nodes.weights[2 * l]), nodes.weights[2 * l + 1]), layer.activation);
        if (layer.kind == LayerKind::conv1x1) {
            nodes.conv_outputs.push_back(h);
        }
        channels = layer.width;
    }
    const AreaBounds& b = m.area_bounds;
    const NodeId scale = g.input(Tensor::vector({b.width(), b.height()}), "area_scale");
    const NodeId offset = g.input(Tensor::vector({b.x_min, b.y_min}), "area_offset");
    nodes.output = g.add(g.mul(h, scale), offset);
    return nodes;
}

std::vector<Point2> predict_batch(const LocalizationModel& m, std::span<const AmplitudeSample> xs)
{
    if (xs.empty()) {
        return {};
    }
    for (const AmplitudeSample& s : xs) {
        check_sample_shape(m, s.amps);
    }
    Graph g;
    const NodeId x = g.input(Tensor(Shape{1, m.n_antennas, m.n_subcarriers}), "x");
    const ModelNodes nodes = build_model_graph(g, m, x, false);
    return run_chunks(g, x, nodes.output, xs.size(),
                      [&](std::size_t start, std::size_t n) { return stack_samples(xs.subspan(start, n)); });
}

Point2 model_forward(const LocalizationModel& m, const AmplitudeSample& x)
{
    return predict_batch(m, std::span(&x, 1)).front();
}

void validate(const TrainConfig& cfg)
{
    require(cfg.epochs >= 1, "epochs must be positive");
    require(cfg.batch_size >= 1, "batch size must be positive");
    require(cfg.learning_rate > 0.0, "learning rate must be positive");
    require(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0, "validation fraction must lie in (0, 1)");
    require(cfg.width_divisor >= 1, "width divisor must be at least 1");
}

LocalizationModel train_localizer(Arch arch, std::span<const DatasetRecord> data, const TrainConfig& cfg,
                                  const AreaBounds& bounds, TrainReport* report, const EpochCallback& on_epoch)
{
    validate(cfg);
    require(!data.empty(), "training set is empty");
    const Shape input_shape = data[0].sample.amps.shape();
    require(input_shape.size() == 2, "training samples must be N x K");
    std::set<std::pair<double, double>> spots;
    for (const DatasetRecord& r : data) {
        require(r.sample.amps.shape() == input_shape, "training samples differ in shape");
        require(bounds.contains(r.location), "label (" + std::to_string(r.location.x) + ", "
                                                 + std::to_string(r.location.y) + ") lies outside the area");
        spots.insert({r.location.x, r.location.y});
    }
    require(spots.size() >= 2, "training needs at least two distinct spots");

    LocalizationModel model = init_model(arch, input_shape[0], input_shape[1], bounds, cfg.seed, cfg.width_divisor);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(data.size()))), 1,
        data.size() - 1);
    const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

    const std::size_t n = input_shape[0];
    const std::size_t k = input_shape[1];
    const std::size_t stride = n * k;
    auto gather = [&](std::span<const std::size_t> idx) {
        Tensor x(Shape{idx.size(), n, k});
        auto dst = x.data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(data[idx[i]].sample.amps.data().begin(), stride,
                        dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
        }
        return x;
    };

    Graph g;
    const NodeId x = g.input(Tensor(Shape{1, n, k}), "x");
    const ModelNodes nodes = build_model_graph(g, model, x, true);
    const NodeId labels = g.input(Tensor(Shape{1, 2}), "labels");
    const NodeId diff = g.sub(nodes.output, labels);
    // Mean over both coordinates halves the squared distance.
    const NodeId loss = g.affine(g.mean(g.mul(diff, diff)), 2.0, 0.0);

    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
    for (NodeId w : nodes.weights) {
        adam_m.emplace_back(g.value(w).shape());
        adam_v.emplace_back(g.value(w).shape());
    }
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    std::size_t step = 0;

    TrainReport local;
    std::vector<Tensor> best = model.theta;
    double best_median = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_total = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::span<const std::size_t> batch(train_idx.data() + start,
                                                     std::min(cfg.batch_size, train_idx.size() - start));
            g.set_value(x, gather(batch));
            Tensor y(Shape{batch.size(), 2});
            for (std::size_t i = 0; i < batch.size(); ++i) {
                y[2 * i] = data[batch[i]].location.x;
                y[2 * i + 1] = data[batch[i]].location.y;
            }
            g.set_value(labels, std::move(y));
            loss_total += g.evaluate(loss).item() * static_cast<double>(batch.size());
            GradientMap grads = g.backward(loss);
            if (cfg.optimizer == Optimizer::adam) {
                ++step;
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
                for (std::size_t p = 0; p < nodes.weights.size(); ++p) {
                    auto gp = grads.at(nodes.weights[p]).data();
                    auto mp = adam_m[p].data();
                    auto vp = adam_v[p].data();
                    for (std::size_t i = 0; i < gp.size(); ++i) {
                        mp[i] = beta1 * mp[i] + (1.0 - beta1) * gp[i];
                        vp[i] = beta2 * vp[i] + (1.0 - beta2) * gp[i] * gp[i];
                        gp[i] = (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
                    }
                }
            }
            sgd_step(g, grads, cfg.learning_rate);
        }

        const std::vector<Point2> preds = run_chunks(g, x, nodes.output, val_idx.size(),
                                                     [&](std::size_t start, std::size_t count) {
                                                         return gather(std::span(val_idx).subspan(start, count));
                                                     });
        std::vector<double> errors;
        errors.reserve(preds.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            errors.push_back(localization_error(preds[i], data[val_idx[i]].location));
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_total / static_cast<double>(train_idx.size());
        stats.validation_median = percentile(errors, 50.0);
        stats.validation_p90 = percentile(errors, 90.0);
        local.history.push_back(stats);
        if (stats.validation_median < best_median) {
            best_median = stats.validation_median;
            local.best_epoch = epoch;
            local.best_validation_median = stats.validation_median;
            local.best_validation_p90 = stats.validation_p90;
            for (std::size_t p = 0; p < nodes.weights.size(); ++p) {
                best[p] = g.value(nodes.weights[p]);
            }
        }
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    model.theta = std::move(best);
    if (report != nullptr) {
        *report = std::move(local);
    }
    return model;
}

void save_model(const std::filesystem::path& path, const LocalizationModel& model,
                const std::optional<Provenance>& provenance)
{
    const auto shapes = theta_shapes(model);
    require(shapes.size() == model.theta.size(), "model parameters do not match its layers");
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : model.layers) {
        layers.push_back({{"kind", l.kind == LayerKind::fc ? "fc" : "conv1x1"},
                          {"width", l.width},
                          {"activation", activation_name(l.activation)}});
    }
    nlohmann::json header = {
        {"format", "fooloc-model"},
        {"version", 1},
        {"arch", to_string(model.arch)},
        {"n_antennas", model.n_antennas},
        {"n_subcarriers", model.n_subcarriers},
        {"layers", layers},
        {"shapes", shapes},
        {"area_bounds",
         {model.area_bounds.x_min, model.area_bounds.x_max, model.area_bounds.y_min, model.area_bounds.y_max}},
        {"seed", model.seed},
        {"payload_values", model.parameter_count()},
    };
    if (provenance) {
        header["config_hash"] = provenance->config_hash;
        header["master_seed"] = provenance->master_seed;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write model " + path.string());
    }
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < model.theta.size(); ++i) {
        require(model.theta[i].shape() == shapes[i], "parameter shape mismatch while saving");
        write_le_f64(out, model.theta[i].data());
    }
    if (!out) {
        throw FormatError("failed writing model " + path.string());
    }
}

LocalizationModel load_model(const std::filesystem::path& path, Provenance* provenance)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open model " + path.string());
    }
    std::string line;
    std::getline(in, line);
    LocalizationModel m;
    try {
        const nlohmann::json h = nlohmann::json::parse(line);
        if (h.at("format").get<std::string>() != "fooloc-model") {
            throw FormatError("not a model file");
        }
        m.arch = arch_from_string(h.at("arch").get<std::string>());
        m.n_antennas = h.at("n_antennas").get<std::size_t>();
        m.n_subcarriers = h.at("n_subcarriers").get<std::size_t>();
        for (const auto& l : h.at("layers")) {
            const std::string kind = l.at("kind").get<std::string>();
            if (kind != "fc" && kind != "conv1x1") {
                throw FormatError("unknown layer kind '" + kind + "'");
            }
            m.layers.push_back({kind == "fc" ? LayerKind::fc : LayerKind::conv1x1, l.at("width").get<std::size_t>(),
                                activation_from_string(l.at("activation").get<std::string>())});
        }
        const auto b = h.at("area_bounds").get<std::vector<double>>();
        if (b.size() != 4) {
            throw FormatError("area_bounds must have four values");
        }
        m.area_bounds = {b[0], b[1], b[2], b[3]};
        m.seed = h.at("seed").get<std::uint64_t>();
        if (h.at("shapes").get<std::vector<Shape>>() != theta_shapes(m)) {
            throw FormatError("declared shapes do not match the layer list");
        }
        if (provenance != nullptr) {
            provenance->config_hash = h.value("config_hash", std::string{});
            provenance->master_seed = h.value("master_seed", std::uint64_t{0});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad model header: " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    for (const Shape& s : theta_shapes(m)) {
        Tensor t(s);
        read_le_f64(in, t.data());
        m.theta.push_back(std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after model payload");
    }
    return m;
}

} // namespace fooloc
