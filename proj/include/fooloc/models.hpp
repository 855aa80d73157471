#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fooloc/channel.hpp"
#include "fooloc/geometry.hpp"
#include "fooloc/graph.hpp"

namespace fooloc {

enum class Arch { dnn_a, dnn_b };
enum class LayerKind { fc, conv1x1 };
enum class Activation { linear, relu, sigmoid };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& text);

struct LayerSpec {
    LayerKind kind = LayerKind::fc;
    std::size_t width = 0; ///< output units or filters
    Activation activation = Activation::linear;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer stack of an architecture; width_divisor > 1 shrinks hidden widths for quick tests.
std::vector<LayerSpec> table_layers(Arch arch, std::size_t width_divisor = 1);

struct LocalizationModel {
    Arch arch = Arch::dnn_a;
    std::size_t n_antennas = 0;
    std::size_t n_subcarriers = 0;
    std::vector<LayerSpec> layers;
    std::vector<Tensor> theta; ///< weight then bias for every layer
    AreaBounds area_bounds;
    std::uint64_t seed = 0;

    std::size_t parameter_count() const;
};

/// Fresh model with weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
LocalizationModel init_model(Arch arch, std::size_t n_antennas, std::size_t n_subcarriers, const AreaBounds& bounds,
                             std::uint64_t seed, std::size_t width_divisor = 1);

/// Per-antenna min-max scaling of the amplitudes; constant rows map to 0.5.
Tensor normalize_input(const AmplitudeSample& x);

/// Stacks N x K samples into a B x N x K tensor.
Tensor stack_samples(std::span<const AmplitudeSample> samples);

struct ModelNodes {
    NodeId output = 0;                ///< B x 2, meters
    std::vector<NodeId> weights;      ///< aligned with LocalizationModel::theta
    std::vector<NodeId> conv_outputs; ///< (B*K) x filters activations, DNN_B only
};

/**
 * Appends the model to a graph. x must evaluate to raw B x N x K amplitudes;
 * normalization happens inside the graph so gradients reach x. Weights become
 * parameters when trainable, constant inputs otherwise.
 */
ModelNodes build_model_graph(Graph& graph, const LocalizationModel& model, NodeId x, bool trainable);

Point2 model_forward(const LocalizationModel& model, const AmplitudeSample& x);
std::vector<Point2> predict_batch(const LocalizationModel& model, std::span<const AmplitudeSample> xs);

enum class Optimizer { adam, sgd };

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    double validation_fraction = 0.2;
    Optimizer optimizer = Optimizer::adam;
    std::size_t width_divisor = 1;
};

void validate(const TrainConfig& cfg);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;      ///< mean squared distance, m^2
    double validation_median = 0.0;
    double validation_p90 = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_validation_median = 0.0;
    double best_validation_p90 = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on labeled samples and returns the parameters with the lowest validation median error.
LocalizationModel train_localizer(Arch arch, std::span<const DatasetRecord> data, const TrainConfig& cfg,
                                  const AreaBounds& bounds, TrainReport* report = nullptr,
                                  const EpochCallback& on_epoch = {});

/// JSON header line followed by raw little-endian float64 parameters in layer order.
void save_model(const std::filesystem::path& path, const LocalizationModel& model,
                const std::optional<Provenance>& provenance = {});
LocalizationModel load_model(const std::filesystem::path& path, Provenance* provenance = nullptr);

} // namespace fooloc
