#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evidseg/aligned.hpp"
#include "evidseg/classification.hpp"
#include "evidseg/region_graph.hpp"

namespace evidseg::cnn {

enum class LayerKind { Conv, MaxPool, FullyConnected, SoftmaxOutput };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int size = 0;    // filters, units or classes; window for MaxPool
  int kernel = 0;  // Conv only
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer stack parsed from strings such as "32C5-2P-64C3-2P-FC256". A
/// softmax output layer is appended implicitly.
struct NetworkArch {
  std::string spec;
  int input_side = 0;
  int input_channels = 3;
  std::vector<LayerSpec> layers;

  /// Spatial side after the input and after each Conv / MaxPool layer.
  std::vector<int> spatial_trace() const;
  int classes() const { return layers.back().size; }
};

NetworkArch parse_arch(std::string_view spec, int input_side, int classes = 8);

/// Dense row-major tensor.
struct Tensor {
  std::vector<int> shape;
  AlignedVector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  std::size_t count() const;
};

enum class Activation { Relu, Tanh };

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  Activation activation = Activation::Relu;
  bool inverse_frequency_weights = false;

  void validate() const;
};

/// Thrown when a training step produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trainable parameters of one Conv / FullyConnected / SoftmaxOutput layer.
struct LayerParams {
  std::vector<int> weight_shape;
  AlignedVector<double> weights;
  AlignedVector<double> bias;
};

class Network {
 public:
  /// He-uniform weights from a generator seeded with `seed`, zero biases.
  Network(NetworkArch arch, Activation activation, std::uint64_t seed);

  const NetworkArch& arch() const { return arch_; }
  Activation activation() const { return activation_; }

  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  /// Per-channel mean subtracted from [0,1] inputs before the first layer.
  const std::optional<std::array<double, 3>>& normalization() const { return mean_; }
  void set_normalization(std::array<double, 3> mean) { mean_ = mean; }

  /// Batch is N x C x H x W, already normalized. One ScoreVector per sample.
  std::vector<ScoreVector> forward(const Tensor& batch) const;

  /// Mean (optionally class-weighted) cross-entropy and its gradient,
  /// laid out like params().
  double loss_and_gradient(const Tensor& batch, std::span<const int> labels,
                           std::vector<LayerParams>& grads,
                           std::span<const double> class_weights = {}) const;

  /// One SGD-with-momentum step; returns the loss before the step.
  double backward_and_step(const Tensor& batch, std::span<const int> labels,
                           const TrainConfig& config, std::span<const double> class_weights = {});

  /// Rounds every parameter to float precision, the precision models are
  /// stored at.
  void round_to_float();

  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

 private:
  struct Trace;
  void forward_sample(std::span<const double> input, Trace& trace) const;
  double backward_sample(const Trace& trace, int label, double weight,
                         std::vector<LayerParams>& grads) const;
  void check_batch(const Tensor& batch) const;

  NetworkArch arch_;
  Activation activation_;
  std::vector<LayerParams> params_;
  std::vector<LayerParams> velocity_;
  std::optional<std::array<double, 3>> mean_;
};

/// Converts interleaved [0,1] patches to a normalized N x 3 x side x side tensor.
Tensor to_tensor(const PatchBatch& patches, std::span<const std::size_t> indices,
                 const std::array<double, 3>& mean);

struct TrainResult {
  Network network;
  ConfusionMatrix confusion;
  double training_accuracy = 0.0;
  std::optional<ConfusionMatrix> validation_confusion;
  std::optional<double> validation_accuracy;
  std::vector<double> epoch_losses;
};

/// Trains on every non-void patch. Shuffles per epoch with the seeded
/// generator; the confusion matrix and accuracy use the final weights.
TrainResult train(const PatchBatch& patches, const NetworkArch& arch, const TrainConfig& config,
                  const PatchBatch* validation = nullptr);

enum class Execution { Parallel, Serial };

/// One ScoreVector per patch, in order, using the network's stored
/// normalization.
std::vector<ScoreVector> predict_scores(const Network& network, const PatchBatch& patches,
                                        Execution execution = Execution::Parallel);

ConfusionMatrix confusion_of(const PatchBatch& patches, std::span<const ScoreVector> scores,
                             int classes);

/// A score row keyed by image and superpixel id.
struct ScoreRow {
  int image_id = 0;
  int superpixel_id = 0;
  ScoreVector scores;
};

// CSV with header "image_id,superpixel_id,s0,...", scores in round-trip precision.
void save_scores_csv(std::span<const ScoreRow> rows, const std::filesystem::path& path);
std::vector<ScoreRow> load_scores_csv(const std::filesystem::path& path);

}  // namespace evidseg::cnn
