#include "evidseg/cnn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "evidseg/io_util.hpp"
#include "evidseg/kernels.hpp"

namespace evidseg::cnn {

namespace fs = std::filesystem;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

constexpr char kModelMagic[8] = {'E', 'V', 'S', 'G', 'C', 'N', 'N', '1'};
// Samples per gradient partial sum.
constexpr int kGradChunk = 8;

int parse_int(std::string_view s, std::string_view token) {
  int v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || v < 1)
    throw std::invalid_argument("malformed layer token '" + std::string(token) + "'");
  return v;
}

}  // namespace

NetworkArch parse_arch(std::string_view spec, int input_side, int classes) {
  if (input_side < 1) throw std::invalid_argument("input side must be positive");
  if (classes < 2) throw std::invalid_argument("need at least two output classes");
  NetworkArch arch;
  arch.spec = std::string(spec);
  arch.input_side = input_side;
  if (spec.empty()) throw std::invalid_argument("empty architecture spec");

  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t dash = std::min(spec.find('-', pos), spec.size());
    const std::string_view tok = spec.substr(pos, dash - pos);
    if (tok.empty()) throw std::invalid_argument("empty layer token in '" + arch.spec + "'");
    if (tok.starts_with("FC")) {
      arch.layers.push_back({LayerKind::FullyConnected, parse_int(tok.substr(2), tok), 0});
    } else if (tok.back() == 'P') {
      arch.layers.push_back({LayerKind::MaxPool, parse_int(tok.substr(0, tok.size() - 1), tok), 0});
    } else if (const auto c = tok.find('C'); c != std::string_view::npos) {
      arch.layers.push_back({LayerKind::Conv, parse_int(tok.substr(0, c), tok),
                             parse_int(tok.substr(c + 1), tok)});
    } else {
      throw std::invalid_argument("unknown layer token '" + std::string(tok) + "'");
    }
    pos = dash + 1;
  }
  arch.layers.push_back({LayerKind::SoftmaxOutput, classes, 0});

  // Spatial layers must precede the fully connected ones and never shrink
  // the map below 1x1.
  int side = input_side;
  bool flat = false;
  for (const auto& l : arch.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        if (flat) throw std::invalid_argument("convolution after a fully connected layer");
        if (l.kernel > side)
          throw std::invalid_argument("dimension underflow: kernel " + std::to_string(l.kernel) +
                                      " exceeds spatial size " + std::to_string(side));
        side = side - l.kernel + 1;
        break;
      case LayerKind::MaxPool:
        if (flat) throw std::invalid_argument("pooling after a fully connected layer");
        if (l.size > side)
          throw std::invalid_argument("dimension underflow: pool window " + std::to_string(l.size) +
                                      " exceeds spatial size " + std::to_string(side));
        side = side / l.size;
        break;
      default:
        flat = true;
    }
  }
  return arch;
}

std::vector<int> NetworkArch::spatial_trace() const {
  std::vector<int> trace{input_side};
  int side = input_side;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv)
      side = side - l.kernel + 1;
    else if (l.kind == LayerKind::MaxPool)
      side = side / l.size;
    else
      continue;
    trace.push_back(side);
  }
  return trace;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), values(count(), 0.0) {}

std::size_t Tensor::count() const {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw std::invalid_argument("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
}

namespace {

struct Dims {
  int c, h, w;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
};

// Input dims of each layer plus the final output dims.
std::vector<Dims> layer_dims(const NetworkArch& arch) {
  std::vector<Dims> dims{{arch.input_channels, arch.input_side, arch.input_side}};
  for (const auto& l : arch.layers) {
    const Dims d = dims.back();
    switch (l.kind) {
      case LayerKind::Conv:
        dims.push_back({l.size, d.h - l.kernel + 1, d.w - l.kernel + 1});
        break;
      case LayerKind::MaxPool:
        dims.push_back({d.c, d.h / l.size, d.w / l.size});
        break;
      case LayerKind::FullyConnected:
      case LayerKind::SoftmaxOutput:
        dims.push_back({l.size, 1, 1});
        break;
    }
  }
  return dims;
}

bool has_params(LayerKind k) { return k != LayerKind::MaxPool; }

void activate(Activation a, std::span<double> v) {
  if (a == Activation::Relu)
    for (double& x : v) x = x > 0.0 ? x : 0.0;
  else
    for (double& x : v) x = std::tanh(x);
}

// Multiplies `grad` by the activation derivative expressed through the
// activation's output.
void activation_backward(Activation a, std::span<const double> out, std::span<double> grad) {
  if (a == Activation::Relu) {
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!(out[i] > 0.0)) grad[i] = 0.0;
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - out[i] * out[i];
  }
}

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

}  // namespace

struct Network::Trace {
  std::vector<AlignedVector<double>> acts;     // acts[0] input, acts[l+1] output of layer l
  std::vector<std::vector<int>> pool_argmax;  // indexed by layer
};

Network::Network(NetworkArch arch, Activation activation, std::uint64_t seed)
    : arch_(std::move(arch)), activation_(activation) {
  if (arch_.layers.empty() || arch_.layers.back().kind != LayerKind::SoftmaxOutput)
    throw std::invalid_argument("architecture must end in a softmax output layer");
  const auto dims = layer_dims(arch_);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
    const auto& spec = arch_.layers[l];
    if (!has_params(spec.kind)) continue;
    LayerParams p;
    const Dims in = dims[l];
    int fan_in = 0;
    if (spec.kind == LayerKind::Conv) {
      p.weight_shape = {spec.size, in.c, spec.kernel, spec.kernel};
      fan_in = in.c * spec.kernel * spec.kernel;
    } else {
      p.weight_shape = {spec.size, static_cast<int>(in.size())};
      fan_in = static_cast<int>(in.size());
    }
    std::size_t n = 1;
    for (int d : p.weight_shape) n *= static_cast<std::size_t>(d);
    const double limit = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    p.weights.resize(n);
    for (double& w : p.weights) w = dist(rng);
    p.bias.assign(static_cast<std::size_t>(spec.size), 0.0);
    params_.push_back(std::move(p));
  }
  velocity_ = params_;
  for (auto& v : velocity_) {
    std::fill(v.weights.begin(), v.weights.end(), 0.0);
    std::fill(v.bias.begin(), v.bias.end(), 0.0);
  }
}

void Network::check_batch(const Tensor& batch) const {
  if (batch.shape.size() != 4 || batch.shape[1] != arch_.input_channels ||
      batch.shape[2] != arch_.input_side || batch.shape[3] != arch_.input_side)
    throw std::invalid_argument("batch shape does not match network input " +
                                std::to_string(arch_.input_channels) + "x" +
                                std::to_string(arch_.input_side) + "x" +
                                std::to_string(arch_.input_side));
  if (batch.values.size() != batch.count()) throw std::invalid_argument("tensor value count mismatch");
}

void Network::forward_sample(std::span<const double> input, Trace& trace) const {
  const auto dims = layer_dims(arch_);
  trace.acts.resize(arch_.layers.size() + 1);
  trace.pool_argmax.resize(arch_.layers.size());
  trace.acts[0].assign(input.begin(), input.end());
  std::size_t p = 0;
  for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
    const auto& spec = arch_.layers[l];
    const Dims in = dims[l];
    const Dims out = dims[l + 1];
    const AlignedVector<double>& x = trace.acts[l];
    AlignedVector<double>& y = trace.acts[l + 1];
    y.assign(out.size(), 0.0);
    switch (spec.kind) {
      case LayerKind::Conv: {
        const kernels::ConvShape shape{in.c, in.h, in.w, spec.size, spec.kernel};
        kernels::conv2d_forward(shape, x, params_[p].weights, params_[p].bias, y);
        activate(activation_, y);
        ++p;
        break;
      }
      case LayerKind::MaxPool: {
        const int m = spec.size;
        auto& arg = trace.pool_argmax[l];
        arg.assign(out.size(), 0);
        for (int c = 0; c < out.c; ++c)
          for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox) {
              int best = -1;
              for (int dy = 0; dy < m; ++dy)
                for (int dx = 0; dx < m; ++dx) {
                  const int idx = (c * in.h + oy * m + dy) * in.w + ox * m + dx;
                  if (best < 0 || x[idx] > x[best]) best = idx;
                }
              const std::size_t o = (static_cast<std::size_t>(c) * out.h + oy) * out.w + ox;
              arg[o] = best;
              y[o] = x[best];
            }
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::SoftmaxOutput: {
        Eigen::Map<const RowMatrix> w(params_[p].weights.data(), out.c, static_cast<Eigen::Index>(in.size()));
        Eigen::Map<const Vec> xin(x.data(), static_cast<Eigen::Index>(x.size()));
        Eigen::Map<const Vec> b(params_[p].bias.data(), out.c);
        Eigen::Map<Vec> yo(y.data(), out.c);
        yo.noalias() = w * xin;
        yo += b;
        if (spec.kind == LayerKind::FullyConnected)
          activate(activation_, y);
        else
          softmax_inplace(y);
        ++p;
        break;
      }
    }
  }
}

double Network::backward_sample(const Trace& trace, int label, double weight,
                                std::vector<LayerParams>& grads) const {
  const auto dims = layer_dims(arch_);
  const AlignedVector<double>& probs = trace.acts.back();
  const double loss = -std::log(probs[label]) * weight;

  AlignedVector<double> grad(probs);
  grad[label] -= 1.0;
  for (double& g : grad) g *= weight;

  int p = static_cast<int>(params_.size()) - 1;
  for (int l = static_cast<int>(arch_.layers.size()) - 1; l >= 0; --l) {
    const auto& spec = arch_.layers[l];
    const Dims in = dims[l];
    const Dims out = dims[l + 1];
    const AlignedVector<double>& x = trace.acts[l];
    const bool need_input_grad = l > 0;
    AlignedVector<double> grad_in(need_input_grad ? in.size() : 0, 0.0);
    switch (spec.kind) {
      case LayerKind::SoftmaxOutput:
      case LayerKind::FullyConnected: {
        if (spec.kind == LayerKind::FullyConnected)
          activation_backward(activation_, trace.acts[l + 1], grad);
        const auto n = static_cast<Eigen::Index>(in.size());
        Eigen::Map<const Vec> dz(grad.data(), out.c);
        Eigen::Map<const Vec> xin(x.data(), n);
        Eigen::Map<RowMatrix> gw(grads[p].weights.data(), out.c, n);
        Eigen::Map<Vec> gb(grads[p].bias.data(), out.c);
        gw.noalias() += dz * xin.transpose();
        gb += dz;
        if (need_input_grad) {
          Eigen::Map<const RowMatrix> w(params_[p].weights.data(), out.c, n);
          Eigen::Map<Vec>(grad_in.data(), n).noalias() = w.transpose() * dz;
        }
        --p;
        break;
      }
      case LayerKind::MaxPool: {
        const auto& arg = trace.pool_argmax[l];
        for (std::size_t o = 0; o < arg.size(); ++o) grad_in[arg[o]] += grad[o];
        break;
      }
      case LayerKind::Conv: {
        activation_backward(activation_, trace.acts[l + 1], grad);
        const kernels::ConvShape shape{in.c, in.h, in.w, spec.size, spec.kernel};
        const int rows = in.c * spec.kernel * spec.kernel;
        const int plane = out.h * out.w;
        RowMatrix cols(rows, plane);
        kernels::im2col(shape, x, std::span<double>(cols.data(), cols.size()));
        Eigen::Map<const RowMatrix> dz(grad.data(), spec.size, plane);
        Eigen::Map<RowMatrix> gw(grads[p].weights.data(), spec.size, rows);
        Eigen::Map<Vec> gb(grads[p].bias.data(), spec.size);
        gw.noalias() += dz * cols.transpose();
        gb += dz.rowwise().sum();
        if (need_input_grad) {
          Eigen::Map<const RowMatrix> w(params_[p].weights.data(), spec.size, rows);
          RowMatrix dcols = w.transpose() * dz;
          kernels::col2im_add(shape, std::span<const double>(dcols.data(), dcols.size()), grad_in);
        }
        --p;
        break;
      }
    }
    grad = std::move(grad_in);
  }
  return loss;
}

std::vector<ScoreVector> Network::forward(const Tensor& batch) const {
  check_batch(batch);
  const int n = batch.shape[0];
  const std::size_t stride = batch.values.size() / n;
  std::vector<ScoreVector> out(n);
  Trace trace;
  for (int i = 0; i < n; ++i) {
    forward_sample(std::span<const double>(batch.values).subspan(i * stride, stride), trace);
    out[i].assign(trace.acts.back().begin(), trace.acts.back().end());
  }
  return out;
}

double Network::loss_and_gradient(const Tensor& batch, std::span<const int> labels,
                                  std::vector<LayerParams>& grads,
                                  std::span<const double> class_weights) const {
  check_batch(batch);
  const int n = batch.shape[0];
  if (labels.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= arch_.classes()) throw std::invalid_argument("label out of range");
  auto zeroed = [&] {
    std::vector<LayerParams> z = params_;
    for (auto& g : z) {
      std::fill(g.weights.begin(), g.weights.end(), 0.0);
      std::fill(g.bias.begin(), g.bias.end(), 0.0);
    }
    return z;
  };
  // Fixed-size chunks reduced in chunk order keep the sum independent of the
  // thread count.
  const int chunks = (n + kGradChunk - 1) / kGradChunk;
  std::vector<std::vector<LayerParams>> partial(chunks);
  std::vector<double> partial_loss(chunks, 0.0);
  const std::size_t stride = batch.values.size() / n;
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < chunks; ++c) {
    partial[c] = zeroed();
    Trace trace;
    for (int i = c * kGradChunk; i < std::min(n, (c + 1) * kGradChunk); ++i) {
      forward_sample(std::span<const double>(batch.values).subspan(i * stride, stride), trace);
      const double w = class_weights.empty() ? 1.0 : class_weights[labels[i]];
      partial_loss[c] += backward_sample(trace, labels[i], w, partial[c]);
    }
  }
  grads = std::move(partial[0]);
  double loss = partial_loss[0];
  for (int c = 1; c < chunks; ++c) {
    loss += partial_loss[c];
    for (std::size_t p = 0; p < grads.size(); ++p) {
      for (std::size_t j = 0; j < grads[p].weights.size(); ++j) grads[p].weights[j] += partial[c][p].weights[j];
      for (std::size_t j = 0; j < grads[p].bias.size(); ++j) grads[p].bias[j] += partial[c][p].bias[j];
    }
  }
  const double inv = 1.0 / n;
  for (auto& g : grads) {
    for (double& v : g.weights) v *= inv;
    for (double& v : g.bias) v *= inv;
  }
  return loss * inv;
}

double Network::backward_and_step(const Tensor& batch, std::span<const int> labels,
                                  const TrainConfig& config, std::span<const double> class_weights) {
  std::vector<LayerParams> grads;
  const double loss = loss_and_gradient(batch, labels, grads, class_weights);
  if (!std::isfinite(loss))
    throw TrainingDiverged("non-finite training loss; reduce the learning rate");
  const double mu = config.momentum;
  const double lr = config.learning_rate;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto step = [&](AlignedVector<double>& w, AlignedVector<double>& v, const AlignedVector<double>& g) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] - lr * g[i];
        w[i] += v[i];
      }
    };
    step(params_[p].weights, velocity_[p].weights, grads[p].weights);
    step(params_[p].bias, velocity_[p].bias, grads[p].bias);
  }
  return loss;
}

void Network::round_to_float() {
  for (auto& p : params_) {
    for (double& w : p.weights) w = static_cast<float>(w);
    for (double& b : p.bias) b = static_cast<float>(b);
  }
  if (mean_)
    for (double& m : *mean_) m = static_cast<float>(m);
}

void Network::save(const fs::path& path) const {
  if (!mean_) throw std::logic_error("cannot save a network without normalization statistics");
  write_atomically(path, [&](std::ostream& out) {
    out.write(kModelMagic, sizeof(kModelMagic));
    write_u32_le(out, static_cast<std::uint32_t>(arch_.spec.size()));
    out.write(arch_.spec.data(), static_cast<std::streamsize>(arch_.spec.size()));
    write_u32_le(out, static_cast<std::uint32_t>(arch_.input_side));
    write_u32_le(out, static_cast<std::uint32_t>(arch_.classes()));
    write_u32_le(out, activation_ == Activation::Relu ? 0u : 1u);
    for (double m : *mean_) write_f32_le(out, static_cast<float>(m));
    write_u32_le(out, static_cast<std::uint32_t>(params_.size()));
    auto tensor = [&](const std::vector<int>& shape, const AlignedVector<double>& values) {
      write_u32_le(out, static_cast<std::uint32_t>(shape.size()));
      for (int d : shape) write_u32_le(out, static_cast<std::uint32_t>(d));
      for (double v : values) write_f32_le(out, static_cast<float>(v));
    };
    for (const auto& p : params_) {
      tensor(p.weight_shape, p.weights);
      tensor({static_cast<int>(p.bias.size())}, p.bias);
    }
  });
}

Network Network::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open model");
  try {
    char magic[sizeof(kModelMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kModelMagic))
      throw IoError(path, "not a model file (bad magic)");
    const std::uint32_t len = read_u32_le(in);
    if (len > 4096) throw IoError(path, "implausible architecture string length");
    std::string spec(len, '\0');
    in.read(spec.data(), len);
    const int side = static_cast<int>(read_u32_le(in));
    const int classes = static_cast<int>(read_u32_le(in));
    const Activation act = read_u32_le(in) == 0 ? Activation::Relu : Activation::Tanh;
    std::array<double, 3> mean{};
    for (double& m : mean) m = read_f32_le(in);
    Network net(parse_arch(spec, side, classes), act, 0);
    net.set_normalization(mean);
    if (read_u32_le(in) != net.params_.size()) throw IoError(path, "parameter layer count mismatch");
    auto tensor = [&](const std::vector<int>& expected, AlignedVector<double>& values) {
      const std::uint32_t nd = read_u32_le(in);
      std::vector<int> shape(nd);
      for (int& d : shape) d = static_cast<int>(read_u32_le(in));
      if (shape != expected) throw IoError(path, "parameter shape mismatch");
      for (double& v : values) v = read_f32_le(in);
    };
    for (auto& p : net.params_) {
      tensor(p.weight_shape, p.weights);
      tensor({static_cast<int>(p.bias.size())}, p.bias);
    }
    return net;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(path, std::string("corrupt model: ") + e.what());
  }
}

Tensor to_tensor(const PatchBatch& patches, std::span<const std::size_t> indices,
                 const std::array<double, 3>& mean) {
  const int side = patches.side;
  Tensor t({static_cast<int>(indices.size()), 3, side, side});
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto src = patches.patch(indices[n]);
    double* dst = t.values.data() + n * plane * 3;
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) dst[c * plane + i] = src[i * 3 + c] - mean[c];
  }
  return t;
}

std::vector<ScoreVector> predict_scores(const Network& network, const PatchBatch& patches,
                                        Execution execution) {
  if (!network.normalization()) throw std::invalid_argument("network has no normalization statistics");
  if (patches.count() > 0 && patches.side != network.arch().input_side)
    throw std::invalid_argument("patch side " + std::to_string(patches.side) +
                                " does not match network input " +
                                std::to_string(network.arch().input_side));
  const auto& mean = *network.normalization();
  const auto n = static_cast<std::ptrdiff_t>(patches.count());
  std::vector<ScoreVector> out(patches.count());
  auto one = [&](std::ptrdiff_t i) {
    const std::size_t idx = static_cast<std::size_t>(i);
    out[idx] = network.forward(to_tensor(patches, std::span(&idx, 1), mean)).front();
  };
  if (execution == Execution::Serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  } else {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  }
  return out;
}

ConfusionMatrix confusion_of(const PatchBatch& patches, std::span<const ScoreVector> scores,
                             int classes) {
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < patches.count(); ++i) {
    const int truth = patches.records[i].ground_truth;
    if (truth == kVoidLabel) continue;
    m.add(truth, argmax(scores[i]));
  }
  return m;
}

TrainResult train(const PatchBatch& patches, const NetworkArch& arch, const TrainConfig& config,
                  const PatchBatch* validation) {
  config.validate();
  if (patches.count() > 0 && patches.side != arch.input_side)
    throw std::invalid_argument("patch side does not match architecture input side");
  const int classes = arch.classes();
  std::vector<std::size_t> samples;
  std::vector<int> labels;
  for (std::size_t i = 0; i < patches.count(); ++i) {
    const int y = patches.records[i].ground_truth;
    if (y == kVoidLabel) continue;
    if (y < 0 || y >= classes)
      throw std::invalid_argument("training label " + std::to_string(y) + " out of range");
    samples.push_back(i);
    labels.push_back(y);
  }
  if (samples.empty()) throw std::invalid_argument("empty training set");

  std::array<double, 3> mean{};
  const std::size_t plane = static_cast<std::size_t>(arch.input_side) * arch.input_side;
  for (std::size_t s : samples) {
    const auto px = patches.patch(s);
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) mean[c] += px[i * 3 + c];
  }
  for (double& m : mean) m = static_cast<float>(m / (static_cast<double>(samples.size()) * plane));

  std::vector<double> class_weights;
  if (config.inverse_frequency_weights) {
    std::vector<double> freq(classes, 0.0);
    for (int y : labels) freq[y] += 1.0;
    const double present = static_cast<double>(std::count_if(freq.begin(), freq.end(), [](double f) { return f > 0; }));
    class_weights.resize(classes, 0.0);
    for (int c = 0; c < classes; ++c)
      if (freq[c] > 0) class_weights[c] = static_cast<double>(labels.size()) / (present * freq[c]);
  }

  Network net(arch, config.activation, config.seed);
  net.set_normalization(mean);
  std::mt19937_64 shuffler(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_losses;
  std::vector<std::size_t> batch_idx;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffler);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch_idx.clear();
      batch_labels.clear();
      for (std::size_t j = start; j < end; ++j) {
        batch_idx.push_back(samples[order[j]]);
        batch_labels.push_back(labels[order[j]]);
      }
      const Tensor t = to_tensor(patches, batch_idx, mean);
      total += net.backward_and_step(t, batch_labels, config, class_weights) *
               static_cast<double>(end - start);
    }
    epoch_losses.push_back(total / static_cast<double>(order.size()));
  }
  net.round_to_float();

  const auto scores = predict_scores(net, patches);
  ConfusionMatrix confusion = confusion_of(patches, scores, classes);
  const double accuracy = static_cast<double>(confusion.trace()) / static_cast<double>(confusion.total());
  TrainResult result{std::move(net), std::move(confusion), accuracy, std::nullopt, std::nullopt,
                     std::move(epoch_losses)};
  if (validation && validation->count() > 0) {
    const auto vs = predict_scores(result.network, *validation);
    ConfusionMatrix vc = confusion_of(*validation, vs, classes);
    if (vc.total() > 0)
      result.validation_accuracy = static_cast<double>(vc.trace()) / static_cast<double>(vc.total());
    result.validation_confusion = std::move(vc);
  }
  return result;
}

void save_scores_csv(std::span<const ScoreRow> rows, const fs::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    const std::size_t classes = rows.empty() ? kNumClasses : rows.front().scores.size();
    out << "image_id,superpixel_id";
    for (std::size_t c = 0; c < classes; ++c) out << ",s" << c;
    out << '\n';
    for (const auto& r : rows) {
      out << r.image_id << ',' << r.superpixel_id;
      for (double s : r.scores) out << ',' << format_double(s);
      out << '\n';
    }
  });
}

std::vector<ScoreRow> load_scores_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("image_id,superpixel_id"))
    throw IoError(path, "missing score CSV header");
  const std::size_t classes = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 1;
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> cells;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc{} || next != comma)
        throw IoError(path, "malformed number on line " + std::to_string(lineno));
      cells.push_back(v);
      p = comma + 1;
    }
    if (cells.size() != classes + 2)
      throw IoError(path, "wrong column count on line " + std::to_string(lineno));
    rows.push_back({static_cast<int>(cells[0]), static_cast<int>(cells[1]),
                    ScoreVector(cells.begin() + 2, cells.end())});
  }
  return rows;
}

}  // namespace evidseg::cnn
