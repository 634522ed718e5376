#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "evidseg/cnn.hpp"
#include "evidseg/kernels.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace evidseg;
using namespace evidseg::cnn;

namespace {

// Two-class colour blobs: class 0 reddish, class 1 bluish, random brightness
// and a random dark disc.
PatchBatch blob_batch(oracle::Rng& rng, int count, int side) {
  PatchBatch b;
  b.side = side;
  for (int i = 0; i < count; ++i) {
    const int cls = i % 2;
    Patch p{side, std::vector<float>(static_cast<std::size_t>(side) * side * 3), i, NeighborLevel(0)};
    const double cx = oracle::uniform(rng, 0, side), cy = oracle::uniform(rng, 0, side);
    const double rad = oracle::uniform(rng, 1, side / 2.0);
    const double gain = oracle::uniform(rng, 0.6, 1.0);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const bool disc = std::hypot(r - cy, c - cx) < rad;
        const double k = disc ? 0.3 * gain : gain;
        float* px = &p.data[(static_cast<std::size_t>(r) * side + c) * 3];
        px[0] = static_cast<float>(cls == 0 ? 0.9 * k : 0.1 * k);
        px[1] = static_cast<float>(0.2 * k);
        px[2] = static_cast<float>(cls == 0 ? 0.1 * k : 0.9 * k);
      }
    b.append(p, PatchRecord{0, i, cls});
  }
  return b;
}

void zero_params(Network& net) {
  for (auto& p : net.params()) {
    std::fill(p.weights.begin(), p.weights.end(), 0.0);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("parse_arch traces") {
  const auto a0 = parse_arch("32C5-2P-64C3-2P-FC256", 24);
  CHECK(a0.spatial_trace() == std::vector<int>{24, 20, 10, 8, 4});
  REQUIRE(a0.layers.size() == 6u);
  CHECK(a0.layers[0] == LayerSpec{LayerKind::Conv, 32, 5});
  CHECK(a0.layers[1] == LayerSpec{LayerKind::MaxPool, 2, 0});
  CHECK(a0.layers[2] == LayerSpec{LayerKind::Conv, 64, 3});
  CHECK(a0.layers[4] == LayerSpec{LayerKind::FullyConnected, 256, 0});
  CHECK(a0.layers[5] == LayerSpec{LayerKind::SoftmaxOutput, 8, 0});
  CHECK(a0.classes() == 8);

  CHECK(parse_arch("32C7-2P-64C5-2P-FC256", 32).spatial_trace() == std::vector<int>{32, 26, 13, 9, 4});
  CHECK(parse_arch("32C7-2P-64C5-2P-FC256", 48).spatial_trace() == std::vector<int>{48, 42, 21, 17, 8});
}

TEST_CASE("parse_arch errors") {
  try {
    parse_arch("32C9", 8);
    FAIL("expected underflow");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("dimension underflow") != std::string::npos);
  }
  CHECK_THROWS(parse_arch("32X5", 24));
  CHECK_THROWS(parse_arch("", 24));
  CHECK_THROWS(parse_arch("32C5--2P", 24));
  CHECK_THROWS(parse_arch("FC10-2P", 24));
  CHECK_THROWS(parse_arch("2P-2P-2P-2P-2P", 24));
}

TEST_CASE("tensor and parameter storage is 64-byte aligned") {
  auto aligned = [](const double* p) { return reinterpret_cast<std::uintptr_t>(p) % 64 == 0; };
  for (int n : {1, 3, 7, 65}) {
    Tensor t({n, 3, 1, 1});
    CHECK(aligned(t.values.data()));
  }
  const Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 1);
  for (const auto& p : net.params()) {
    CHECK(aligned(p.weights.data()));
    CHECK(aligned(p.bias.data()));
  }
}

TEST_CASE("zero weights give a uniform distribution") {
  Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 1);
  zero_params(net);
  oracle::Rng rng(1);
  for (const auto& s : net.forward(oracle::random_batch(rng, 3, 8)))
    for (double v : s) CHECK(v == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("hand-computed 1x1 convolution") {
  Network net(parse_arch("1C1", 2), Activation::Relu, 1);
  zero_params(net);
  auto& p = net.params();
  REQUIRE(p.size() == 2u);
  p[0].weights[0] = 1.0;  // picks channel 0
  for (int k = 0; k < 4; ++k) p[1].weights[k * 4 + k] = 1.0;
  Tensor x({1, 3, 2, 2});
  const double in[4] = {0.5, -1.0, 2.0, 0.0};
  for (int i = 0; i < 4; ++i) {
    x.values[i] = in[i];
    x.values[4 + i] = 7.0;  // ignored channels
    x.values[8 + i] = -3.0;
  }
  // Logits: relu(input) on classes 0..3, zero elsewhere.
  const double logits[8] = {0.5, 0.0, 2.0, 0.0, 0, 0, 0, 0};
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  const auto s = net.forward(x).front();
  for (int k = 0; k < 8; ++k) CHECK(s[k] == doctest::Approx(std::exp(logits[k]) / z).epsilon(1e-12));
}

TEST_CASE("softmax is invariant to a shift of the logits") {
  Network net(parse_arch("FC8", 2), Activation::Relu, 3);
  zero_params(net);
  oracle::Rng rng(2);
  const auto x = oracle::random_batch(rng, 2, 2);
  net.params()[1].bias = {0.3, -1.0, 2.0, 0.0, 0.1, 5.0, -3.0, 1.0};
  const auto a = net.forward(x);
  for (double& b : net.params()[1].bias) b += 40.0;
  const auto b = net.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::accumulate(a[i].begin(), a[i].end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 0; k < 8; ++k) CHECK(std::abs(a[i][k] - b[i][k]) < 1e-6);
  }
}

TEST_CASE("reference forward pass reproduces the library loss") {
  for (const char* spec : {"4C3-2P-FC8", "2C3", "2C1-2P", "FC5"}) {
    for (Activation act : {Activation::Relu, Activation::Tanh}) {
      Network net(parse_arch(spec, 8), act, 11);
      oracle::Rng rng(11);
      for (auto& p : net.params())
        for (double& b : p.bias) b = oracle::uniform(rng, -0.1, 0.1);
      const auto batch = oracle::random_batch(rng, 4, 8);
      const std::vector<int> labels{0, 3, 7, 3};
      std::vector<LayerParams> g;
      CHECK(oracle::reference_pass(net, batch, labels).loss ==
            doctest::Approx(net.loss_and_gradient(batch, labels, g)).epsilon(1e-12));
    }
  }
}

namespace {

struct GradCase {
  std::string spec;
  Activation act;
  std::uint64_t seed;
};

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> out;
  for (const char* spec : {"4C3-2P-FC8", "2C3", "2C1-2P", "FC5"})
    for (Activation act : {Activation::Relu, Activation::Tanh})
      for (std::uint64_t seed = 1; seed <= 2; ++seed) out.push_back({spec, act, seed});
  return out;
}

oracle::GradCheckResult run_case(const GradCase& c, double eps, bool skip_kinks) {
  Network net(parse_arch(c.spec, 8), c.act, c.seed);
  oracle::Rng rng(c.seed * 7);
  for (auto& p : net.params())
    for (double& b : p.bias) b = oracle::uniform(rng, -0.1, 0.1);
  const auto batch = oracle::random_batch(rng, 4, 8);
  return oracle::gradient_check(net, batch, std::vector<int>{0, 3, 7, 3}, eps, skip_kinks);
}

}  // namespace

TEST_CASE("analytic gradients match finite differences at eps 1e-3 away from kinks") {
  for (const auto& c : grad_cases()) {
    const auto r = run_case(c, 1e-3, true);
    INFO(c.spec << " act " << static_cast<int>(c.act) << " seed " << c.seed << " worst " << r.worst);
    CHECK(r.max_rel_error < 1e-3);
    // Kinks are rare; a large count would hide a real routing bug.
    CHECK(r.kinks * 20 <= r.checked + r.kinks);
  }
}

TEST_CASE("analytic gradients match finite differences at eps 1e-6 everywhere") {
  for (const auto& c : grad_cases()) {
    const auto r = run_case(c, 1e-6, false);
    INFO(c.spec << " act " << static_cast<int>(c.act) << " seed " << c.seed << " worst " << r.worst);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("duplicating a sample leaves the mean loss and gradient unchanged") {
  Network net(parse_arch("2C1-2P", 4), Activation::Relu, 5);
  oracle::Rng rng(5);
  auto one = oracle::random_batch(rng, 1, 4);
  Tensor two({2, 3, 4, 4});
  std::copy(one.values.begin(), one.values.end(), two.values.begin());
  std::copy(one.values.begin(), one.values.end(), two.values.begin() + one.values.size());
  std::vector<LayerParams> g1, g2;
  const double l1 = net.loss_and_gradient(one, std::vector<int>{2}, g1);
  const double l2 = net.loss_and_gradient(two, std::vector<int>{2, 2}, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (std::size_t l = 0; l < g1.size(); ++l)
    for (std::size_t i = 0; i < g1[l].weights.size(); ++i)
      CHECK(g1[l].weights[i] == doctest::Approx(g2[l].weights[i]).epsilon(1e-9));
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 4);
  const auto before = net.params();
  oracle::Rng rng(4);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  const double loss = net.backward_and_step(oracle::random_batch(rng, 3, 8), std::vector<int>{1, 2, 3}, cfg);
  CHECK(std::isfinite(loss));
  for (std::size_t l = 0; l < before.size(); ++l) {
    CHECK(net.params()[l].weights == before[l].weights);
    CHECK(net.params()[l].bias == before[l].bias);
  }
}

TEST_CASE("repeated steps overfit a two-sample batch") {
  Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 6);
  oracle::Rng rng(6);
  const auto batch = oracle::random_batch(rng, 2, 8);
  const std::vector<int> labels{1, 5};
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  double loss = 1e9;
  int steps = 0;
  while (steps < 500 && loss >= 0.01) {
    loss = net.backward_and_step(batch, labels, cfg);
    ++steps;
  }
  std::vector<LayerParams> g;
  CHECK(net.loss_and_gradient(batch, labels, g) < 0.01);
}

TEST_CASE("invalid batches are rejected") {
  Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 1);
  CHECK_THROWS(net.forward(Tensor({1, 3, 9, 9})));
  std::vector<LayerParams> g;
  oracle::Rng rng(1);
  CHECK_THROWS(net.loss_and_gradient(oracle::random_batch(rng, 2, 8), std::vector<int>{1}, g));
  CHECK_THROWS(net.loss_and_gradient(oracle::random_batch(rng, 1, 8), std::vector<int>{8}, g));
}

TEST_CASE("training on separable blobs") {
  oracle::Rng rng(10);
  const PatchBatch train_set = blob_batch(rng, 80, 8);
  const auto arch = parse_arch("4C3-2P-FC8", 8);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const TrainResult r = train(train_set, arch, cfg);
  CHECK(r.training_accuracy >= 0.99);
  const auto& m = r.confusion;
  CHECK(m.row_sum(0) == 40);
  CHECK(m.row_sum(1) == 40);
  CHECK(m.at(0, 1) + m.at(1, 0) <= 1);
  CHECK(r.epoch_losses.size() == 15u);

  SUBCASE("deterministic under a fixed seed") {
    const TrainResult again = train(train_set, arch, cfg);
    for (std::size_t l = 0; l < r.network.params().size(); ++l)
      CHECK(r.network.params()[l].weights == again.network.params()[l].weights);
    CHECK(again.confusion == r.confusion);
  }
  SUBCASE("predictions reproduce training labels and are batch invariant") {
    const auto scores = predict_scores(r.network, train_set);
    const auto serial = predict_scores(r.network, train_set, Execution::Serial);
    CHECK(scores == serial);
    int correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      CHECK(std::accumulate(scores[i].begin(), scores[i].end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
      correct += argmax(scores[i]) == train_set.records[i].ground_truth;
    }
    CHECK(correct >= 79);
    std::vector<std::size_t> all(train_set.count());
    std::iota(all.begin(), all.end(), 0);
    const auto many = r.network.forward(to_tensor(train_set, all, *r.network.normalization()));
    for (std::size_t i = 0; i < many.size(); ++i)
      for (int k = 0; k < 8; ++k) CHECK(std::abs(many[i][k] - scores[i][k]) < 1e-6);
    CHECK(confusion_of(train_set, scores, 8) == r.confusion);
  }
  SUBCASE("save and load preserve predictions exactly") {
    oracle::TempDir dir("model");
    r.network.save(dir.path() / "m.bin");
    const Network back = Network::load(dir.path() / "m.bin");
    CHECK(predict_scores(back, train_set) == predict_scores(r.network, train_set));
    std::ofstream(dir.path() / "bad.bin") << "NOTAMODEL";
    CHECK_THROWS_AS(Network::load(dir.path() / "bad.bin"), IoError);
  }
}

TEST_CASE("training input validation") {
  const auto arch = parse_arch("4C3-2P-FC8", 8);
  PatchBatch empty;
  empty.side = 8;
  CHECK_THROWS(train(empty, arch, TrainConfig{}));
  oracle::Rng rng(1);
  PatchBatch bad = blob_batch(rng, 2, 8);
  bad.records[0].ground_truth = 9;
  CHECK_THROWS(train(bad, arch, TrainConfig{}));
  PatchBatch wrong_side = blob_batch(rng, 2, 6);
  CHECK_THROWS(train(wrong_side, arch, TrainConfig{}));
  TrainConfig cfg;
  cfg.momentum = 1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("predict requires normalization statistics") {
  Network net(parse_arch("4C3-2P-FC8", 8), Activation::Relu, 1);
  oracle::Rng rng(1);
  CHECK_THROWS(predict_scores(net, blob_batch(rng, 2, 8)));
}

TEST_CASE("GEMM convolution matches the direct reference") {
  oracle::Rng rng(12);
  for (int t = 0; t < 5; ++t) {
    kernels::ConvShape s{oracle::uniform_int(rng, 1, 4), oracle::uniform_int(rng, 5, 12), oracle::uniform_int(rng, 5, 12),
                         oracle::uniform_int(rng, 1, 6), oracle::uniform_int(rng, 1, 5)};
    std::vector<double> in(static_cast<std::size_t>(s.channels) * s.height * s.width);
    std::vector<double> w(static_cast<std::size_t>(s.filters) * s.channels * s.kernel * s.kernel);
    std::vector<double> b(s.filters);
    for (double& v : in) v = oracle::uniform(rng, -1, 1);
    for (double& v : w) v = oracle::uniform(rng, -1, 1);
    for (double& v : b) v = oracle::uniform(rng, -1, 1);
    const std::size_t out_n = static_cast<std::size_t>(s.filters) * s.out_height() * s.out_width();
    std::vector<double> ref(out_n), fast(out_n);
    kernels::conv2d_forward_reference(s, in, w, b, ref);
    kernels::conv2d_forward(s, in, w, b, fast);
    for (std::size_t i = 0; i < out_n; ++i) CHECK(std::abs(ref[i] - fast[i]) < 1e-12);
  }
}

TEST_CASE("score csv round trip") {
  oracle::TempDir dir("scores");
  oracle::Rng rng(13);
  std::vector<ScoreRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back({i / 2, i, oracle::random_softmax(rng, 8)});
  save_scores_csv(rows, dir.path() / "s.csv");
  const auto back = load_scores_csv(dir.path() / "s.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].image_id == rows[i].image_id);
    CHECK(back[i].superpixel_id == rows[i].superpixel_id);
    CHECK(back[i].scores == rows[i].scores);
  }
}
