#include <doctest.h>

#include <cmath>
#include <fstream>

#include "evidseg/io_util.hpp"
#include "evidseg/metrics.hpp"
#include "oracles.hpp"

using namespace evidseg;
using namespace evidseg::metrics;

namespace {

// Row-major map with superpixel i covering areas[i] consecutive pixels of one row.
SuperpixelMap strip_map(const std::vector<int>& areas) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < areas.size(); ++i) ids.insert(ids.end(), areas[i], static_cast<int>(i));
  return SuperpixelMap(1, static_cast<int>(ids.size()), ids);
}

}  // namespace

TEST_CASE("superpixel ground truth by majority") {
  const SuperpixelMap sp(1, 12, {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
  const LabelMap labels(1, 12, {3, 3, 3, -1, -1, -1, -1, -1, 2, 2, 5, 5});
  CHECK(superpixel_ground_truth(sp, labels) == std::vector<int>{3, kVoidLabel, 2});
  CHECK_THROWS(superpixel_ground_truth(sp, LabelMap(2, 6, 0)));
}

TEST_CASE("evaluation fixtures") {
  SUBCASE("perfect predictions") {
    const auto sp = strip_map({3, 4, 5});
    const std::vector<int> truth{0, 4, 7};
    const auto r = evaluate(truth, truth, Weighting::Pixel, sp);
    CHECK(r.micro_accuracy == 1.0);
    CHECK(r.macro_accuracy == 1.0);
    for (int c : {0, 4, 7}) CHECK(r.per_class_accuracy[c] == 1.0);
    CHECK(std::isnan(r.per_class_accuracy[1]));
  }
  SUBCASE("one of two equal areas correct") {
    const auto sp = strip_map({6, 6});
    const std::vector<int> truth{1, 2}, pred{1, 3};
    CHECK(evaluate(pred, truth, Weighting::Pixel, sp).micro_accuracy == 0.5);
    CHECK(evaluate(pred, truth, Weighting::Superpixel, sp).micro_accuracy == 0.5);
  }
  SUBCASE("areas 100/200/700") {
    const auto sp = strip_map({100, 200, 700});
    const std::vector<int> truth{0, 1, 2}, pred{0, 2, 2};
    CHECK(evaluate(pred, truth, Weighting::Pixel, sp).micro_accuracy == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(evaluate(pred, truth, Weighting::Superpixel, sp).micro_accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("void truths are skipped and misalignment rejected") {
    const auto sp = strip_map({2, 2, 2});
    const std::vector<int> truth{0, kVoidLabel, 1}, pred{0, -1, 0};
    const auto r = evaluate(pred, truth, Weighting::Superpixel, sp);
    CHECK(r.confusion.total() == 2);
    CHECK(r.micro_accuracy == 0.5);
    CHECK_THROWS(evaluate(std::vector<int>{0, 1}, truth, Weighting::Pixel, sp));
  }
}

TEST_CASE("report identities on random confusion matrices") {
  oracle::Rng rng(41);
  for (int t = 0; t < 500; ++t) {
    const auto cm = oracle::random_confusion(rng, 8);
    if (cm.total() == 0) continue;
    const auto r = report_from_confusion(cm);
    CHECK(r.micro_accuracy == static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
    double lo = 2, hi = -1, sum = 0;
    int n = 0;
    bool all_support = true;
    for (int c = 0; c < 8; ++c) {
      CHECK(r.support[c] == cm.row_sum(c));
      if (r.support[c] == 0) {
        CHECK(std::isnan(r.per_class_accuracy[c]));
        all_support = false;
        continue;
      }
      CHECK(r.per_class_accuracy[c] == static_cast<double>(cm.at(c, c)) / static_cast<double>(r.support[c]));
      lo = std::min(lo, r.per_class_accuracy[c]);
      hi = std::max(hi, r.per_class_accuracy[c]);
      sum += r.per_class_accuracy[c];
      ++n;
    }
    CHECK(r.macro_accuracy == doctest::Approx(sum / n).epsilon(1e-15));
    if (all_support) {
      CHECK(r.micro_accuracy >= lo - 1e-15);
      CHECK(r.micro_accuracy <= hi + 1e-15);
    }
  }
}

TEST_CASE("pixel and superpixel weighting coincide for equal areas") {
  oracle::Rng rng(42);
  for (int t = 0; t < 50; ++t) {
    const int k = oracle::uniform_int(rng, 1, 20);
    const auto sp = strip_map(std::vector<int>(k, oracle::uniform_int(rng, 1, 9)));
    std::vector<int> truth(k), pred(k);
    for (int i = 0; i < k; ++i) {
      truth[i] = oracle::uniform_int(rng, 0, 7);
      pred[i] = oracle::uniform_int(rng, 0, 7);
    }
    CHECK(evaluate(pred, truth, Weighting::Pixel, sp).micro_accuracy ==
          doctest::Approx(evaluate(pred, truth, Weighting::Superpixel, sp).micro_accuracy).epsilon(1e-15));
  }
}

TEST_CASE("table and csv output") {
  const auto sp = strip_map({1, 1});
  const std::vector<int> truth{0, 1}, pred{0, 0};
  const std::vector<std::pair<std::string, EvaluationReport>> rows{
      {"weighted", evaluate(pred, truth, Weighting::Pixel, sp)}};
  const std::string table = format_table(rows, ClassSet::standard());
  CHECK(table.find("Micro") != std::string::npos);
  CHECK(table.find("100.00") != std::string::npos);
  CHECK(table.find("50.00") != std::string::npos);
  oracle::TempDir dir("report");
  save_report_csv(rows, ClassSet::standard(), dir.path() / "r.csv");
  const std::string csv = read_text_file(dir.path() / "r.csv");
  CHECK(csv.find("type,sky,tree") == 0);
  CHECK(csv.find("weighted,1,0,nan") != std::string::npos);
}

TEST_CASE("confusion csv round trip") {
  oracle::TempDir dir("cm");
  oracle::Rng rng(43);
  const auto cm = oracle::random_confusion(rng, 8);
  save_confusion_csv(cm, dir.path() / "c.csv");
  CHECK(load_confusion_csv(dir.path() / "c.csv") == cm);
  std::ofstream(dir.path() / "bad.csv") << "1,2\n3\n";
  CHECK_THROWS_AS(load_confusion_csv(dir.path() / "bad.csv"), IoError);
}
