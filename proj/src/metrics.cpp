#include "evidseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "evidseg/io_util.hpp"

namespace evidseg::metrics {

std::vector<int> superpixel_ground_truth(const SuperpixelMap& superpixels, const LabelMap& labels) {
  if (superpixels.height() != labels.height() || superpixels.width() != labels.width())
    throw std::invalid_argument("label map dimensions do not match superpixel map");
  const int k = superpixels.k();
  std::vector<int> votes(static_cast<std::size_t>(k) * kNumClasses, 0);
  const auto ids = superpixels.assignment();
  const auto lab = labels.labels();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int l = lab[i];
    if (l == kVoidLabel) continue;
    if (l < 0 || l >= kNumClasses) throw std::invalid_argument("label out of range");
    ++votes[static_cast<std::size_t>(ids[i]) * kNumClasses + l];
  }
  std::vector<int> truth(k, kVoidLabel);
  for (int s = 0; s < k; ++s) {
    int best = 0;
    for (int c = 0; c < kNumClasses; ++c)
      if (votes[static_cast<std::size_t>(s) * kNumClasses + c] > best) {
        best = votes[static_cast<std::size_t>(s) * kNumClasses + c];
        truth[s] = c;
      }
  }
  return truth;
}

EvaluationReport report_from_confusion(const ConfusionMatrix& confusion) {
  const int c = confusion.classes();
  EvaluationReport r(c);
  r.confusion = confusion;
  r.per_class_accuracy.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.support.assign(c, 0);
  double macro_sum = 0.0;
  int macro_n = 0;
  for (int i = 0; i < c; ++i) {
    r.support[i] = confusion.row_sum(i);
    if (r.support[i] == 0) continue;
    r.per_class_accuracy[i] = static_cast<double>(confusion.at(i, i)) / static_cast<double>(r.support[i]);
    macro_sum += r.per_class_accuracy[i];
    ++macro_n;
  }
  const auto total = confusion.total();
  r.micro_accuracy = total > 0 ? static_cast<double>(confusion.trace()) / static_cast<double>(total)
                               : std::numeric_limits<double>::quiet_NaN();
  r.macro_accuracy = macro_n > 0 ? macro_sum / macro_n : std::numeric_limits<double>::quiet_NaN();
  return r;
}

void Evaluator::add_sample(int truth, int predicted, std::int64_t weight) {
  confusion_.add(truth, predicted, weight);
}

void Evaluator::add(std::span<const int> predictions, std::span<const int> truth, Weighting weighting,
                    const SuperpixelMap& superpixels) {
  const auto k = static_cast<std::size_t>(superpixels.k());
  if (predictions.size() != k || truth.size() != k)
    throw std::invalid_argument("predictions/truth do not cover superpixel ids 0.." +
                                std::to_string(k - 1) + " (got " + std::to_string(predictions.size()) +
                                " predictions, " + std::to_string(truth.size()) + " truths)");
  const std::vector<int> area = weighting == Weighting::Pixel ? superpixels.areas() : std::vector<int>{};
  for (std::size_t s = 0; s < k; ++s) {
    if (truth[s] == kVoidLabel) continue;
    add_sample(truth[s], predictions[s], weighting == Weighting::Pixel ? area[s] : 1);
  }
}

EvaluationReport evaluate(std::span<const int> predictions, std::span<const int> truth,
                          Weighting weighting, const SuperpixelMap& superpixels) {
  Evaluator e;
  e.add(predictions, truth, weighting, superpixels);
  return e.report();
}

namespace {

std::string pct(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_table(std::span<const std::pair<std::string, EvaluationReport>> rows,
                         const ClassSet& classes) {
  std::size_t name_w = 4;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream out;
  auto cell = [&](const std::string& s, std::size_t w) {
    out << std::string(w > s.size() ? w - s.size() : 0, ' ') << s << "  ";
  };
  out << "Type" << std::string(name_w - 4 + 2, ' ');
  for (const auto& n : classes.names()) cell(n, std::max<std::size_t>(n.size(), 6));
  cell("Micro", 6);
  cell("Macro", 6);
  out << '\n';
  for (const auto& [name, r] : rows) {
    out << name << std::string(name_w - name.size() + 2, ' ');
    for (int c = 0; c < kNumClasses; ++c) {
      const double v = c < static_cast<int>(r.per_class_accuracy.size())
                           ? r.per_class_accuracy[c]
                           : std::numeric_limits<double>::quiet_NaN();
      cell(pct(v), std::max<std::size_t>(classes.name(c).size(), 6));
    }
    cell(pct(r.micro_accuracy), 6);
    cell(pct(r.macro_accuracy), 6);
    out << '\n';
  }
  return out.str();
}

void save_report_csv(std::span<const std::pair<std::string, EvaluationReport>> rows,
                     const ClassSet& classes, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    out << "type";
    for (const auto& n : classes.names()) out << ',' << n;
    out << ",micro,macro";
    for (const auto& n : classes.names()) out << ",support_" << n;
    out << '\n';
    auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
    for (const auto& [name, r] : rows) {
      out << name;
      for (int c = 0; c < kNumClasses; ++c)
        out << ',' << (c < static_cast<int>(r.per_class_accuracy.size()) ? num(r.per_class_accuracy[c]) : "nan");
      out << ',' << num(r.micro_accuracy) << ',' << num(r.macro_accuracy);
      for (int c = 0; c < kNumClasses; ++c)
        out << ',' << (c < static_cast<int>(r.support.size()) ? r.support[c] : 0);
      out << '\n';
    }
  });
}

}  // namespace evidseg::metrics
