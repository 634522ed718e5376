#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace evidseg {

/// Softmax distribution over the class frame. Length is the frame size
/// (8 in the pipeline, smaller in tests).
using ScoreVector = std::vector<double>;

/// Throws std::invalid_argument unless entries lie in [0,1] and sum to 1
/// within `tol`.
void validate_scores(std::span<const double> scores, double tol = 1e-6);

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> values);

/// counts(i, j) = samples of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 8);
  ConfusionMatrix(int classes, std::vector<std::int64_t> counts);

  int classes() const { return classes_; }
  std::int64_t at(int truth, int predicted) const { return counts_[index(truth, predicted)]; }
  void add(int truth, int predicted, std::int64_t weight = 1);

  std::int64_t row_sum(int truth) const;
  std::int64_t trace() const;
  std::int64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int i, int j) const;

  int classes_;
  std::vector<std::int64_t> counts_;
};

// classes x classes CSV of integers, one row per true class.
void save_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path);
ConfusionMatrix load_confusion_csv(const std::filesystem::path& path);

}  // namespace evidseg
