#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evidseg/classification.hpp"
#include "evidseg/pixelgrid.hpp"
#include "evidseg/slic.hpp"

namespace evidseg::metrics {

/// Majority non-void label inside each superpixel; ties go to the lowest
/// class, all-void superpixels get kVoidLabel.
std::vector<int> superpixel_ground_truth(const SuperpixelMap& superpixels, const LabelMap& labels);

enum class Weighting { Superpixel, Pixel };

struct EvaluationReport {
  std::vector<double> per_class_accuracy;  // NaN where support is zero
  double micro_accuracy = 0.0;
  double macro_accuracy = 0.0;             // mean over classes with support
  ConfusionMatrix confusion;
  std::vector<std::int64_t> support;

  explicit EvaluationReport(int classes = kNumClasses) : confusion(classes) {}
};

/// Builds a report from accumulated (weighted) confusion counts.
EvaluationReport report_from_confusion(const ConfusionMatrix& confusion);

/// Accumulates samples across images.
class Evaluator {
 public:
  explicit Evaluator(int classes = kNumClasses) : confusion_(classes) {}

  /// Adds one image. Void truths are skipped; pixel weighting counts each
  /// superpixel by its area.
  void add(std::span<const int> predictions, std::span<const int> truth, Weighting weighting,
           const SuperpixelMap& superpixels);
  void add_sample(int truth, int predicted, std::int64_t weight = 1);

  EvaluationReport report() const { return report_from_confusion(confusion_); }

 private:
  ConfusionMatrix confusion_;
};

EvaluationReport evaluate(std::span<const int> predictions, std::span<const int> truth,
                          Weighting weighting, const SuperpixelMap& superpixels);

/// Aligned plain-text table: one column per class, then micro and macro.
std::string format_table(std::span<const std::pair<std::string, EvaluationReport>> rows,
                         const ClassSet& classes);

/// Machine-readable form: one row per report.
void save_report_csv(std::span<const std::pair<std::string, EvaluationReport>> rows,
                     const ClassSet& classes, const std::filesystem::path& path);

}  // namespace evidseg::metrics
