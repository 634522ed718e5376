#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evidseg/classification.hpp"
#include "evidseg/cnn.hpp"

namespace evidseg::ensemble {

/// Number of unordered pairs over a frame of `classes` elements.
constexpr int pair_count(int classes) { return classes * (classes - 1) / 2; }

/// Position of the unordered pair {j, k} (j != k) in the pair array.
/// Pairs are ordered (0,1), (0,2), ..., (0,C-1), (1,2), ...
int pair_index(int classes, int j, int k);

/// Belief masses restricted to singletons and unordered pairs; every other
/// subset of the frame carries zero mass.
struct MassFunction {
  std::vector<double> singleton;
  std::vector<double> pair;

  explicit MassFunction(int classes = kNumClasses);
  int classes() const { return static_cast<int>(singleton.size()); }
  double& pair_mass(int j, int k) { return pair[pair_index(classes(), j, k)]; }
  double pair_mass(int j, int k) const { return pair[pair_index(classes(), j, k)]; }
  double total() const;

  /// Throws unless all masses are non-negative and sum to 1 within `tol`.
  void validate(double tol = 1e-9) const;
};

/// Training performance of the three sources; weights of the weighted average.
struct SourceWeights {
  double r1 = 1.0;
  double r2 = 1.0;
  double r3 = 1.0;

  void validate() const;
};

/// Confusion summary feeding mass construction.
struct MissRatios {
  std::vector<double> deduction;  // per class: sum_{j != i} miss(i,j) / n_i, 0 if n_i = 0
  std::vector<double> pair_miss;  // per unordered pair: miss(j,k) + miss(k,j)
  std::vector<int> unseen;        // classes with no training samples

  static MissRatios from_confusion(const ConfusionMatrix& confusion);
  int classes() const { return static_cast<int>(deduction.size()); }
};

/// Raised when two mass functions are in total conflict.
class TotalConflict : public std::runtime_error {
 public:
  explicit TotalConflict(double conflict);
  double conflict() const { return conflict_; }

 private:
  double conflict_;
};

inline constexpr double kConflictLimit = 1.0 - 1e-12;

/// Majority of the three argmax votes; without a majority the single
/// prediction with the highest peak score wins (ties to the earlier source).
int max_vote(std::span<const double> s1, std::span<const double> s2, std::span<const double> s3);

/// (s1*r1 + s2*r2 + s3*r3) / (r1 + r2 + r3).
ScoreVector weighted_average(std::span<const double> s1, std::span<const double> s2,
                             std::span<const double> s3, const SourceWeights& w);

/// Discounts each class probability by its training miss ratio and spreads
/// the discounted total over class pairs in proportion to how often the two
/// classes were confused.
MassFunction probs_to_mass(std::span<const double> p, const MissRatios& ratios);

/// Dempster's rule restricted to singleton/pair focal elements, which the
/// rule keeps closed. Summation order is symmetric in the operands, so
/// combine(a, b) and combine(b, a) agree bit-for-bit.
MassFunction dempster_combine(const MassFunction& a, const MassFunction& b, double* conflict = nullptr);

/// BetP(i) = m_i + sum_j m_{ij} / 2.
std::vector<double> pignistic(const MassFunction& m);

enum class DecisionRule { Pignistic, MaxSingleton };

int ds_decide(const MassFunction& m, DecisionRule rule = DecisionRule::Pignistic);

enum class Mode { MaxVote, Weighted, Dempster };

Mode parse_mode(std::string_view name);
std::string mode_name(Mode mode);

struct Decision {
  int image_id = 0;
  int superpixel_id = 0;
  int predicted = 0;
  std::vector<double> fused;  // weighted scores or BetP values; empty for max_vote
  bool conflict_fallback = false;
};

struct FuseInputs {
  std::array<std::span<const cnn::ScoreRow>, 3> scores;
  std::array<MissRatios, 3> ratios;
  SourceWeights weights;
};

struct FuseOptions {
  DecisionRule rule = DecisionRule::Pignistic;
};

/// Applies the chosen rule row by row. Dempster mode combines
/// (m1 + m2) + m3 and falls back to the weighted average for a row whose
/// sources are in total conflict.
std::vector<Decision> fuse(Mode mode, const FuseInputs& inputs, const FuseOptions& options = {});

// CSV "image_id,superpixel_id,predicted_class[,f0..f{C-1}]".
void save_decisions_csv(std::span<const Decision> decisions, const std::filesystem::path& path);
std::vector<Decision> load_decisions_csv(const std::filesystem::path& path);

/// Weights line "r1,r2,r3".
void save_weights(const SourceWeights& w, const std::filesystem::path& path);
SourceWeights load_weights(const std::filesystem::path& path);

}  // namespace evidseg::ensemble
