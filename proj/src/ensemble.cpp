#include "evidseg/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "evidseg/io_util.hpp"

namespace evidseg::ensemble {

namespace fs = std::filesystem;

int pair_index(int classes, int j, int k) {
  if (j == k || j < 0 || k < 0 || j >= classes || k >= classes)
    throw std::out_of_range("invalid class pair");
  if (j > k) std::swap(j, k);
  // Pairs before row j: (C-1) + (C-2) + ... + (C-j).
  return j * (2 * classes - j - 1) / 2 + (k - j - 1);
}

MassFunction::MassFunction(int classes)
    : singleton(static_cast<std::size_t>(classes), 0.0),
      pair(static_cast<std::size_t>(pair_count(classes)), 0.0) {
  if (classes < 2) throw std::invalid_argument("frame needs at least two classes");
}

double MassFunction::total() const {
  double s = 0.0;
  for (double m : singleton) s += m;
  for (double m : pair) s += m;
  return s;
}

void MassFunction::validate(double tol) const {
  for (double m : singleton)
    if (!(m >= 0.0)) throw std::invalid_argument("negative singleton mass");
  for (double m : pair)
    if (!(m >= 0.0)) throw std::invalid_argument("negative pair mass");
  if (std::abs(total() - 1.0) > tol) throw std::invalid_argument("masses do not sum to 1");
}

void SourceWeights::validate() const {
  if (!(r1 > 0.0 && r2 > 0.0 && r3 > 0.0)) throw std::invalid_argument("source weights must be positive");
}

MissRatios MissRatios::from_confusion(const ConfusionMatrix& confusion) {
  const int c = confusion.classes();
  if (c < 2) throw std::invalid_argument("confusion matrix needs at least two classes");
  MissRatios r;
  r.deduction.assign(c, 0.0);
  r.pair_miss.assign(pair_count(c), 0.0);
  for (int i = 0; i < c; ++i) {
    const auto n = confusion.row_sum(i);
    if (n == 0) {
      r.unseen.push_back(i);
      continue;
    }
    r.deduction[i] = static_cast<double>(n - confusion.at(i, i)) / static_cast<double>(n);
  }
  for (int j = 0; j < c; ++j)
    for (int k = j + 1; k < c; ++k)
      r.pair_miss[pair_index(c, j, k)] = static_cast<double>(confusion.at(j, k) + confusion.at(k, j));
  return r;
}

TotalConflict::TotalConflict(double conflict)
    : std::runtime_error("total conflict between mass functions (K = " + std::to_string(conflict) + ")"),
      conflict_(conflict) {}

int max_vote(std::span<const double> s1, std::span<const double> s2, std::span<const double> s3) {
  const std::array<std::span<const double>, 3> src{s1, s2, s3};
  std::array<int, 3> vote{};
  for (int s = 0; s < 3; ++s) vote[s] = argmax(src[s]);
  if (vote[0] == vote[1] || vote[0] == vote[2]) return vote[0];
  if (vote[1] == vote[2]) return vote[1];
  int best = 0;
  for (int s = 1; s < 3; ++s)
    if (src[s][vote[s]] > src[best][vote[best]]) best = s;
  return vote[best];
}

ScoreVector weighted_average(std::span<const double> s1, std::span<const double> s2,
                             std::span<const double> s3, const SourceWeights& w) {
  w.validate();
  if (s1.size() != s2.size() || s1.size() != s3.size())
    throw std::invalid_argument("score vectors differ in length");
  const double norm = w.r1 + w.r2 + w.r3;
  ScoreVector out(s1.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (s1[i] * w.r1 + s2[i] * w.r2 + s3[i] * w.r3) / norm;
  return out;
}

MassFunction probs_to_mass(std::span<const double> p, const MissRatios& ratios) {
  const int c = ratios.classes();
  if (static_cast<int>(p.size()) != c) throw std::invalid_argument("score vector does not match frame size");
  double psum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("negative probability");
    psum += v;
  }
  if (!(psum > 0.0)) throw std::invalid_argument("probabilities sum to zero");

  MassFunction m(c);
  double deducted = 0.0;
  for (int i = 0; i < c; ++i) {
    const double pi = p[i] / psum;
    const double d = std::clamp(ratios.deduction[i], 0.0, 1.0);
    m.singleton[i] = pi - pi * d;
    deducted += pi * d;
  }
  double pair_total = 0.0;
  for (double v : ratios.pair_miss) pair_total += v;
  if (pair_total > 0.0) {
    for (std::size_t q = 0; q < m.pair.size(); ++q) m.pair[q] = ratios.pair_miss[q] / pair_total * deducted;
  } else {
    // No pairwise evidence to spread the deduction over: return it to the
    // singletons in proportion to p.
    for (int i = 0; i < c; ++i) m.singleton[i] += deducted * (p[i] / psum);
  }
  return m;
}

MassFunction dempster_combine(const MassFunction& a, const MassFunction& b, double* conflict) {
  const int c = a.classes();
  if (b.classes() != c) throw std::invalid_argument("mass functions over different frames");
  MassFunction out(c);

  // Total pair mass containing each class.
  std::vector<double> pa(c, 0.0), pb(c, 0.0);
  for (int j = 0; j < c; ++j)
    for (int k = j + 1; k < c; ++k) {
      const int q = pair_index(c, j, k);
      pa[j] += a.pair[q];
      pa[k] += a.pair[q];
      pb[j] += b.pair[q];
      pb[k] += b.pair[q];
    }

  for (int i = 0; i < c; ++i) {
    // {i} & {i}, {i} & P with i in P (both ways), and P & Q meeting in {i}.
    double meet = 0.0;
    for (int j = 0; j < c; ++j) {
      if (j == i) continue;
      const int qj = pair_index(c, i, j);
      for (int k = j + 1; k < c; ++k) {
        if (k == i) continue;
        const int qk = pair_index(c, i, k);
        meet += a.pair[qj] * b.pair[qk] + a.pair[qk] * b.pair[qj];
      }
    }
    out.singleton[i] = a.singleton[i] * b.singleton[i] +
                       (a.singleton[i] * pb[i] + b.singleton[i] * pa[i]) + meet;
  }
  for (std::size_t q = 0; q < out.pair.size(); ++q) out.pair[q] = a.pair[q] * b.pair[q];

  const double agreement = out.total();
  const double k = 1.0 - agreement;
  if (conflict) *conflict = k;
  if (!(k < kConflictLimit)) throw TotalConflict(k);
  for (double& m : out.singleton) m /= agreement;
  for (double& m : out.pair) m /= agreement;
  return out;
}

std::vector<double> pignistic(const MassFunction& m) {
  const int c = m.classes();
  std::vector<double> bet(m.singleton);
  for (int j = 0; j < c; ++j)
    for (int k = j + 1; k < c; ++k) {
      const double half = m.pair_mass(j, k) / 2.0;
      bet[j] += half;
      bet[k] += half;
    }
  return bet;
}

int ds_decide(const MassFunction& m, DecisionRule rule) {
  if (rule == DecisionRule::MaxSingleton) return argmax(m.singleton);
  return argmax(pignistic(m));
}

Mode parse_mode(std::string_view name) {
  if (name == "max_vote") return Mode::MaxVote;
  if (name == "weighted") return Mode::Weighted;
  if (name == "dempster") return Mode::Dempster;
  throw std::invalid_argument("unknown ensemble mode '" + std::string(name) +
                              "' (expected max_vote, weighted or dempster)");
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::MaxVote:
      return "max_vote";
    case Mode::Weighted:
      return "weighted";
    case Mode::Dempster:
      return "dempster";
  }
  return "unknown";
}

std::vector<Decision> fuse(Mode mode, const FuseInputs& in, const FuseOptions& options) {
  in.weights.validate();
  const std::size_t n = in.scores[0].size();
  for (int s = 1; s < 3; ++s)
    if (in.scores[s].size() != n)
      throw std::invalid_argument("score sources differ in row count (" + std::to_string(n) + " vs " +
                                  std::to_string(in.scores[s].size()) + ")");
  for (std::size_t r = 0; r < n; ++r)
    for (int s = 1; s < 3; ++s)
      if (in.scores[s][r].image_id != in.scores[0][r].image_id ||
          in.scores[s][r].superpixel_id != in.scores[0][r].superpixel_id)
        throw std::invalid_argument("id misalignment at row " + std::to_string(r) + ": source 1 has (" +
                                    std::to_string(in.scores[0][r].image_id) + "," +
                                    std::to_string(in.scores[0][r].superpixel_id) + "), source " +
                                    std::to_string(s + 1) + " has (" +
                                    std::to_string(in.scores[s][r].image_id) + "," +
                                    std::to_string(in.scores[s][r].superpixel_id) + ")");

  std::vector<Decision> out(n);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto& s1 = in.scores[0][r].scores;
    const auto& s2 = in.scores[1][r].scores;
    const auto& s3 = in.scores[2][r].scores;
    Decision d{in.scores[0][r].image_id, in.scores[0][r].superpixel_id, 0, {}, false};
    switch (mode) {
      case Mode::MaxVote:
        d.predicted = max_vote(s1, s2, s3);
        break;
      case Mode::Weighted:
        d.fused = weighted_average(s1, s2, s3, in.weights);
        d.predicted = argmax(d.fused);
        break;
      case Mode::Dempster:
        try {
          const MassFunction m = dempster_combine(
              dempster_combine(probs_to_mass(s1, in.ratios[0]), probs_to_mass(s2, in.ratios[1])),
              probs_to_mass(s3, in.ratios[2]));
          d.fused = pignistic(m);
          d.predicted = ds_decide(m, options.rule);
        } catch (const TotalConflict&) {
          d.fused = weighted_average(s1, s2, s3, in.weights);
          d.predicted = argmax(d.fused);
          d.conflict_fallback = true;
        }
        break;
    }
    out[r] = std::move(d);
  }
  return out;
}

void save_decisions_csv(std::span<const Decision> decisions, const fs::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    const std::size_t extra = decisions.empty() ? 0 : decisions.front().fused.size();
    out << "image_id,superpixel_id,predicted_class";
    for (std::size_t c = 0; c < extra; ++c) out << ",f" << c;
    out << '\n';
    for (const auto& d : decisions) {
      out << d.image_id << ',' << d.superpixel_id << ',' << d.predicted;
      for (double v : d.fused) out << ',' << format_double(v);
      out << '\n';
    }
  });
}

std::vector<Decision> load_decisions_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("image_id,superpixel_id,predicted_class"))
    throw IoError(path, "missing decisions CSV header");
  const std::size_t extra = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
  std::vector<Decision> rows;
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
    if (cells.size() != extra + 3) throw IoError(path, "wrong column count on line " + std::to_string(lineno));
    rows.push_back({static_cast<int>(cells[0]), static_cast<int>(cells[1]), static_cast<int>(cells[2]),
                    std::vector<double>(cells.begin() + 3, cells.end()), false});
  }
  return rows;
}

void save_weights(const SourceWeights& w, const fs::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    out << format_double(w.r1) << ',' << format_double(w.r2) << ',' << format_double(w.r3) << '\n';
  });
}

SourceWeights load_weights(const fs::path& path) {
  std::string text = read_text_file(path);
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  SourceWeights w;
  if (!(in >> w.r1 >> w.r2 >> w.r3)) throw IoError(path, "expected a weights line r1,r2,r3");
  try {
    w.validate();
  } catch (const std::exception& e) {
    throw IoError(path, e.what());
  }
  return w;
}

}  // namespace evidseg::ensemble
