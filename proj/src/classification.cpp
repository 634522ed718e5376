#include "evidseg/classification.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "evidseg/io_util.hpp"
#include "evidseg/pixelgrid.hpp"

namespace evidseg {

void validate_scores(std::span<const double> scores, double tol) {
  if (scores.empty()) throw std::invalid_argument("empty score vector");
  double sum = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("score outside [0,1]");
    sum += s;
  }
  if (std::abs(sum - 1.0) > tol) throw std::invalid_argument("scores do not sum to 1");
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

ConfusionMatrix::ConfusionMatrix(int classes)
    : ConfusionMatrix(classes, std::vector<std::int64_t>(
                                   static_cast<std::size_t>(std::max(classes, 0)) * std::max(classes, 0), 0)) {}

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<std::int64_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  if (counts_.size() != static_cast<std::size_t>(classes) * classes)
    throw std::invalid_argument("confusion matrix must be classes x classes");
  for (auto c : counts_)
    if (c < 0) throw std::invalid_argument("negative confusion count");
}

std::size_t ConfusionMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= classes_ || j >= classes_)
    throw std::out_of_range("confusion index out of range");
  return static_cast<std::size_t>(i) * classes_ + j;
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t weight) {
  if (weight < 0) throw std::invalid_argument("negative confusion weight");
  counts_[index(truth, predicted)] += weight;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < classes_; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int i = 0; i < classes_; ++i) s += at(i, i);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

void save_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    for (int i = 0; i < m.classes(); ++i) {
      for (int j = 0; j < m.classes(); ++j) {
        if (j) out << ',';
        out << m.at(i, j);
      }
      out << '\n';
    }
  });
}

ConfusionMatrix load_confusion_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::int64_t> values;
  std::string line;
  int rows = 0;
  int cols = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    int n = 0;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stoll(cell, &used));
      } catch (const std::exception&) {
        throw IoError(path, "non-integer confusion entry on row " + std::to_string(rows + 1));
      }
      ++n;
    }
    if (cols < 0) cols = n;
    if (n != cols) throw IoError(path, "ragged confusion matrix row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0 || rows != cols) throw IoError(path, "confusion matrix must be square");
  try {
    return ConfusionMatrix(rows, std::move(values));
  } catch (const std::exception& e) {
    throw IoError(path, e.what());
  }
}

}  // namespace evidseg
