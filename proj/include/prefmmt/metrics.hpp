#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prefmmt/errors.hpp"

namespace prefmmt {

class UndefinedCorrelationError : public Error {
 public:
  explicit UndefinedCorrelationError(const std::string& what) : Error("undefined correlation", what) {}
};

// Sample Pearson coefficient. Throws ContractError on length mismatch or
// fewer than two samples, UndefinedCorrelationError on a constant input.
double pearson(std::span<const double> x, std::span<const double> y);

// Rows are true labels, columns predictions, both indexed 0 -> 0, 1 -> 0.5,
// 2 -> 1.
using ConfusionMatrix = std::array<std::array<long, 3>, 3>;

// Index of a label in {0, 0.5, 1}; ContractError otherwise.
int label_class(double label);

ConfusionMatrix confusion(std::span<const double> labels, std::span<const double> predictions);

long total(const ConfusionMatrix& m);
double accuracy(const ConfusionMatrix& m);

struct RunSummary {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // unbiased (n - 1); zero for a single run
  bool single_run = false;
};

RunSummary aggregate(std::span<const double> values);

// "mean ± std" with fixed precision.
std::string format_summary(const RunSummary& s, int precision = 3);

using CsvTable = std::vector<std::vector<std::string>>;

void write_csv(const std::filesystem::path& path, const CsvTable& rows);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace prefmmt
