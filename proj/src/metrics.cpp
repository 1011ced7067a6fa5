#include "prefmmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace prefmmt {

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("pearson: inputs differ in length");
  if (x.size() < 2) throw ContractError("pearson: need at least two samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("an input is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

int label_class(double label) {
  if (label == 0.0) return 0;
  if (label == 0.5) return 1;
  if (label == 1.0) return 2;
  throw ContractError("label " + std::to_string(label) + " is not one of {0, 0.5, 1}");
}

ConfusionMatrix confusion(std::span<const double> labels, std::span<const double> predictions) {
  if (labels.size() != predictions.size()) throw ContractError("confusion: inputs differ in length");
  if (labels.empty()) throw ContractError("confusion: no samples");
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < labels.size(); ++i)
    ++m[static_cast<std::size_t>(label_class(labels[i]))][static_cast<std::size_t>(label_class(predictions[i]))];
  return m;
}

long total(const ConfusionMatrix& m) {
  long n = 0;
  for (const auto& row : m)
    for (long v : row) n += v;
  return n;
}

double accuracy(const ConfusionMatrix& m) {
  const long n = total(m);
  if (n == 0) throw ContractError("accuracy of an empty confusion matrix");
  return static_cast<double>(m[0][0] + m[1][1] + m[2][2]) / static_cast<double>(n);
}

RunSummary aggregate(std::span<const double> values) {
  if (values.empty()) throw ContractError("aggregate: no results");
  RunSummary s;
  s.values.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  s.single_run = values.size() == 1;
  if (!s.single_run) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

std::string format_summary(const RunSummary& s, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", precision, s.mean, precision, s.std);
  return buf;
}

void write_csv(const std::filesystem::path& path, const CsvTable& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string& cell = row[i];
      if (i) out << ',';
      if (cell.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char c : cell) out << (c == '"' ? "\"\"" : std::string(1, c));
        out << '"';
      } else {
        out << cell;
      }
    }
    out << '\n';
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  CsvTable rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;  // quoted cells may span lines
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\n') {
      row.push_back(std::move(cell));
      cell.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted cell in '" + path.string() + "'", rows.size() + 1);
  if (!cell.empty() || !row.empty()) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace prefmmt
