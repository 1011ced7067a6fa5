#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "prefmmt/autodiff.hpp"

namespace prefmmt {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Relative errors are measured against max(|autodiff|, |numeric|, floor),
  // where the floor is the larger of abs_floor and the gradient magnitude at
  // which central-difference round-off alone would reach tol. Without it, a
  // gradient that is exactly zero (say a bias the loss is invariant to) fails
  // on round-off.
  double abs_floor = 1e-8;
};

using NamedBuffer = std::pair<std::string, Matrix<double>*>;

// Compares autodiff gradients of `loss_fn` against central differences for
// every element of every buffer in `params`. `loss_fn(graph)` must build a
// scalar loss, binding the buffers with graph.parameter(). Buffers are
// perturbed in place and restored before returning.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, const std::vector<NamedBuffer>& params,
                           const GradCheckOptions& options = {}) {
  std::vector<Matrix<double>> analytic;
  {
    Graph<double> graph;
    Tensor<double> loss = loss_fn(graph);
    graph.backward(loss);
    for (const auto& [name, buf] : params) {
      const Matrix<double>* g = graph.grad_of(*buf);
      analytic.push_back(g ? *g : Matrix<double>::Zero(buf->rows(), buf->cols()));
    }
  }

  auto eval = [&]() {
    Graph<double> graph(GraphOptions{.grad_enabled = false});
    return loss_fn(graph).value()(0, 0);
  };
  // Each loss evaluation carries ~eps * |loss| of rounding; the difference
  // quotient divides it by the step. The factor 10 covers accumulation.
  const double roundoff = 10.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(eval())) /
                          options.step;
  const double denom_floor = std::max(options.abs_floor, roundoff / options.tol);

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, buf] = params[p];
    GradCheckEntry entry{name};
    for (Eigen::Index i = 0; i < buf->size(); ++i) {
      double& x = buf->data()[i];
      const double saved = x;
      x = saved + options.step;
      const double up = eval();
      x = saved - options.step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double exact = analytic[p].data()[i];
      const double abs_err = std::abs(numeric - exact);
      const double denom = std::max({std::abs(numeric), std::abs(exact), denom_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    entry.passed = entry.max_rel_error <= options.tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace prefmmt
