#pragma once

// Differentiable operations on Tensor. Every shape is explicit; the only
// broadcast is add_row (a 1xN row added to each row of an MxN matrix).

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "prefmmt/autodiff.hpp"

namespace prefmmt {

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
}

}  // namespace detail

// Additive causal mask: 0 where column <= row, kMasked elsewhere.
struct CausalMask {
  static constexpr double kMasked = -1e9;
  Eigen::Index size = 0;

  template <typename Scalar>
  Matrix<Scalar> additive() const {
    Matrix<Scalar> m = Matrix<Scalar>::Zero(size, size);
    for (Eigen::Index i = 0; i < size; ++i)
      for (Eigen::Index j = i + 1; j < size; ++j) m(i, j) = static_cast<Scalar>(kMasked);
    return m;
  }
};

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + detail::shape_str(a.rows(), a.cols()) + " x " +
                     detail::shape_str(b.rows(), b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return a.graph().record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ia)) g.grad_ref(ia).noalias() += grad * g.value(ib).transpose();
        if (g.requires_grad(ib)) g.grad_ref(ib).noalias() += g.value(ia).transpose() * grad;
      },
      "matmul");
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        g.grad_ref(ia) += grad.transpose();
      },
      "transpose");
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return a.graph().record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ia)) g.grad_ref(ia) += grad;
        if (g.requires_grad(ib)) g.grad_ref(ib) += grad;
      },
      "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  return a.graph().record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ia)) g.grad_ref(ia) += grad;
        if (g.requires_grad(ib)) g.grad_ref(ib) -= grad;
      },
      "sub");
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}

// Elementwise product.
template <typename Scalar>
Tensor<Scalar> hadamard(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return a.graph().record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ia)) g.grad_ref(ia) += grad.cwiseProduct(g.value(ib));
        if (g.requires_grad(ib)) g.grad_ref(ib) += grad.cwiseProduct(g.value(ia));
      },
      "hadamard");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id(), s](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        g.grad_ref(ia) += grad * s;
      },
      "scale");
}

// a[MxN] + row[1xN] broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row: " + detail::shape_str(a.rows(), a.cols()) + " + " +
                     detail::shape_str(row.rows(), row.cols()));
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.graph().record(
      std::move(out), {a, row},
      [ia = a.id(), ir = row.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ia)) g.grad_ref(ia) += grad;
        if (g.requires_grad(ir)) g.grad_ref(ir) += grad.colwise().sum();
      },
      "add_row");
}

// x * w + b with w [in x out] and b [1 x out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  return add_row(matmul(x, w), b);
}

// Exact (erf) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::numbers::sqrt2);
  Matrix<Scalar> out = a.value().unaryExpr([inv_sqrt2](Scalar x) {
    return static_cast<Scalar>(0.5) * x * (static_cast<Scalar>(1) + std::erf(x * inv_sqrt2));
  });
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id(), inv_sqrt2](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        const Scalar inv_sqrt2pi = static_cast<Scalar>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        Matrix<Scalar> d = g.value(ia).unaryExpr([&](Scalar x) {
          const Scalar cdf = static_cast<Scalar>(0.5) * (static_cast<Scalar>(1) + std::erf(x * inv_sqrt2));
          const Scalar pdf = inv_sqrt2pi * std::exp(static_cast<Scalar>(-0.5) * x * x);
          return cdf + x * pdf;
        });
        g.grad_ref(ia) += grad.cwiseProduct(d);
      },
      "gelu");
}

// Row-wise softmax of logits + mask. Rows sum to one and masked entries
// underflow to exactly zero.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& logits, const CausalMask& mask) {
  if (logits.rows() != logits.cols())
    throw ShapeError("masked_softmax: logits must be square, got " +
                     detail::shape_str(logits.rows(), logits.cols()));
  if (mask.size != logits.rows())
    throw ShapeError("masked_softmax: mask size " + std::to_string(mask.size) +
                     " does not match logits " +
                     detail::shape_str(logits.rows(), logits.cols()));
  Matrix<Scalar> p = logits.value() + mask.template additive<Scalar>();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Scalar m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return logits.graph().record(
      std::move(p), {logits},
      [il = logits.id()](Graph<Scalar>& g, NodeId self, const Matrix<Scalar>& grad) {
        const Matrix<Scalar>& p = g.value(self);
        Matrix<Scalar> gp = grad.cwiseProduct(p);
        const auto dots = gp.rowwise().sum();
        g.grad_ref(il) += gp - (p.array().colwise() * dots.array()).matrix();
      },
      "masked_softmax");
}

// Per-row normalization to zero mean and unit variance (biased variance,
// eps-regularized) followed by gain/bias, both [1 x d].
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps) {
  const Eigen::Index d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: feature dimension is zero");
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw ShapeError("layer_norm: gain/bias must be [1x" + std::to_string(d) + "]");
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");

  const Matrix<Scalar>& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Scalar mean = xv.row(i).mean();
    const Scalar var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = static_cast<Scalar>(1) / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);

  return x.graph().record(
      std::move(out), {x, gain, bias},
      [ix = x.id(), ig = gain.id(), ib = bias.id(), xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        if (g.requires_grad(ig)) g.grad_ref(ig) += grad.cwiseProduct(xhat).colwise().sum();
        if (g.requires_grad(ib)) g.grad_ref(ib) += grad.colwise().sum();
        if (!g.requires_grad(ix)) return;
        const Scalar n = static_cast<Scalar>(xhat.cols());
        Matrix<Scalar> gxhat = (grad.array().rowwise() * g.value(ig).row(0).array()).matrix();
        const auto sum_g = gxhat.rowwise().sum();
        const auto sum_gx = gxhat.cwiseProduct(xhat).rowwise().sum();
        Matrix<Scalar>& gx = g.grad_ref(ix);
        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
          gx.row(i).array() += (inv_std(i) / n) *
                               (n * gxhat.row(i).array() - sum_g(i) - xhat.row(i).array() * sum_gx(i));
        }
      },
      "layer_norm");
}

// Inverted dropout; identity unless the graph is in training mode.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate) {
  Graph<Scalar>& graph = a.graph();
  if (!graph.training() || rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar s = static_cast<Scalar>(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = keep(graph.rng()) ? s : static_cast<Scalar>(0);
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return graph.record(
      std::move(out), {a},
      [ia = a.id(), mask = std::move(mask)](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        g.grad_ref(ia) += grad.cwiseProduct(mask);
      },
      "dropout");
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols: range out of bounds");
  Matrix<Scalar> out = a.value().middleCols(begin, count);
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id(), begin, count](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        g.grad_ref(ia).middleCols(begin, count) += grad;
      },
      "slice_cols");
}

template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix<Scalar> out(parts[0].rows(), cols);
  std::vector<NodeId> ids;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
  }
  return parts[0].graph().record(
      std::move(out), std::vector<Tensor<Scalar>>(parts.begin(), parts.end()),
      [ids = std::move(ids)](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        Eigen::Index at = 0;
        for (NodeId id : ids) {
          const Eigen::Index c = g.value(id).cols();
          if (g.requires_grad(id)) g.grad_ref(id) += grad.middleCols(at, c);
          at += c;
        }
      },
      "concat_cols");
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column count mismatch");
  Matrix<Scalar> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  return a.graph().record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        const Eigen::Index ra = g.value(ia).rows();
        if (g.requires_grad(ia)) g.grad_ref(ia) += grad.topRows(ra);
        if (g.requires_grad(ib)) g.grad_ref(ib) += grad.bottomRows(grad.rows() - ra);
      },
      "concat_rows");
}

// out.row(i) = a.row(index[i]); backward scatter-adds.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::vector<Eigen::Index> index) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id(), index = std::move(index)](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        Matrix<Scalar>& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < index.size(); ++i)
          ga.row(index[i]) += grad.row(static_cast<Eigen::Index>(i));
      },
      "gather_rows");
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id()](Graph<Scalar>& g, NodeId, const Matrix<Scalar>& grad) {
        g.grad_ref(ia).array() += grad(0, 0);
      },
      "sum");
}

// log(sigmoid(x)) elementwise, clamped below at `floor`; the gradient is
// zero wherever the clamp is active.
template <typename Scalar>
Tensor<Scalar> log_sigmoid(const Tensor<Scalar>& a, Scalar floor) {
  Matrix<Scalar> out = a.value().unaryExpr([floor](Scalar x) {
    const Scalar v = -(std::max(-x, Scalar(0)) + std::log1p(std::exp(-std::abs(x))));
    return std::max(v, floor);
  });
  return a.graph().record(
      std::move(out), {a},
      [ia = a.id(), floor](Graph<Scalar>& g, NodeId self, const Matrix<Scalar>& grad) {
        const Matrix<Scalar>& x = g.value(ia);
        const Matrix<Scalar>& y = g.value(self);
        Matrix<Scalar>& gx = g.grad_ref(ia);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          if (y.data()[i] <= floor) continue;
          // d/dx log sigmoid(x) = sigmoid(-x)
          const Scalar xi = x.data()[i];
          const Scalar s = xi >= 0 ? std::exp(-xi) / (Scalar(1) + std::exp(-xi))
                                   : Scalar(1) / (Scalar(1) + std::exp(xi));
          gx.data()[i] += grad.data()[i] * s;
        }
      },
      "log_sigmoid");
}

}  // namespace prefmmt
