#pragma once

// Reward models over (state, action) sequences: the hierarchical multimodal
// transformer (intra-modal causal encoders feeding a bidirectional causal
// cross-attention encoder), its two ablations, a unimodal interleaved
// transformer, and the per-step Markovian MLP.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prefmmt/autodiff.hpp"
#include "prefmmt/model_config.hpp"
#include "prefmmt/ops.hpp"

namespace prefmmt {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Modality { State, Action };

// Named learnable buffers. Names and shapes are a function of ModelConfig.
template <typename Scalar>
class ModelParams {
 public:
  using Map = std::map<std::string, Matrix<Scalar>>;

  void add(const std::string& name, Matrix<Scalar> value) {
    if (!tensors_.emplace(name, std::move(value)).second)
      throw ConfigError("duplicate parameter '" + name + "'");
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  Matrix<Scalar>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  const Matrix<Scalar>& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
  }
  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }
  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }

  template <typename To>
  ModelParams<To> cast() const {
    ModelParams<To> out;
    for (const auto& [name, m] : tensors_) out.add(name, m.template cast<To>());
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.tensors_ == b.tensors_;
  }

 private:
  Map tensors_;
};

template <typename Scalar>
struct RewardSequence {
  Vector<Scalar> rewards;
  Scalar score = 0;
};

// Softmax matrices captured during a forward pass, one [T x T] per head.
// Each layer overwrites the previous one, so after a pass the vectors hold
// the final layer of each encoder.
template <typename Scalar>
struct AttentionTrace {
  std::vector<Matrix<Scalar>> intra_state;
  std::vector<Matrix<Scalar>> intra_action;
  std::vector<Matrix<Scalar>> inter_state;   // state queries attending to actions
  std::vector<Matrix<Scalar>> inter_action;  // action queries attending to states
};

// Scaled dot-product attention with a causal mask. Returns softmax(q k^T /
// sqrt(d_k) + M) v; `weights`, if given, receives the softmax matrix.
template <typename Scalar>
Tensor<Scalar> causal_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                const Tensor<Scalar>& v, double dropout_rate = 0.0,
                                Matrix<Scalar>* weights = nullptr) {
  if (q.rows() != k.rows() || k.rows() != v.rows())
    throw ContractError("causal_attention: query/key/value lengths differ");
  if (q.cols() != k.cols()) throw ShapeError("causal_attention: query/key widths differ");
  const Scalar inv_sqrt_dk = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(k.cols())));
  auto logits = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  auto p = masked_softmax(logits, CausalMask{q.rows()});
  if (weights) *weights = p.value();
  return matmul(dropout(p, dropout_rate), v);
}

template <typename Scalar>
class RewardModel {
 public:
  using T = Tensor<Scalar>;

  RewardModel(const ModelConfig& config, std::uint64_t seed);
  // Adopts existing buffers; throws CheckpointError if names/shapes differ
  // from what `config` requires.
  RewardModel(const ModelConfig& config, ModelParams<Scalar> params);

  const ModelConfig& config() const { return config_; }
  const ModelParams<Scalar>& params() const { return params_; }
  ModelParams<Scalar>& params() { return params_; }

  // Per-step rewards [T x 1] for one segment, recorded on `graph`.
  T forward(Graph<Scalar>& graph, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
            AttentionTrace<Scalar>* trace = nullptr) const;

  // Inference-only pass (no gradient, no dropout).
  RewardSequence<Scalar> score(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                               AttentionTrace<Scalar>* trace = nullptr) const;

  // Stages of the multimodal pipeline, exposed for composition and testing.
  std::pair<T, T> embed_inputs(Graph<Scalar>& graph, const Matrix<Scalar>& states,
                               const Matrix<Scalar>& actions) const;
  T intra_encode(Graph<Scalar>& graph, T x, Modality modality,
                 AttentionTrace<Scalar>* trace = nullptr) const;
  std::pair<T, T> cross_attend(Graph<Scalar>& graph, T xs, T xa,
                               AttentionTrace<Scalar>* trace = nullptr) const;
  T pool_rewards(Graph<Scalar>& graph, T zs, T za) const;

  template <typename To>
  RewardModel<To> cast() const {
    return RewardModel<To>(config_, params_.template cast<To>());
  }

  // Names and shapes required by `config`, in creation order.
  static std::vector<std::pair<std::string, std::pair<int, int>>> layout(const ModelConfig& config);

 private:
  T p(Graph<Scalar>& g, const std::string& name) const { return g.parameter(params_.at(name)); }
  T ffn(Graph<Scalar>& g, T x, const std::string& prefix) const;
  T attention(Graph<Scalar>& g, T query_src, T kv_src, const std::string& q_prefix,
              const std::string& kv_prefix, std::vector<Matrix<Scalar>>* trace) const;
  T self_block(Graph<Scalar>& g, T x, const std::string& prefix,
               std::vector<Matrix<Scalar>>* trace) const;
  T forward_mr(Graph<Scalar>& g, const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const;
  T forward_uniseq(Graph<Scalar>& g, const Matrix<Scalar>& states,
                   const Matrix<Scalar>& actions) const;
  T head(Graph<Scalar>& g, T h) const { return linear(h, p(g, "head.weight"), p(g, "head.bias")); }

  ModelConfig config_;
  ModelParams<Scalar> params_;
};

// ----------------------------------------------------------------------------

namespace detail {

inline void add_block_layout(std::vector<std::pair<std::string, std::pair<int, int>>>& out,
                             const std::string& prefix, int d) {
  out.push_back({prefix + ".ln1.gain", {1, d}});
  out.push_back({prefix + ".ln1.bias", {1, d}});
  out.push_back({prefix + ".attn.query", {d, d}});
  out.push_back({prefix + ".attn.key", {d, d}});
  out.push_back({prefix + ".attn.value", {d, d}});
  out.push_back({prefix + ".attn.out.weight", {d, d}});
  out.push_back({prefix + ".attn.out.bias", {1, d}});
  out.push_back({prefix + ".ln2.gain", {1, d}});
  out.push_back({prefix + ".ln2.bias", {1, d}});
  out.push_back({prefix + ".ffn.fc1.weight", {d, 4 * d}});
  out.push_back({prefix + ".ffn.fc1.bias", {1, 4 * d}});
  out.push_back({prefix + ".ffn.fc2.weight", {4 * d, d}});
  out.push_back({prefix + ".ffn.fc2.bias", {1, d}});
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

template <typename Scalar>
std::vector<std::pair<std::string, std::pair<int, int>>> RewardModel<Scalar>::layout(
    const ModelConfig& c) {
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  const int d = c.d_model;
  auto embeddings = [&] {
    out.push_back({"embed.state.weight", {c.state_dim, d}});
    out.push_back({"embed.state.bias", {1, d}});
    out.push_back({"embed.action.weight", {c.action_dim, d}});
    out.push_back({"embed.action.bias", {1, d}});
    out.push_back({"embed.time", {c.max_len, d}});
  };
  switch (c.variant) {
    case Variant::MR: {
      int in = c.state_dim + c.action_dim;
      for (std::size_t i = 0; i < c.mlp_hidden.size(); ++i) {
        out.push_back({"mlp." + std::to_string(i) + ".weight", {in, c.mlp_hidden[i]}});
        out.push_back({"mlp." + std::to_string(i) + ".bias", {1, c.mlp_hidden[i]}});
        in = c.mlp_hidden[i];
      }
      out.push_back({"head.weight", {in, 1}});
      out.push_back({"head.bias", {1, 1}});
      return out;
    }
    case Variant::UniSeq:
      embeddings();
      for (int l = 0; l < c.n_intra_layers; ++l)
        detail::add_block_layout(out, "seq." + std::to_string(l), d);
      break;
    case Variant::PrefMMT:
    case Variant::PrefIntra:
    case Variant::PrefInter:
      embeddings();
      if (c.variant != Variant::PrefInter)
        for (const char* m : {"state", "action"})
          for (int l = 0; l < c.n_intra_layers; ++l)
            detail::add_block_layout(out, std::string("intra.") + m + "." + std::to_string(l), d);
      if (c.variant != Variant::PrefIntra)
        for (int l = 0; l < c.n_inter_layers; ++l)
          for (const char* m : {"state", "action"})
            detail::add_block_layout(out, "inter." + std::to_string(l) + "." + m, d);
      break;
  }
  out.push_back({"head.weight", {d, 1}});
  out.push_back({"head.bias", {1, 1}});
  return out;
}

template <typename Scalar>
RewardModel<Scalar>::RewardModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& [name, shape] : layout(config_)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(shape.first, shape.second);
    const bool is_head = name.rfind("head.", 0) == 0;
    if (detail::ends_with(name, ".gain")) {
      m.setOnes();
    } else if (!is_head && !detail::ends_with(name, ".bias")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    }
    params_.add(name, m.cast<Scalar>());
  }
}

template <typename Scalar>
RewardModel<Scalar>::RewardModel(const ModelConfig& config, ModelParams<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto expected = layout(config_);
  if (expected.size() != params_.size())
    throw CheckpointError("expected " + std::to_string(expected.size()) + " tensors, got " +
                          std::to_string(params_.size()));
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw CheckpointError("missing tensor '" + name + "'");
    const auto& m = params_.at(name);
    if (m.rows() != shape.first || m.cols() != shape.second)
      throw CheckpointError("tensor '" + name + "' has shape [" + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + "], config requires [" +
                            std::to_string(shape.first) + "x" + std::to_string(shape.second) + "]");
  }
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> RewardModel<Scalar>::embed_inputs(
    Graph<Scalar>& g, const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const {
  const Eigen::Index len = states.rows();
  if (len > config_.max_len)
    throw ContractError("segment length " + std::to_string(len) + " exceeds max_len " +
                        std::to_string(config_.max_len));
  if (actions.rows() != len) throw ContractError("states and actions differ in length");
  if (states.cols() != config_.state_dim || actions.cols() != config_.action_dim)
    throw ShapeError("input feature dims do not match the model config");
  std::vector<Eigen::Index> steps(static_cast<std::size_t>(len));
  for (Eigen::Index t = 0; t < len; ++t) steps[static_cast<std::size_t>(t)] = t;
  auto time = gather_rows(p(g, "embed.time"), steps);
  auto xs = linear(g.constant(states), p(g, "embed.state.weight"), p(g, "embed.state.bias")) + time;
  auto xa = linear(g.constant(actions), p(g, "embed.action.weight"), p(g, "embed.action.bias")) + time;
  return {xs, xa};
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::ffn(Graph<Scalar>& g, T x, const std::string& pre) const {
  auto h = gelu(linear(x, p(g, pre + ".fc1.weight"), p(g, pre + ".fc1.bias")));
  return dropout(linear(h, p(g, pre + ".fc2.weight"), p(g, pre + ".fc2.bias")), config_.dropout);
}

// Multi-head attention: queries from `query_src` with `q_prefix` weights,
// keys and values from `kv_src` with `kv_prefix` weights, output projection
// of the query side.
template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::attention(Graph<Scalar>& g, T query_src, T kv_src,
                                              const std::string& q_prefix,
                                              const std::string& kv_prefix,
                                              std::vector<Matrix<Scalar>>* trace) const {
  auto q = matmul(query_src, p(g, q_prefix + ".attn.query"));
  auto k = matmul(kv_src, p(g, kv_prefix + ".attn.key"));
  auto v = matmul(kv_src, p(g, kv_prefix + ".attn.value"));
  const int heads = config_.n_heads;
  const int dk = config_.head_dim();
  if (trace) trace->assign(static_cast<std::size_t>(heads), Matrix<Scalar>());
  std::vector<T> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    outs.push_back(causal_attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk),
                                    slice_cols(v, h * dk, dk), config_.dropout,
                                    trace ? &(*trace)[static_cast<std::size_t>(h)] : nullptr));
  }
  auto merged = heads == 1 ? outs[0] : concat_cols<Scalar>(outs);
  auto out = linear(merged, p(g, q_prefix + ".attn.out.weight"), p(g, q_prefix + ".attn.out.bias"));
  return dropout(out, config_.dropout);
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::self_block(Graph<Scalar>& g, T x, const std::string& pre,
                                               std::vector<Matrix<Scalar>>* trace) const {
  const Scalar eps = static_cast<Scalar>(1e-5);
  auto n1 = layer_norm(x, p(g, pre + ".ln1.gain"), p(g, pre + ".ln1.bias"), eps);
  auto h = x + attention(g, n1, n1, pre, pre, trace);
  auto n2 = layer_norm(h, p(g, pre + ".ln2.gain"), p(g, pre + ".ln2.bias"), eps);
  return h + ffn(g, n2, pre + ".ffn");
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::intra_encode(Graph<Scalar>& g, T x, Modality modality,
                                                 AttentionTrace<Scalar>* trace) const {
  const std::string m = modality == Modality::State ? "state" : "action";
  auto* sink = trace ? (modality == Modality::State ? &trace->intra_state : &trace->intra_action)
                     : nullptr;
  for (int l = 0; l < config_.n_intra_layers; ++l)
    x = self_block(g, x, "intra." + m + "." + std::to_string(l), sink);
  return x;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> RewardModel<Scalar>::cross_attend(
    Graph<Scalar>& g, T xs, T xa, AttentionTrace<Scalar>* trace) const {
  if (xs.rows() != xa.rows()) throw ContractError("cross_attend: stream lengths differ");
  const Scalar eps = static_cast<Scalar>(1e-5);
  for (int l = 0; l < config_.n_inter_layers; ++l) {
    const std::string ps = "inter." + std::to_string(l) + ".state";
    const std::string pa = "inter." + std::to_string(l) + ".action";
    auto ns = layer_norm(xs, p(g, ps + ".ln1.gain"), p(g, ps + ".ln1.bias"), eps);
    auto na = layer_norm(xa, p(g, pa + ".ln1.gain"), p(g, pa + ".ln1.bias"), eps);
    auto zs = xs + attention(g, ns, na, ps, pa, trace ? &trace->inter_state : nullptr);
    auto za = xa + attention(g, na, ns, pa, ps, trace ? &trace->inter_action : nullptr);
    xs = zs + ffn(g, layer_norm(zs, p(g, ps + ".ln2.gain"), p(g, ps + ".ln2.bias"), eps), ps + ".ffn");
    xa = za + ffn(g, layer_norm(za, p(g, pa + ".ln2.gain"), p(g, pa + ".ln2.bias"), eps), pa + ".ffn");
  }
  return {xs, xa};
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::pool_rewards(Graph<Scalar>& g, T zs, T za) const {
  if (zs.rows() != za.rows() || zs.cols() != za.cols())
    throw ShapeError("pool_rewards: stream shapes differ");
  return head(g, scale(zs + za, static_cast<Scalar>(0.5)));
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::forward_mr(Graph<Scalar>& g, const Matrix<Scalar>& states,
                                               const Matrix<Scalar>& actions) const {
  Matrix<Scalar> joint(states.rows(), states.cols() + actions.cols());
  joint << states, actions;
  auto h = g.constant(std::move(joint));
  for (std::size_t i = 0; i < config_.mlp_hidden.size(); ++i) {
    const std::string pre = "mlp." + std::to_string(i);
    h = dropout(gelu(linear(h, p(g, pre + ".weight"), p(g, pre + ".bias"))), config_.dropout);
  }
  return head(g, h);
}

// Tokens s_1, a_1, ..., s_T, a_T through one causal stack; the reward for
// step t is read at the a_t token.
template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::forward_uniseq(Graph<Scalar>& g, const Matrix<Scalar>& states,
                                                   const Matrix<Scalar>& actions) const {
  auto [xs, xa] = embed_inputs(g, states, actions);
  const Eigen::Index len = states.rows();
  std::vector<Eigen::Index> interleave, action_tokens;
  for (Eigen::Index t = 0; t < len; ++t) {
    interleave.push_back(t);
    interleave.push_back(len + t);
    action_tokens.push_back(2 * t + 1);
  }
  auto x = gather_rows(concat_rows(xs, xa), interleave);
  for (int l = 0; l < config_.n_intra_layers; ++l)
    x = self_block(g, x, "seq." + std::to_string(l), nullptr);
  return head(g, gather_rows(x, action_tokens));
}

template <typename Scalar>
Tensor<Scalar> RewardModel<Scalar>::forward(Graph<Scalar>& g, const Matrix<Scalar>& states,
                                            const Matrix<Scalar>& actions,
                                            AttentionTrace<Scalar>* trace) const {
  if (states.rows() < 1) throw ContractError("empty segment");
  if (states.rows() != actions.rows()) throw ContractError("states and actions differ in length");
  switch (config_.variant) {
    case Variant::MR:
      if (states.cols() != config_.state_dim || actions.cols() != config_.action_dim)
        throw ShapeError("input feature dims do not match the model config");
      return forward_mr(g, states, actions);
    case Variant::UniSeq:
      return forward_uniseq(g, states, actions);
    case Variant::PrefMMT: {
      auto [xs, xa] = embed_inputs(g, states, actions);
      auto bs = intra_encode(g, xs, Modality::State, trace);
      auto ba = intra_encode(g, xa, Modality::Action, trace);
      auto [zs, za] = cross_attend(g, bs, ba, trace);
      return pool_rewards(g, zs, za);
    }
    case Variant::PrefIntra: {
      auto [xs, xa] = embed_inputs(g, states, actions);
      return pool_rewards(g, intra_encode(g, xs, Modality::State, trace),
                          intra_encode(g, xa, Modality::Action, trace));
    }
    case Variant::PrefInter: {
      auto [xs, xa] = embed_inputs(g, states, actions);
      auto [zs, za] = cross_attend(g, xs, xa, trace);
      return pool_rewards(g, zs, za);
    }
  }
  throw ConfigError("unknown variant");
}

template <typename Scalar>
RewardSequence<Scalar> RewardModel<Scalar>::score(const Eigen::MatrixXd& states,
                                                  const Eigen::MatrixXd& actions,
                                                  AttentionTrace<Scalar>* trace) const {
  Graph<Scalar> g(GraphOptions{.grad_enabled = false});
  auto r = forward(g, states.cast<Scalar>(), actions.cast<Scalar>(), trace);
  RewardSequence<Scalar> out;
  out.rewards = r.value().col(0);
  out.score = out.rewards.sum();
  return out;
}

extern template class RewardModel<float>;
extern template class RewardModel<double>;

}  // namespace prefmmt
