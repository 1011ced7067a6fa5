#include "prefmmt/inference.hpp"

#include <algorithm>
#include <cstdio>

#include "prefmmt/metrics.hpp"

namespace prefmmt {

template <typename Scalar>
std::vector<double> relabel_episode(const Trajectory& episode, const RewardModel<Scalar>& model,
                                    int window) {
  if (episode.length() < 1) throw ContractError("cannot relabel an empty episode '" + episode.id + "'");
  if (window < 1 || window > model.config().max_len)
    throw ContractError("window " + std::to_string(window) + " outside [1, max_len]");
  const Eigen::Index len = episode.length();
  std::vector<double> out(static_cast<std::size_t>(len));
  if (model.config().variant == Variant::MR) {
    // Per-step rewards do not see other steps, so one pass is equivalent.
    const auto seq = model.score(episode.states, episode.actions);
    for (Eigen::Index t = 0; t < len; ++t) out[static_cast<std::size_t>(t)] = static_cast<double>(seq.rewards(t));
    return out;
  }
  for (Eigen::Index t = 0; t < len; ++t) {
    const Eigen::Index n = std::min<Eigen::Index>(t + 1, window);
    const Eigen::Index start = t + 1 - n;
    const auto seq = model.score(episode.states.middleRows(start, n), episode.actions.middleRows(start, n));
    out[static_cast<std::size_t>(t)] = static_cast<double>(seq.rewards(n - 1));
  }
  return out;
}

template <typename Scalar>
std::vector<Trajectory> relabel(const std::vector<Trajectory>& episodes,
                                const RewardModel<Scalar>& model, int window) {
  std::vector<Trajectory> out = episodes;
  for (auto& t : out) t.learned_rewards = relabel_episode(t, model, window);
  return out;
}

std::vector<double> received_mass(const std::vector<Eigen::MatrixXd>& weights) {
  if (weights.empty()) return {};
  std::vector<double> out(static_cast<std::size_t>(weights.front().cols()), 0.0);
  for (const auto& w : weights)
    for (Eigen::Index c = 0; c < w.cols(); ++c) out[static_cast<std::size_t>(c)] += w.col(c).sum();
  for (double& v : out) v /= static_cast<double>(weights.size());
  return out;
}

std::vector<double> max_normalize(std::vector<double> series) {
  if (series.empty()) return series;
  const double peak = *std::max_element(series.begin(), series.end());
  if (peak <= 0) return std::vector<double>(series.size(), 0.0);
  for (double& v : series) v = std::clamp(v / peak, 0.0, 1.0);
  return series;
}

namespace {

template <typename Scalar>
std::vector<Eigen::MatrixXd> to_double(const std::vector<Matrix<Scalar>>& in) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& m : in) out.push_back(m.template cast<double>());
  return out;
}

}  // namespace

template <typename Scalar>
AttentionRecord extract_attention(const RewardModel<Scalar>& model, const Trajectory& segment) {
  const Variant v = model.config().variant;
  if (v == Variant::MR || v == Variant::UniSeq)
    throw UnsupportedError("attention extraction needs a multimodal variant, got " + to_string(v));
  AttentionTrace<Scalar> trace;
  const auto seq = model.score(segment.states, segment.actions, &trace);
  const std::size_t len = static_cast<std::size_t>(segment.length());
  AttentionRecord rec;
  auto series = [len](const std::vector<Matrix<Scalar>>& w) {
    return w.empty() ? std::vector<double>(len, 0.0) : max_normalize(received_mass(to_double(w)));
  };
  rec.intra_state = series(trace.intra_state);
  rec.intra_action = series(trace.intra_action);
  std::vector<Matrix<Scalar>> both = trace.inter_state;
  both.insert(both.end(), trace.inter_action.begin(), trace.inter_action.end());
  rec.inter = series(both);
  rec.rewards.assign(seq.rewards.data(), seq.rewards.data() + seq.rewards.size());
  return rec;
}

void write_attention_csv(const std::filesystem::path& path, const AttentionRecord& r) {
  CsvTable rows{{"t", "w_state", "w_action", "w_inter", "reward"}};
  auto fmt = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::string(buf);
  };
  for (std::size_t t = 0; t < r.rewards.size(); ++t)
    rows.push_back({std::to_string(t), fmt(r.intra_state[t]), fmt(r.intra_action[t]), fmt(r.inter[t]),
                    fmt(r.rewards[t])});
  write_csv(path, rows);
}

#define PREFMMT_INSTANTIATE(S)                                                                   \
  template std::vector<double> relabel_episode<S>(const Trajectory&, const RewardModel<S>&, int); \
  template std::vector<Trajectory> relabel<S>(const std::vector<Trajectory>&, const RewardModel<S>&, int); \
  template AttentionRecord extract_attention<S>(const RewardModel<S>&, const Trajectory&);

PREFMMT_INSTANTIATE(float)
PREFMMT_INSTANTIATE(double)

#undef PREFMMT_INSTANTIATE

}  // namespace prefmmt
