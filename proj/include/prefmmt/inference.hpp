#pragma once

// Deploying a trained reward model: sliding-window relabeling of offline
// episodes and per-step attention summaries.

#include <filesystem>
#include <vector>

#include "prefmmt/model.hpp"
#include "prefmmt/trajectory.hpp"

namespace prefmmt {

// Learned reward for each step t: the final element of score() over the
// most recent min(t + 1, window) transitions ending at t. ContractError on an
// empty episode or a window outside [1, max_len].
template <typename Scalar>
std::vector<double> relabel_episode(const Trajectory& episode, const RewardModel<Scalar>& model,
                                    int window);

// Copies of `episodes` with learned_rewards filled in.
template <typename Scalar>
std::vector<Trajectory> relabel(const std::vector<Trajectory>& episodes,
                                const RewardModel<Scalar>& model, int window);

// Per-step weights in [0, 1], each series divided by its maximum. A series
// the variant does not have (inter for PrefIntra, intra for PrefInter) is
// all zeros.
struct AttentionRecord {
  std::vector<double> intra_state;
  std::vector<double> intra_action;
  std::vector<double> inter;
  std::vector<double> rewards;
};

// Attention mass received by each token in the final layer of each encoder,
// averaged over heads (and over both cross directions for the inter series).
// UnsupportedError for MR and UniSeq.
template <typename Scalar>
AttentionRecord extract_attention(const RewardModel<Scalar>& model, const Trajectory& segment);

// Column sums of each [T x T] matrix, averaged over the matrices.
std::vector<double> received_mass(const std::vector<Eigen::MatrixXd>& weights);

// Divides by the maximum; all-zero input stays zero.
std::vector<double> max_normalize(std::vector<double> series);

// Columns t, w_state, w_action, w_inter, reward.
void write_attention_csv(const std::filesystem::path& path, const AttentionRecord& record);

}  // namespace prefmmt
