#pragma once

// Tabular fitted Q-iteration over a fixed offline dataset, and greedy-policy
// evaluation under the true maze dynamics and reward.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "prefmmt/envs.hpp"

namespace prefmmt {

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
};

struct QConfig {
  double gamma = 0.99;
  double alpha = 0.1;
  int sweeps = 1000;
  // Rescale rewards to [0, 1] before the backups.
  bool minmax_rescale = false;

  void validate() const;
};

class TabularQ {
 public:
  TabularQ(int num_states, int num_actions);

  int num_states() const { return static_cast<int>(q_.rows()); }
  int num_actions() const { return static_cast<int>(q_.cols()); }
  double operator()(int s, int a) const { return q_(s, a); }
  double& operator()(int s, int a) { return q_(s, a); }
  const Eigen::MatrixXd& table() const { return q_; }

  void mark_supported(int s, int a) { supported_(s, a) = true; }
  bool supported(int s, int a) const { return supported_(s, a); }
  // Highest-valued supported action (lowest index on ties); action 0 when the
  // state never appears in the data.
  int greedy(int s) const;
  double max_supported(int s) const;

 private:
  Eigen::MatrixXd q_;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> supported_;
};

// Q(s,a) <- (1 - alpha) Q(s,a) + alpha [r + gamma max_a' Q(s',a')] applied to
// every transition in order, `sweeps` times. The max ranges over actions
// seen at s' in the data.
TabularQ fitted_q(const std::vector<Transition>& data, int num_states, int num_actions,
                  const QConfig& config);

enum class RewardSource { True, Learned };

// Consecutive steps of each maze episode as transitions; an episode's final
// step has no observed successor and is dropped.
std::vector<Transition> maze7_transitions(const std::vector<Trajectory>& episodes, const Maze7& maze,
                                          RewardSource source);

// UnsupportedError unless `spec` is a discrete (maze7) environment.
TabularQ fitted_q(const std::vector<Trajectory>& episodes, const EnvSpec& spec, RewardSource source,
                  const QConfig& config);

struct ReferenceReturns {
  std::optional<double> random;
  std::optional<double> expert;
};

// Expert: exact shortest-path return averaged over start cells. Random:
// Monte-Carlo mean of a uniform random policy.
ReferenceReturns maze7_references(const EnvSpec& spec, std::uint64_t seed, int mc_episodes = 4000);

struct PolicyEval {
  double mean_return = 0.0;
  double success_rate = 0.0;
  double normalized_score = 0.0;
  int episodes = 0;
};

// 100 * (score - random) / (expert - random).
double normalized_score(double score, const ReferenceReturns& refs);

using MazePolicy = std::function<int(const Maze7&, Cell, std::mt19937_64&)>;

// Rolls a policy from uniformly drawn start cells for the spec's episode
// length. ContractError when a reference return is missing.
PolicyEval evaluate_maze_policy(const MazePolicy& policy, const EnvSpec& spec, int episodes,
                                std::uint64_t seed, const ReferenceReturns& refs);

PolicyEval evaluate_policy(const TabularQ& q, const EnvSpec& spec, int episodes, std::uint64_t seed,
                           const ReferenceReturns& refs);

// Columns state_id, action_id, q.
void write_policy_csv(const std::filesystem::path& path, const TabularQ& q);

}  // namespace prefmmt
