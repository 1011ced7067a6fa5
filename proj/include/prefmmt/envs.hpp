#pragma once

// Small environments with known ground-truth reward that stand in for the
// benchmark suites, plus a scripted preference oracle.
//
// maze7: 7x7 grid maze. State (x/6, y/6, wall_up, wall_down, wall_left,
// wall_right); action one-hot over {up, down, left, right}. A step that ends
// on the goal pays +1 (arriving or staying), any other step -0.01; the goal
// is absorbing.
//
// fragile-push: a point mass pushes an object toward a target. An object
// fragility f in [0.2, 1.0] is visible in the state only at the reveal step k
// and the robot holds still until then. After k every step pays a penalty
// proportional to max(0, |a_t| - f), so the reward depends on state history
// and on the coupling between that history and the action.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "prefmmt/trajectory.hpp"

namespace prefmmt {

enum class EnvName { Maze7, FragilePush };

std::string to_string(EnvName e);
EnvName parse_env_name(std::string_view name);

struct BehaviorMix {
  double expert = 0.3;
  double medium = 0.4;
  double random = 0.3;
};

struct EnvSpec {
  EnvName name = EnvName::Maze7;
  int episode_length = 48;
  int episodes = 100;
  std::uint64_t seed = 0;
  BehaviorMix mix;
  // Maze rows top to bottom; '#' wall, '.' open, 'G' goal. Empty: built-in.
  std::vector<std::string> maze_layout;

  int state_dim() const { return name == EnvName::Maze7 ? 6 : 5; }
  int action_dim() const { return name == EnvName::Maze7 ? 4 : 2; }

  // Throws ContractError. `segment_len`, when given, must fit an episode.
  void validate(std::optional<int> segment_len = std::nullopt) const;
};

EnvSpec default_env_spec(EnvName name);

// --- maze7 ------------------------------------------------------------------

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

class Maze7 {
 public:
  static constexpr int kSize = 7;
  static constexpr int kActions = 4;  // up, down, left, right
  static constexpr double kStepCost = -0.01;
  static constexpr double kGoalReward = 1.0;

  // Throws GenerationError if the layout is malformed or the goal is not
  // reachable from every open cell.
  explicit Maze7(const std::vector<std::string>& layout = {});

  static const std::vector<std::string>& default_layout();

  bool is_open(Cell c) const;
  Cell goal() const { return goal_; }
  const std::vector<Cell>& open_cells() const { return open_; }
  // Open cells other than the goal, in row-major order.
  const std::vector<Cell>& start_cells() const { return starts_; }

  Cell step(Cell c, int action) const;
  double reward(Cell from, Cell to) const;
  // BFS distance to the goal, -1 if unreachable.
  int distance(Cell c) const { return dist_[index(c)]; }
  // Lowest-index action that reduces the distance to the goal.
  int optimal_action(Cell c) const;

  int index(Cell c) const { return c.y * kSize + c.x; }
  int num_states() const { return kSize * kSize; }
  Cell cell(int index) const { return {index % kSize, index / kSize}; }

  Eigen::RowVectorXd features(Cell c) const;
  // Inverts features(); throws ContractError on a non-maze state row.
  Cell decode_state(const Eigen::RowVectorXd& state) const;
  static int decode_action(const Eigen::RowVectorXd& action);

 private:
  std::vector<char> grid_;
  std::vector<Cell> open_;
  std::vector<Cell> starts_;
  std::vector<int> dist_;
  Cell goal_;
};

// Behavior tiers for both environments.
enum class Behavior { Expert, Medium, Random };

Behavior draw_behavior(const BehaviorMix& mix, std::mt19937_64& rng);

// One maze episode from `start` under a behavior tier.
Trajectory rollout_maze7(const Maze7& maze, Cell start, Behavior behavior, int length,
                         std::mt19937_64& rng, std::string id);

std::vector<Trajectory> gen_maze7(const EnvSpec& spec);

// --- fragile-push -------------------------------------------------------------

struct FragilePushEpisode {
  Eigen::Vector2d start;
  Eigen::Vector2d target;
  double fragility = 0.5;
  int reveal_step = 0;
};

struct FragilePushConstants {
  static constexpr double kDt = 0.25;
  static constexpr double kPenalty = 6.0;
  static constexpr double kMinFragility = 0.2;
  static constexpr double kMaxFragility = 1.0;
  // Start-to-target distance; also the unit of the position features.
  static constexpr double kTargetDistance = 10.0;
};

// Runs `actions` [T x 2] through the dynamics and returns the trajectory with
// states, render and true per-step rewards. Actions at or before the reveal
// step are used as given.
Trajectory simulate_fragile_push(const FragilePushEpisode& episode, const Eigen::MatrixXd& actions,
                                 std::string id);

std::vector<Trajectory> gen_fragile_push(const EnvSpec& spec);

std::vector<Trajectory> generate_episodes(const EnvSpec& spec);

// --- oracle -------------------------------------------------------------------

enum class OracleMode { Deterministic, BradleyTerry };

struct OracleConfig {
  double tie_threshold = 0.0;  // epsilon on the return difference
  double flip_prob = 0.0;      // flips hard labels
  OracleMode mode = OracleMode::Deterministic;
  double beta = 1.0;

  void validate() const;
};

// Sum of true per-step rewards; ContractError when they are absent.
double segment_return(const Trajectory& t);

double oracle_label(const Trajectory& seg0, const Trajectory& seg1, const OracleConfig& cfg,
                    std::mt19937_64& rng);

// 5% of the spread of segment returns over all pairs.
double default_tie_threshold(const std::vector<std::pair<Trajectory, Trajectory>>& pairs);

// Labels every pair and packs segments plus triples into one dataset.
PreferenceDataset label_pairs(const std::vector<std::pair<Trajectory, Trajectory>>& pairs,
                              const OracleConfig& cfg, std::uint64_t seed);

// Segments plus unlabeled queries (for the labeling service).
PreferenceDataset pair_queries(const std::vector<std::pair<Trajectory, Trajectory>>& pairs);

}  // namespace prefmmt
