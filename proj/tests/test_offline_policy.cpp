#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "prefmmt/metrics.hpp"
#include "prefmmt/offline_policy.hpp"

using namespace prefmmt;

namespace {

// Every (open cell, action) pair once, under the given reward offset.
std::vector<Transition> full_coverage(const Maze7& maze, double offset = 0.0) {
  std::vector<Transition> out;
  for (const Cell c : maze.open_cells())
    for (int a = 0; a < Maze7::kActions; ++a) {
      const Cell n = maze.step(c, a);
      out.push_back({maze.index(c), a, maze.reward(c, n) + offset, maze.index(n)});
    }
  return out;
}

EnvSpec maze_spec(std::uint64_t seed) {
  EnvSpec s = default_env_spec(EnvName::Maze7);
  s.seed = seed;
  return s;
}

}  // namespace

TEST(FittedQ, TwoStateChainMatchesClosedForm) {
  // 0 -> 1 pays 1, 1 -> 0 pays 0: Q(0) = 1 / (1 - g^2), Q(1) = g / (1 - g^2).
  const std::vector<Transition> chain{{0, 0, 1.0, 1}, {1, 0, 0.0, 0}};
  QConfig cfg;
  cfg.gamma = 0.9;
  cfg.alpha = 0.5;
  cfg.sweeps = 2000;
  const auto q = fitted_q(chain, 2, 1, cfg);
  const double g = cfg.gamma;
  EXPECT_NEAR(q(0, 0), 1.0 / (1.0 - g * g), 1e-6);
  EXPECT_NEAR(q(1, 0), g / (1.0 - g * g), 1e-6);
}

TEST(FittedQ, ZeroRewardsGiveZeroTable) {
  const Maze7 maze;
  auto data = full_coverage(maze);
  for (auto& t : data) t.reward = 0.0;
  const auto q = fitted_q(data, maze.num_states(), Maze7::kActions, QConfig{});
  EXPECT_TRUE(q.table().isZero(0.0));
}

TEST(FittedQ, DoublingSweepsNeverHurtsOnMaze) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto spec = maze_spec(seed);
    const auto eps = gen_maze7(spec);
    const auto refs = maze7_references(spec, seed + 100, 1000);
    QConfig cfg;
    double previous = -1e9;
    for (int sweeps : {50, 100, 200, 400}) {
      cfg.sweeps = sweeps;
      const auto q = fitted_q(eps, spec, RewardSource::True, cfg);
      const double ret = evaluate_policy(q, spec, 100, seed, refs).mean_return;
      EXPECT_GE(ret, previous - 1e-12) << "seed " << seed << " sweeps " << sweeps;
      previous = ret;
    }
  }
}

TEST(FittedQ, ArgmaxInvariantToRewardShift) {
  const Maze7 maze;
  QConfig cfg;
  cfg.gamma = 0.9;
  cfg.alpha = 1.0;
  cfg.sweeps = 600;
  const auto base = fitted_q(full_coverage(maze), maze.num_states(), Maze7::kActions, cfg);
  for (double c : {-3.0, 0.5, 7.0}) {
    const auto shifted = fitted_q(full_coverage(maze, c), maze.num_states(), Maze7::kActions, cfg);
    for (const Cell cell : maze.open_cells()) {
      const int s = maze.index(cell);
      // Only states with a unique best action have a well-defined argmax.
      std::vector<double> row(base.table().row(s).data(), base.table().row(s).data() + 4);
      std::sort(row.begin(), row.end());
      if (row[3] - row[2] < 1e-9) continue;
      EXPECT_EQ(base.greedy(s), shifted.greedy(s)) << "state " << s << " shift " << c;
    }
  }
}

TEST(FittedQ, Errors) {
  EXPECT_THROW(fitted_q(std::vector<Transition>{}, 2, 1, QConfig{}), ContractError);
  EXPECT_THROW(fitted_q(std::vector<Transition>{{0, 3, 1.0, 1}}, 2, 1, QConfig{}), ContractError);
  QConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(fitted_q(std::vector<Transition>{{0, 0, 1.0, 1}}, 2, 1, bad), ConfigError);
  EnvSpec push = default_env_spec(EnvName::FragilePush);
  EXPECT_THROW(fitted_q(gen_fragile_push(push), push, RewardSource::True, QConfig{}), UnsupportedError);
  auto eps = gen_maze7(maze_spec(0));
  EXPECT_THROW(fitted_q(eps, maze_spec(0), RewardSource::Learned, QConfig{}), ContractError);
}

TEST(FittedQ, MinMaxRescaleMapsRewardsToUnitRange) {
  const std::vector<Transition> chain{{0, 0, 5.0, 1}, {1, 0, -5.0, 0}};
  QConfig cfg;
  cfg.minmax_rescale = true;
  cfg.sweeps = 1;
  cfg.alpha = 1.0;
  cfg.gamma = 0.0;
  const auto q = fitted_q(chain, 2, 1, cfg);
  EXPECT_EQ(q(0, 0), 1.0);
  EXPECT_EQ(q(1, 0), 0.0);
}

TEST(Greedy, UnsupportedActionsAreNeverChosen) {
  TabularQ q(2, 3);
  q(0, 0) = 5.0;
  q(0, 2) = 1.0;
  q.mark_supported(0, 2);
  q.mark_supported(0, 1);
  EXPECT_EQ(q.greedy(0), 2);
  EXPECT_EQ(q.greedy(1), 0);
  EXPECT_EQ(q.max_supported(1), 0.0);
}

TEST(EvaluatePolicy, ExpertScoresOneHundred) {
  const auto spec = maze_spec(0);
  const auto refs = maze7_references(spec, 1);
  MazePolicy expert = [](const Maze7& m, Cell c, std::mt19937_64&) { return m.optimal_action(c); };
  const auto ev = evaluate_maze_policy(expert, spec, 2000, 2, refs);
  EXPECT_NEAR(ev.normalized_score, 100.0, 1.0);
  EXPECT_EQ(ev.success_rate, 1.0);
}

TEST(EvaluatePolicy, RandomScoresZero) {
  const auto spec = maze_spec(0);
  const auto refs = maze7_references(spec, 3);
  MazePolicy random = [](const Maze7&, Cell, std::mt19937_64& rng) {
    return std::uniform_int_distribution<int>(0, 3)(rng);
  };
  EXPECT_NEAR(evaluate_maze_policy(random, spec, 2000, 4, refs).normalized_score, 0.0, 5.0);
}

TEST(EvaluatePolicy, FullCoverageTrueRewardPolicySucceeds) {
  const Maze7 maze;
  const auto spec = maze_spec(0);
  QConfig cfg;
  cfg.alpha = 1.0;
  const auto q = fitted_q(full_coverage(maze), maze.num_states(), Maze7::kActions, cfg);
  const auto ev = evaluate_policy(q, spec, 100, 5, maze7_references(spec, 6));
  EXPECT_GE(ev.success_rate, 0.95);
  // Greedy actions agree with shortest-path distances everywhere.
  for (const Cell c : maze.start_cells())
    EXPECT_EQ(maze.distance(maze.step(c, q.greedy(maze.index(c)))), maze.distance(c) - 1);
}

TEST(EvaluatePolicy, ReproducibleAndValidated) {
  const auto spec = maze_spec(0);
  const auto eps = gen_maze7(spec);
  const auto q = fitted_q(eps, spec, RewardSource::True, QConfig{});
  const auto refs = maze7_references(spec, 7, 500);
  const auto a = evaluate_policy(q, spec, 50, 8, refs);
  const auto b = evaluate_policy(q, spec, 50, 8, refs);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.success_rate, b.success_rate);
  EXPECT_THROW(evaluate_policy(q, spec, 50, 8, ReferenceReturns{}), ContractError);
  EXPECT_THROW(evaluate_policy(TabularQ(3, 4), spec, 50, 8, refs), ContractError);
}

TEST(Transitions, DropFinalStepAndDecodeCells) {
  const auto spec = maze_spec(2);
  const auto eps = gen_maze7(spec);
  const Maze7 maze;
  const auto tr = maze7_transitions(eps, maze, RewardSource::True);
  EXPECT_EQ(tr.size(), eps.size() * static_cast<std::size_t>(spec.episode_length - 1));
  for (const auto& t : tr) EXPECT_EQ(maze.index(maze.step(maze.cell(t.state), t.action)), t.next_state);
}

TEST(PolicyCsv, RowsForSupportedPairs) {
  const std::vector<Transition> chain{{0, 0, 1.0, 1}, {1, 1, 0.0, 0}};
  const auto q = fitted_q(chain, 2, 2, QConfig{});
  const auto p = std::filesystem::temp_directory_path() / "prefmmt_policy.csv";
  write_policy_csv(p, q);
  const auto rows = read_csv(p);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"state_id", "action_id", "q"}));
  EXPECT_EQ(rows[2][0], "1");
  EXPECT_EQ(rows[2][1], "1");
}
