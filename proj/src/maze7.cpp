#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>

#include "prefmmt/envs.hpp"

namespace prefmmt {

namespace {

constexpr int kDx[Maze7::kActions] = {0, 0, -1, 1};
constexpr int kDy[Maze7::kActions] = {-1, 1, 0, 0};

}  // namespace

const std::vector<std::string>& Maze7::default_layout() {
  static const std::vector<std::string> layout = {
      "...#...",  //
      ".#.#.#.",  //
      ".#...#.",  //
      ".###.#.",  //
      "...#.#.",  //
      "##.#...",  //
      "G..###.",
  };
  return layout;
}

Maze7::Maze7(const std::vector<std::string>& layout_in) {
  const auto& layout = layout_in.empty() ? default_layout() : layout_in;
  if (layout.size() != kSize) throw GenerationError("maze layout must have 7 rows");
  grid_.assign(kSize * kSize, '#');
  int goals = 0;
  for (int y = 0; y < kSize; ++y) {
    if (layout[static_cast<std::size_t>(y)].size() != kSize)
      throw GenerationError("maze layout rows must have 7 columns");
    for (int x = 0; x < kSize; ++x) {
      const char ch = layout[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
      if (ch != '#' && ch != '.' && ch != 'G') throw GenerationError("bad maze character");
      grid_[static_cast<std::size_t>(y * kSize + x)] = ch;
      if (ch == 'G') {
        goal_ = {x, y};
        ++goals;
      }
      if (ch != '#') open_.push_back({x, y});
    }
  }
  if (goals != 1) throw GenerationError("maze layout must contain exactly one goal");

  dist_.assign(kSize * kSize, -1);
  std::deque<Cell> queue{goal_};
  dist_[index(goal_)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (int a = 0; a < kActions; ++a) {
      const Cell n{c.x + kDx[a], c.y + kDy[a]};
      if (is_open(n) && dist_[index(n)] < 0) {
        dist_[index(n)] = dist_[index(c)] + 1;
        queue.push_back(n);
      }
    }
  }
  for (const Cell c : open_) {
    if (dist_[index(c)] < 0)
      throw GenerationError("goal unreachable from cell (" + std::to_string(c.x) + ", " +
                            std::to_string(c.y) + ")");
    if (!(c == goal_)) starts_.push_back(c);
  }
  if (starts_.empty()) throw GenerationError("maze has no start cells");
}

bool Maze7::is_open(Cell c) const {
  return c.x >= 0 && c.y >= 0 && c.x < kSize && c.y < kSize &&
         grid_[static_cast<std::size_t>(index(c))] != '#';
}

Cell Maze7::step(Cell c, int action) const {
  if (c == goal_) return c;
  const Cell n{c.x + kDx[action], c.y + kDy[action]};
  return is_open(n) ? n : c;
}

double Maze7::reward(Cell /*from*/, Cell to) const {
  return to == goal_ ? kGoalReward : kStepCost;
}

int Maze7::optimal_action(Cell c) const {
  for (int a = 0; a < kActions; ++a) {
    const Cell n{c.x + kDx[a], c.y + kDy[a]};
    if (is_open(n) && distance(n) == distance(c) - 1) return a;
  }
  return 0;
}

Eigen::RowVectorXd Maze7::features(Cell c) const {
  Eigen::RowVectorXd f(6);
  f(0) = c.x / 6.0;
  f(1) = c.y / 6.0;
  for (int a = 0; a < kActions; ++a) f(2 + a) = is_open({c.x + kDx[a], c.y + kDy[a]}) ? 0.0 : 1.0;
  return f;
}

Cell Maze7::decode_state(const Eigen::RowVectorXd& state) const {
  if (state.size() != 6) throw ContractError("maze7 state must have 6 features");
  const Cell c{static_cast<int>(std::lround(state(0) * 6.0)),
               static_cast<int>(std::lround(state(1) * 6.0))};
  if (!is_open(c)) throw ContractError("state does not decode to an open maze cell");
  return c;
}

int Maze7::decode_action(const Eigen::RowVectorXd& action) {
  if (action.size() != kActions) throw ContractError("maze7 action must be one-hot over 4 moves");
  Eigen::Index best = 0;
  action.maxCoeff(&best);
  return static_cast<int>(best);
}

Trajectory rollout_maze7(const Maze7& maze, Cell start, Behavior behavior, int length,
                         std::mt19937_64& rng, std::string id) {
  constexpr double kMediumEpsilon = 0.3;
  Trajectory t;
  t.id = std::move(id);
  t.env_name = "maze7";
  t.states.resize(length, 6);
  t.actions = Eigen::MatrixXd::Zero(length, Maze7::kActions);
  t.render.emplace();
  t.true_rewards.emplace();
  std::uniform_int_distribution<int> any_action(0, Maze7::kActions - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Cell c = start;
  double total = 0.0;
  for (int step = 0; step < length; ++step) {
    int a = 0;
    const bool at_goal = c == maze.goal();
    switch (behavior) {
      case Behavior::Expert:
        a = at_goal ? any_action(rng) : maze.optimal_action(c);
        break;
      case Behavior::Medium:
        a = (at_goal || unit(rng) < kMediumEpsilon) ? any_action(rng) : maze.optimal_action(c);
        break;
      case Behavior::Random:
        a = any_action(rng);
        break;
    }
    const Cell next = maze.step(c, a);
    t.states.row(step) = maze.features(c);
    t.actions(step, a) = 1.0;
    t.render->push_back({static_cast<double>(c.x), static_cast<double>(c.y)});
    const double r = maze.reward(c, next);
    t.true_rewards->push_back(r);
    total += r;
    c = next;
  }
  t.true_return = total;
  return t;
}

Behavior draw_behavior(const BehaviorMix& mix, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  if (u < mix.expert) return Behavior::Expert;
  if (u < mix.expert + mix.medium) return Behavior::Medium;
  return Behavior::Random;
}

std::vector<Trajectory> gen_maze7(const EnvSpec& spec) {
  if (spec.name != EnvName::Maze7) throw ContractError("gen_maze7 needs a maze7 spec");
  spec.validate();
  const Maze7 maze(spec.maze_layout);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick(0, maze.start_cells().size() - 1);
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(spec.episodes));
  for (int e = 0; e < spec.episodes; ++e) {
    const Behavior b = draw_behavior(spec.mix, rng);
    const Cell start = maze.start_cells()[pick(rng)];
    char id[32];
    std::snprintf(id, sizeof id, "maze7-%04d", e);
    out.push_back(rollout_maze7(maze, start, b, spec.episode_length, rng, id));
  }
  return out;
}

}  // namespace prefmmt
