#include "prefmmt/offline_policy.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "prefmmt/metrics.hpp"

namespace prefmmt {

void QConfig::validate() const {
  if (!(gamma >= 0 && gamma < 1)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("alpha must lie in (0, 1]");
  if (sweeps < 0) throw ConfigError("sweeps must be >= 0");
}

TabularQ::TabularQ(int num_states, int num_actions)
    : q_(Eigen::MatrixXd::Zero(num_states, num_actions)),
      supported_(Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(num_states, num_actions,
                                                                               false)) {
  if (num_states < 1 || num_actions < 1) throw ContractError("Q table needs states and actions");
}

int TabularQ::greedy(int s) const {
  int best = -1;
  for (int a = 0; a < num_actions(); ++a)
    if (supported(s, a) && (best < 0 || q_(s, a) > q_(s, best))) best = a;
  return best < 0 ? 0 : best;
}

double TabularQ::max_supported(int s) const {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_actions(); ++a)
    if (supported(s, a)) best = std::max(best, q_(s, a));
  return std::isfinite(best) ? best : 0.0;
}

TabularQ fitted_q(const std::vector<Transition>& data_in, int num_states, int num_actions,
                  const QConfig& config) {
  config.validate();
  if (data_in.empty()) throw ContractError("fitted_q: dataset is empty");
  std::vector<Transition> data = data_in;
  for (const auto& t : data) {
    if (t.state < 0 || t.state >= num_states || t.next_state < 0 || t.next_state >= num_states ||
        t.action < 0 || t.action >= num_actions)
      throw ContractError("fitted_q: transition outside the state-action space");
    if (!std::isfinite(t.reward)) throw NumericError("fitted_q: non-finite reward");
  }
  if (config.minmax_rescale) {
    auto [lo, hi] = std::minmax_element(data.begin(), data.end(), [](const auto& a, const auto& b) {
      return a.reward < b.reward;
    });
    const double min = lo->reward;
    const double span = hi->reward - min;
    for (auto& t : data) t.reward = span > 0 ? (t.reward - min) / span : 0.0;
  }
  TabularQ q(num_states, num_actions);
  for (const auto& t : data) q.mark_supported(t.state, t.action);
  for (int sweep = 0; sweep < config.sweeps; ++sweep) {
    for (const auto& t : data) {
      const double target = t.reward + config.gamma * q.max_supported(t.next_state);
      q(t.state, t.action) = (1.0 - config.alpha) * q(t.state, t.action) + config.alpha * target;
    }
  }
  return q;
}

std::vector<Transition> maze7_transitions(const std::vector<Trajectory>& episodes, const Maze7& maze,
                                          RewardSource source) {
  std::vector<Transition> out;
  for (const auto& ep : episodes) {
    const auto& rewards = source == RewardSource::True ? ep.true_rewards : ep.learned_rewards;
    if (!rewards)
      throw ContractError("episode '" + ep.id + "' has no " +
                          (source == RewardSource::True ? "true" : "learned") + " rewards");
    for (Eigen::Index t = 0; t + 1 < ep.length(); ++t) {
      Transition tr;
      tr.state = maze.index(maze.decode_state(ep.states.row(t)));
      tr.action = Maze7::decode_action(ep.actions.row(t));
      tr.reward = (*rewards)[static_cast<std::size_t>(t)];
      tr.next_state = maze.index(maze.decode_state(ep.states.row(t + 1)));
      out.push_back(tr);
    }
  }
  return out;
}

TabularQ fitted_q(const std::vector<Trajectory>& episodes, const EnvSpec& spec, RewardSource source,
                  const QConfig& config) {
  if (spec.name != EnvName::Maze7)
    throw UnsupportedError("fitted_q needs a discrete environment; " + to_string(spec.name) +
                           " is continuous");
  const Maze7 maze(spec.maze_layout);
  return fitted_q(maze7_transitions(episodes, maze, source), maze.num_states(), Maze7::kActions,
                  config);
}

ReferenceReturns maze7_references(const EnvSpec& spec, std::uint64_t seed, int mc_episodes) {
  const Maze7 maze(spec.maze_layout);
  const int len = spec.episode_length;
  double expert = 0.0;
  for (const Cell c : maze.start_cells()) {
    const int d = maze.distance(c);
    expert += d <= len ? Maze7::kStepCost * (d - 1) + Maze7::kGoalReward * (len - d + 1) : Maze7::kStepCost * len;
  }
  expert /= static_cast<double>(maze.start_cells().size());

  ReferenceReturns refs;
  refs.expert = expert;
  ReferenceReturns none;
  none.random = 0.0;
  none.expert = 1.0;
  MazePolicy random_policy = [](const Maze7&, Cell, std::mt19937_64& rng) {
    return std::uniform_int_distribution<int>(0, Maze7::kActions - 1)(rng);
  };
  refs.random = evaluate_maze_policy(random_policy, spec, mc_episodes, seed, none).mean_return;
  return refs;
}

double normalized_score(double score, const ReferenceReturns& refs) {
  if (!refs.random || !refs.expert) throw ContractError("reference returns are missing");
  if (*refs.expert == *refs.random) throw ContractError("expert and random references coincide");
  return 100.0 * (score - *refs.random) / (*refs.expert - *refs.random);
}

PolicyEval evaluate_maze_policy(const MazePolicy& policy, const EnvSpec& spec, int episodes,
                                std::uint64_t seed, const ReferenceReturns& refs) {
  if (spec.name != EnvName::Maze7) throw UnsupportedError("policy evaluation needs maze7");
  if (!refs.random || !refs.expert) throw ContractError("reference returns are missing");
  if (episodes < 1) throw ContractError("need at least one evaluation episode");
  const Maze7 maze(spec.maze_layout);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, maze.start_cells().size() - 1);
  double total = 0.0;
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    Cell c = maze.start_cells()[pick(rng)];
    double ret = 0.0;
    for (int t = 0; t < spec.episode_length; ++t) {
      const Cell next = maze.step(c, policy(maze, c, rng));
      ret += maze.reward(c, next);
      c = next;
    }
    total += ret;
    successes += c == maze.goal() ? 1 : 0;
  }
  PolicyEval out;
  out.episodes = episodes;
  out.mean_return = total / episodes;
  out.success_rate = static_cast<double>(successes) / episodes;
  out.normalized_score = normalized_score(out.mean_return, refs);
  return out;
}

PolicyEval evaluate_policy(const TabularQ& q, const EnvSpec& spec, int episodes, std::uint64_t seed,
                           const ReferenceReturns& refs) {
  if (spec.name != EnvName::Maze7) throw UnsupportedError("policy evaluation needs maze7");
  const Maze7 maze(spec.maze_layout);
  if (q.num_states() != maze.num_states() || q.num_actions() != Maze7::kActions)
    throw ContractError("Q table does not match the maze state-action space");
  MazePolicy greedy = [&q](const Maze7& m, Cell c, std::mt19937_64&) { return q.greedy(m.index(c)); };
  return evaluate_maze_policy(greedy, spec, episodes, seed, refs);
}

void write_policy_csv(const std::filesystem::path& path, const TabularQ& q) {
  CsvTable rows{{"state_id", "action_id", "q"}};
  for (int s = 0; s < q.num_states(); ++s)
    for (int a = 0; a < q.num_actions(); ++a) {
      if (!q.supported(s, a)) continue;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", q(s, a));
      rows.push_back({std::to_string(s), std::to_string(a), buf});
    }
  write_csv(path, rows);
}

}  // namespace prefmmt
