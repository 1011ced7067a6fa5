#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "prefmmt/envs.hpp"

namespace prefmmt {

std::string to_string(EnvName e) { return e == EnvName::Maze7 ? "maze7" : "fragile-push"; }

EnvName parse_env_name(std::string_view name) {
  if (name == "maze7") return EnvName::Maze7;
  if (name == "fragile-push") return EnvName::FragilePush;
  throw ConfigError("unknown env '" + std::string(name) + "' (expected maze7 or fragile-push)");
}

void EnvSpec::validate(std::optional<int> segment_len) const {
  const double total = mix.expert + mix.medium + mix.random;
  if (mix.expert < 0 || mix.medium < 0 || mix.random < 0 || std::abs(total - 1.0) > 1e-9)
    throw ContractError("behavior mixture weights must be nonnegative and sum to 1");
  if (episode_length < 1) throw ContractError("episode_length must be >= 1");
  if (episodes < 0) throw ContractError("episodes must be >= 0");
  if (segment_len && *segment_len > episode_length)
    throw ContractError("episode_length must be >= segment length");
  if (name == EnvName::FragilePush && episode_length < 5)
    throw ContractError("fragile-push episodes need at least 5 steps");
}

EnvSpec default_env_spec(EnvName name) {
  EnvSpec s;
  s.name = name;
  s.episode_length = name == EnvName::Maze7 ? 48 : 32;
  return s;
}

// --- fragile-push -------------------------------------------------------------

Trajectory simulate_fragile_push(const FragilePushEpisode& ep, const Eigen::MatrixXd& actions,
                                 std::string id) {
  using C = FragilePushConstants;
  if (actions.cols() != 2) throw ContractError("fragile-push actions are 2-D");
  const Eigen::Index len = actions.rows();
  Trajectory t;
  t.id = std::move(id);
  t.env_name = "fragile-push";
  t.states = Eigen::MatrixXd::Zero(len, 5);
  t.actions = actions;
  t.render.emplace();
  t.true_rewards.emplace();
  Eigen::Vector2d pos = ep.start;
  double total = 0.0;
  for (Eigen::Index step = 0; step < len; ++step) {
    const Eigen::Vector2d to_target = ep.target - pos;
    t.states.row(step) << pos.x() / C::kTargetDistance, pos.y() / C::kTargetDistance,
        to_target.x() / C::kTargetDistance, to_target.y() / C::kTargetDistance,
        step == ep.reveal_step ? ep.fragility : 0.0;
    t.render->push_back({pos.x(), pos.y()});
    const Eigen::Vector2d a = actions.row(step).transpose();
    const Eigen::Vector2d next = pos + C::kDt * a;
    double r = to_target.norm() - (ep.target - next).norm();
    if (step > ep.reveal_step) r -= C::kPenalty * C::kDt * std::max(0.0, a.norm() - ep.fragility);
    t.true_rewards->push_back(r);
    total += r;
    pos = next;
  }
  t.true_return = total;
  return t;
}

std::vector<Trajectory> gen_fragile_push(const EnvSpec& spec) {
  using C = FragilePushConstants;
  if (spec.name != EnvName::FragilePush) throw ContractError("gen_fragile_push needs a fragile-push spec");
  spec.validate();
  constexpr int kMaxReveal = 3;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(spec.episodes));
  for (int e = 0; e < spec.episodes; ++e) {
    const Behavior behavior = draw_behavior(spec.mix, rng);
    FragilePushEpisode ep;
    ep.start = {unit(rng) - 0.5, unit(rng) - 0.5};
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    ep.target = ep.start + C::kTargetDistance * Eigen::Vector2d(std::cos(heading), std::sin(heading));
    ep.fragility = C::kMinFragility + (C::kMaxFragility - C::kMinFragility) * unit(rng);
    ep.reveal_step = std::min(static_cast<int>(unit(rng) * (kMaxReveal + 1)), kMaxReveal);
    ep.reveal_step = std::min(ep.reveal_step, spec.episode_length - 1);

    // Matching the push force to the fragility is the skill; a blind push
    // draws its force from the fragility range without looking.
    const double matched = ep.fragility * (0.9 + 0.1 * unit(rng));
    const double blind = C::kMinFragility + (C::kMaxFragility - C::kMinFragility) * unit(rng);
    double level = 0.0;
    double aim_noise = 0.0;
    switch (behavior) {
      case Behavior::Expert:
        level = matched;
        aim_noise = 0.1;
        break;
      case Behavior::Medium:
        level = unit(rng) < 0.5 ? matched : blind;
        aim_noise = 0.3;
        break;
      case Behavior::Random:
        level = blind;
        aim_noise = 0.8;
        break;
    }

    Eigen::MatrixXd actions = Eigen::MatrixXd::Zero(spec.episode_length, 2);
    Eigen::Vector2d pos = ep.start;
    for (int step = 0; step < spec.episode_length; ++step) {
      if (step > ep.reveal_step) {
        const Eigen::Vector2d to_target = ep.target - pos;
        const double angle = std::atan2(to_target.y(), to_target.x()) + aim_noise * normal(rng);
        const double mag = std::max(0.0, level + 0.05 * normal(rng));
        actions.row(step) << mag * std::cos(angle), mag * std::sin(angle);
      }
      pos += C::kDt * actions.row(step).transpose();
    }
    char id[32];
    std::snprintf(id, sizeof id, "push-%04d", e);
    out.push_back(simulate_fragile_push(ep, actions, id));
  }
  return out;
}

std::vector<Trajectory> generate_episodes(const EnvSpec& spec) {
  return spec.name == EnvName::Maze7 ? gen_maze7(spec) : gen_fragile_push(spec);
}

// --- oracle -------------------------------------------------------------------

void OracleConfig::validate() const {
  if (!(tie_threshold >= 0)) throw ContractError("tie threshold must be >= 0");
  if (!(flip_prob >= 0 && flip_prob < 0.5)) throw ContractError("flip probability must lie in [0, 0.5)");
  if (mode == OracleMode::BradleyTerry && !(beta > 0)) throw ContractError("beta must be positive");
}

double segment_return(const Trajectory& t) {
  if (!t.true_rewards) throw ContractError("segment '" + t.id + "' carries no true rewards");
  double total = 0.0;
  for (double r : *t.true_rewards) total += r;
  return total;
}

double oracle_label(const Trajectory& seg0, const Trajectory& seg1, const OracleConfig& cfg,
                    std::mt19937_64& rng) {
  cfg.validate();
  const double r0 = segment_return(seg0);
  const double r1 = segment_return(seg1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double label = 0.5;
  if (cfg.mode == OracleMode::Deterministic) {
    if (r0 > r1 + cfg.tie_threshold) label = 0.0;
    else if (r1 > r0 + cfg.tie_threshold) label = 1.0;
  } else {
    const double z = cfg.beta * (r1 - r0);
    const double p1 = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    label = unit(rng) < p1 ? 1.0 : 0.0;
  }
  if (label != 0.5 && cfg.flip_prob > 0 && unit(rng) < cfg.flip_prob) label = 1.0 - label;
  return label;
}

double default_tie_threshold(const std::vector<std::pair<Trajectory, Trajectory>>& pairs) {
  if (pairs.empty()) return 0.0;
  double lo = segment_return(pairs.front().first);
  double hi = lo;
  for (const auto& [a, b] : pairs) {
    for (double r : {segment_return(a), segment_return(b)}) {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  }
  return 0.05 * (hi - lo);
}

namespace {

PreferenceDataset segments_dataset(const std::vector<std::pair<Trajectory, Trajectory>>& pairs) {
  PreferenceDataset d;
  if (pairs.empty()) return d;
  d.env_name = pairs.front().first.env_name;
  d.state_dim = static_cast<int>(pairs.front().first.states.cols());
  d.action_dim = static_cast<int>(pairs.front().first.actions.cols());
  for (const auto& [a, b] : pairs) {
    if (!d.trajectories.contains(a.id)) d.trajectories.add(a);
    if (!d.trajectories.contains(b.id)) d.trajectories.add(b);
  }
  return d;
}

}  // namespace

PreferenceDataset label_pairs(const std::vector<std::pair<Trajectory, Trajectory>>& pairs,
                              const OracleConfig& cfg, std::uint64_t seed) {
  PreferenceDataset d = segments_dataset(pairs);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    PreferenceTriple p;
    p.id0 = pairs[i].first.id;
    p.id1 = pairs[i].second.id;
    p.label = oracle_label(pairs[i].first, pairs[i].second, cfg, rng);
    p.source = LabelSource::Oracle;
    p.pair_id = "pair-" + std::to_string(i);
    d.triples.push_back(std::move(p));
  }
  d.check_integrity();
  return d;
}

PreferenceDataset pair_queries(const std::vector<std::pair<Trajectory, Trajectory>>& pairs) {
  PreferenceDataset d = segments_dataset(pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    d.pairs.push_back({"pair-" + std::to_string(i), pairs[i].first.id, pairs[i].second.id});
  d.check_integrity();
  return d;
}

}  // namespace prefmmt
