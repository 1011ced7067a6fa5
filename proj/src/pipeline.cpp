#include "prefmmt/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <map>

#include "prefmmt/inference.hpp"

namespace prefmmt {

namespace {

enum Stream : std::uint64_t { kEnv = 1, kPairs, kLabels, kInit, kTrain, kEval, kReference };

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EnvSpec ExperimentConfig::env_spec(std::uint64_t seed) const {
  EnvSpec spec = default_env_spec(env);
  if (episode_length > 0) spec.episode_length = episode_length;
  spec.episodes = episodes;
  spec.seed = derive_seed(seed, kEnv);
  return spec;
}

void ExperimentConfig::validate() const {
  env_spec(0).validate(segment_len);
  if (train_pairs < 1 || test_pairs < 1) throw ConfigError("need at least one train and one test pair");
  if (segment_len < 1 || segment_len > model.max_len) throw ConfigError("segment length must lie in [1, max_len]");
  if (window < 1 || window > model.max_len) throw ConfigError("window must lie in [1, max_len]");
  if (!(tie_band >= 0 && tie_band < 0.5)) throw ConfigError("tie band must lie in [0, 0.5)");
  if (!(flip_prob >= 0 && flip_prob < 0.5)) throw ConfigError("flip probability must lie in [0, 0.5)");
  if (variants.empty() || seeds.empty()) throw ConfigError("need at least one variant and one seed");
  if (policy_episodes < 1) throw ConfigError("need at least one policy evaluation episode");
  train.validate();
  q.validate();
}

SeedData make_seed_data(const ExperimentConfig& config, std::uint64_t seed) {
  SeedData d;
  d.episodes = generate_episodes(config.env_spec(seed));
  const auto n_train = static_cast<std::size_t>(config.train_pairs);
  auto pairs = sample_pairs(d.episodes, n_train + static_cast<std::size_t>(config.test_pairs),
                            config.segment_len, derive_seed(seed, kPairs));
  OracleConfig oracle;
  oracle.tie_threshold = config.tie_threshold ? *config.tie_threshold : default_tie_threshold(pairs);
  oracle.flip_prob = config.flip_prob;
  d.tie_threshold = oracle.tie_threshold;
  const std::vector<std::pair<Trajectory, Trajectory>> train(pairs.begin(), pairs.begin() + static_cast<long>(n_train));
  const std::vector<std::pair<Trajectory, Trajectory>> test(pairs.begin() + static_cast<long>(n_train), pairs.end());
  d.train = label_pairs(train, oracle, derive_seed(seed, kLabels));
  d.test = label_pairs(test, oracle, derive_seed(seed, kLabels) + 1);
  return d;
}

ModelConfig model_config_for(const ExperimentConfig& config, Variant variant) {
  ModelConfig m = config.model;
  const EnvSpec spec = config.env_spec(0);
  m.variant = variant;
  m.state_dim = spec.state_dim();
  m.action_dim = spec.action_dim();
  return m;
}

PolicyComparison run_policy_stage(const ExperimentConfig& config, const SeedData& data,
                                  const RewardModel<float>& model, std::uint64_t seed) {
  const EnvSpec spec = config.env_spec(seed);
  const auto refs = maze7_references(spec, derive_seed(seed, kReference));
  const auto relabeled = relabel(data.episodes, model, config.window);
  PolicyComparison out;
  const auto q_learned = fitted_q(relabeled, spec, RewardSource::Learned, config.q);
  const auto q_true = fitted_q(relabeled, spec, RewardSource::True, config.q);
  out.learned = evaluate_policy(q_learned, spec, config.policy_episodes, derive_seed(seed, kEval), refs);
  out.truth = evaluate_policy(q_true, spec, config.policy_episodes, derive_seed(seed, kEval), refs);
  return out;
}

RunResult run_variant(const ExperimentConfig& config, const SeedData& data, Variant variant,
                      std::uint64_t seed, std::optional<RewardModel<float>>* model_out) {
  const auto start = std::chrono::steady_clock::now();
  RewardModel<float> model(model_config_for(config, variant), derive_seed(seed, kInit));
  TrainConfig train = config.train;
  train.seed = derive_seed(seed, kTrain);
  FitOptions options;
  options.eval_every = 0;
  fit(data.train, model, train, options);

  RunResult r;
  r.env = config.env;
  r.variant = variant;
  r.seed = seed;
  r.train_accuracy = evaluate(data.train, model, config.tie_band).accuracy;
  const EvalResult test = evaluate(data.test, model, config.tie_band);
  r.test_accuracy = test.accuracy;
  try {
    r.pearson = pearson(test.labels, test.predictions);
  } catch (const UndefinedCorrelationError&) {
    r.pearson.reset();
  }
  if (config.env == EnvName::Maze7) r.policy = run_policy_stage(config, data, model, seed);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (model_out) model_out->emplace(std::move(model));
  return r;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunCallback& on_run) {
  config.validate();
  std::vector<RunResult> out;
  for (const std::uint64_t seed : config.seeds) {
    const SeedData data = make_seed_data(config, seed);
    for (const Variant v : config.variants) {
      out.push_back(run_variant(config, data, v, seed));
      if (on_run) on_run(out.back());
    }
  }
  return out;
}

CsvTable results_table(const std::vector<RunResult>& results) {
  CsvTable rows{{"env", "variant", "seed", "train_accuracy", "test_accuracy", "pearson",
                 "policy_return", "policy_success", "policy_normalized", "truth_return",
                 "truth_success", "seconds"}};
  for (const auto& r : results) {
    std::vector<std::string> row{to_string(r.env), to_string(r.variant), std::to_string(r.seed),
                                 fmt(r.train_accuracy), fmt(r.test_accuracy),
                                 r.pearson ? fmt(*r.pearson) : ""};
    if (r.policy) {
      for (double v : {r.policy->learned.mean_return, r.policy->learned.success_rate,
                       r.policy->learned.normalized_score, r.policy->truth.mean_return,
                       r.policy->truth.success_rate})
        row.push_back(fmt(v));
    } else {
      row.insert(row.end(), 5, "");
    }
    row.push_back(fmt(r.seconds));
    rows.push_back(std::move(row));
  }
  return rows;
}

CsvTable summary_table(const std::vector<RunResult>& results) {
  struct Cells {
    std::vector<double> test, pearson, normalized, success;
  };
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, Cells> groups;
  for (const auto& r : results) {
    const auto key = std::make_pair(to_string(r.env), to_string(r.variant));
    if (!groups.count(key)) order.push_back(key);
    Cells& c = groups[key];
    c.test.push_back(r.test_accuracy);
    if (r.pearson) c.pearson.push_back(*r.pearson);
    if (r.policy) {
      c.normalized.push_back(r.policy->learned.normalized_score);
      c.success.push_back(r.policy->learned.success_rate);
    }
  }
  auto cell = [](const std::vector<double>& v) {
    return v.empty() ? std::string() : format_summary(aggregate(v));
  };
  CsvTable rows{{"task", "variant", "runs", "test_accuracy", "pearson", "normalized_score", "success_rate"}};
  for (const auto& key : order) {
    const Cells& c = groups[key];
    rows.push_back({key.first, key.second, std::to_string(c.test.size()), cell(c.test), cell(c.pearson),
                    cell(c.normalized), cell(c.success)});
  }
  return rows;
}

}  // namespace prefmmt
