#pragma once

// The end-to-end experiment: generate offline episodes, label segment pairs
// with the oracle, train each reward-model variant, evaluate held-out
// preference prediction and, on maze7, relabel the episodes and learn a
// policy offline.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prefmmt/envs.hpp"
#include "prefmmt/metrics.hpp"
#include "prefmmt/model.hpp"
#include "prefmmt/offline_policy.hpp"
#include "prefmmt/training.hpp"

namespace prefmmt {

struct ExperimentConfig {
  EnvName env = EnvName::Maze7;
  int episodes = 100;
  int episode_length = 0;  // 0 selects the environment default
  int train_pairs = 100;
  int test_pairs = 50;
  int segment_len = 32;
  std::optional<double> tie_threshold;  // default: 5% of the return range
  double flip_prob = 0.0;
  ModelConfig model;  // variant and input dims are set per run
  TrainConfig train;
  double tie_band = 0.1;
  int window = 32;
  QConfig q;
  int policy_episodes = 100;
  std::vector<Variant> variants{Variant::PrefMMT};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  EnvSpec env_spec(std::uint64_t seed) const;
  void validate() const;
};

// Independent stream `stream` of a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SeedData {
  std::vector<Trajectory> episodes;
  PreferenceDataset train;
  PreferenceDataset test;
  double tie_threshold = 0.0;
};

SeedData make_seed_data(const ExperimentConfig& config, std::uint64_t seed);

struct PolicyComparison {
  PolicyEval learned;  // Q fitted on relabeled rewards
  PolicyEval truth;    // Q fitted on ground-truth rewards
};

struct RunResult {
  EnvName env = EnvName::Maze7;
  Variant variant = Variant::PrefMMT;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::optional<double> pearson;  // empty when predictions are constant
  std::optional<PolicyComparison> policy;
  double seconds = 0.0;
};

ModelConfig model_config_for(const ExperimentConfig& config, Variant variant);

// Trains one variant on one seed's data. The trained model is moved into
// `model_out` when given.
RunResult run_variant(const ExperimentConfig& config, const SeedData& data, Variant variant,
                      std::uint64_t seed, std::optional<RewardModel<float>>* model_out = nullptr);

// Offline policy stage for maze7 with a trained model.
PolicyComparison run_policy_stage(const ExperimentConfig& config, const SeedData& data,
                                  const RewardModel<float>& model, std::uint64_t seed);

using RunCallback = std::function<void(const RunResult&)>;

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunCallback& on_run = {});

// One row per run.
CsvTable results_table(const std::vector<RunResult>& results);

// Table-I layout: one row per (env, variant) with "mean ± std" cells over
// seeds for each metric.
CsvTable summary_table(const std::vector<RunResult>& results);

}  // namespace prefmmt
