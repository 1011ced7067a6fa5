#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "prefmmt/pipeline.hpp"

using namespace prefmmt;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.env = EnvName::Maze7;
  c.episodes = 20;
  c.train_pairs = 12;
  c.test_pairs = 8;
  c.segment_len = 8;
  c.model.d_model = 8;
  c.model.n_heads = 2;
  c.model.max_len = 8;
  c.model.mlp_hidden = {16};
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.window = 8;
  c.q.sweeps = 20;
  c.policy_episodes = 10;
  c.variants = {Variant::PrefMMT, Variant::MR};
  c.seeds = {0, 1};
  return c;
}

std::string summary_oracle(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, sd);
  return buf;
}

}  // namespace

TEST(Pipeline, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (std::uint64_t stream = 1; stream < 8; ++stream) seen.insert(derive_seed(seed, stream));
  EXPECT_EQ(seen.size(), 70u);
  EXPECT_EQ(derive_seed(3, 2), derive_seed(3, 2));
}

TEST(Pipeline, SeedDataIsDeterministic) {
  const auto c = small_config();
  const auto a = make_seed_data(c, 7);
  const auto b = make_seed_data(c, 7);
  EXPECT_EQ(a.episodes, b.episodes);
  EXPECT_EQ(a.train.triples, b.train.triples);
  EXPECT_EQ(a.test.triples, b.test.triples);
  EXPECT_EQ(a.train.triples.size(), 12u);
  EXPECT_EQ(a.test.triples.size(), 8u);
  EXPECT_GT(a.tie_threshold, 0.0);
  const auto other = make_seed_data(c, 8);
  EXPECT_NE(a.train.triples, other.train.triples);
}

TEST(Pipeline, ValidationRejectsBadConfigs) {
  auto c = small_config();
  c.segment_len = 9;
  EXPECT_THROW(run_experiment(c), ConfigError);
  c = small_config();
  c.variants.clear();
  EXPECT_THROW(run_experiment(c), ConfigError);
  c = small_config();
  c.tie_band = 0.5;
  EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(Pipeline, SmallExperimentAndTables) {
  const auto c = small_config();
  int calls = 0;
  const auto results = run_experiment(c, [&](const RunResult&) { ++calls; });
  ASSERT_EQ(results.size(), 4u);
  EXPECT_EQ(calls, 4);
  for (const auto& r : results) {
    ASSERT_TRUE(r.policy);
    EXPECT_GE(r.test_accuracy, 0.0);
    EXPECT_LE(r.test_accuracy, 1.0);
    EXPECT_GE(r.policy->truth.success_rate, 0.0);
  }
  const auto again = run_experiment(c);
  for (std::size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(results[i].test_accuracy, again[i].test_accuracy);
    EXPECT_EQ(results[i].policy->learned.mean_return, again[i].policy->learned.mean_return);
  }

  const auto runs = results_table(results);
  ASSERT_EQ(runs.size(), 5u);
  EXPECT_EQ(runs[0][0], "env");
  EXPECT_EQ(runs[1][1], "PrefMMT");
  EXPECT_EQ(runs[2][1], "MR");

  const auto summary = summary_table(results);
  ASSERT_EQ(summary.size(), 3u);
  EXPECT_EQ(summary[0], (std::vector<std::string>{"task", "variant", "runs", "test_accuracy", "pearson",
                                                  "normalized_score", "success_rate"}));
  for (std::size_t row = 1; row < summary.size(); ++row) {
    std::vector<double> acc, norm;
    for (const auto& r : results)
      if (to_string(r.variant) == summary[row][1]) {
        acc.push_back(r.test_accuracy);
        norm.push_back(r.policy->learned.normalized_score);
      }
    EXPECT_EQ(summary[row][2], "2");
    EXPECT_EQ(summary[row][3], summary_oracle(acc));
    EXPECT_EQ(summary[row][5], summary_oracle(norm));
  }
}
