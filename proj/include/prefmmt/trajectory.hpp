#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prefmmt/errors.hpp"

namespace prefmmt {

using RenderPoint = std::array<double, 2>;

struct Trajectory {
  std::string id;
  Eigen::MatrixXd states;   // [T x d_s]
  Eigen::MatrixXd actions;  // [T x d_a]
  std::optional<std::vector<RenderPoint>> render;
  std::string env_name;
  // Ground truth, used only by oracles and evaluation; never a model input.
  std::optional<double> true_return;
  std::optional<std::vector<double>> true_rewards;
  // Per-step rewards written by relabeling.
  std::optional<std::vector<double>> learned_rewards;

  Eigen::Index length() const { return states.rows(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

class TrajectoryError : public ValidationError {
 public:
  enum class Reason { Empty, LengthMismatch, NonFinite, BadRenderLength, BadRewardLength };

  TrajectoryError(Reason reason, const std::string& what) : ValidationError(what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

// Throws TrajectoryError naming the first violated invariant.
void validate_trajectory(const Trajectory& t);

// Rows [start, start + len) of every per-step field. true_return of the
// slice is the sum of its true rewards when those are present.
Trajectory slice(const Trajectory& t, Eigen::Index start, Eigen::Index len, std::string id);

enum class LabelSource { Oracle, Human };

std::string to_string(LabelSource s);

// Label 0 prefers trajectory 0, 1 prefers trajectory 1, 0.5 is a tie.
inline bool is_valid_label(double label) { return label == 0.0 || label == 0.5 || label == 1.0; }

struct PreferenceTriple {
  std::string id0;
  std::string id1;
  double label = 0.5;
  LabelSource source = LabelSource::Oracle;
  std::optional<std::string> pair_id;

  friend bool operator==(const PreferenceTriple&, const PreferenceTriple&) = default;
};

// A query awaiting a label.
struct PairQuery {
  std::string pair_id;
  std::string id0;
  std::string id1;

  friend bool operator==(const PairQuery&, const PairQuery&) = default;
};

// Id-addressable trajectories in insertion order.
class TrajectoryStore {
 public:
  void add(Trajectory t);
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const Trajectory& at(const std::string& id) const;
  const std::vector<Trajectory>& all() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  friend bool operator==(const TrajectoryStore& a, const TrajectoryStore& b) {
    return a.items_ == b.items_;
  }

 private:
  std::vector<Trajectory> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct PreferenceDataset {
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  TrajectoryStore trajectories;
  std::vector<PairQuery> pairs;
  std::vector<PreferenceTriple> triples;

  // Throws IntegrityError for dangling references or dimension mismatches.
  void check_integrity() const;

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;
};

// Line-delimited JSON: a header record, then trajectory, pair and
// preference records.
void save_dataset(const PreferenceDataset& d, const std::filesystem::path& path);
PreferenceDataset load_dataset(const std::filesystem::path& path);

// Single-record encoders shared with the append-only label log.
std::string encode_header(const PreferenceDataset& d);
std::string encode_record(const Trajectory& t);
std::string encode_record(const PairQuery& q);
std::string encode_record(const PreferenceTriple& p);

// `n` pairs of equal-length segments, each pair cut from two distinct
// episodes chosen uniformly; offsets uniform. Deterministic in `seed`.
std::vector<std::pair<Trajectory, Trajectory>> sample_pairs(const std::vector<Trajectory>& episodes,
                                                            std::size_t n, Eigen::Index segment_len,
                                                            std::uint64_t seed);

// Episodes, all sharing env/dims, wrapped in a dataset without preferences.
PreferenceDataset make_episode_dataset(std::vector<Trajectory> episodes);

}  // namespace prefmmt
