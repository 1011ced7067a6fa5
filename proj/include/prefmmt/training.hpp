#pragma once

// Bradley-Terry preference learning and preference-prediction evaluation.
//
// Label convention: label 1 means trajectory 1 is preferred, so the model is
// trained to raise p1 = P[seg1 > seg0] = sigmoid(rho1 - rho0) on such triples.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmmt/metrics.hpp"
#include "prefmmt/model.hpp"
#include "prefmmt/trajectory.hpp"

namespace prefmmt {

inline constexpr double kLogProbFloor = -30.0;

// P[seg1 preferred] under Bradley-Terry; NumericError on non-finite input.
double bt_probability(double rho0, double rho1);

// Cross-entropy of one triple given p1, with log-probabilities clamped at
// kLogProbFloor. ContractError on an invalid label.
double triple_loss(double p1, double label);

// Same, from the two scores (stable for saturated differences).
double triple_loss_from_scores(double rho0, double rho1, double label);

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int epochs = 200;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;

  void validate() const;
};

// Segment buffers converted once to the model's scalar type.
template <typename Scalar>
class SegmentCache {
 public:
  explicit SegmentCache(const TrajectoryStore& store);

  const Matrix<Scalar>& states(const std::string& id) const { return entry(id).first; }
  const Matrix<Scalar>& actions(const std::string& id) const { return entry(id).second; }

 private:
  const std::pair<Matrix<Scalar>, Matrix<Scalar>>& entry(const std::string& id) const;
  std::map<std::string, std::pair<Matrix<Scalar>, Matrix<Scalar>>> items_;
};

// Summed cross-entropy over `batch`, recorded on `graph`.
template <typename Scalar>
Tensor<Scalar> preference_loss(Graph<Scalar>& graph, const RewardModel<Scalar>& model,
                               const SegmentCache<Scalar>& segments,
                               std::span<const PreferenceTriple> batch);

template <typename Scalar>
Tensor<Scalar> preference_loss(Graph<Scalar>& graph, const RewardModel<Scalar>& model,
                               const PreferenceDataset& dataset,
                               std::span<const PreferenceTriple> batch);

template <typename Scalar>
class Adam {
 public:
  explicit Adam(const TrainConfig& config);

  // One update of every parameter that received a gradient in `graph`.
  void step(ModelParams<Scalar>& params, const Graph<Scalar>& graph);
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix<Scalar>, Matrix<Scalar>>> moments_;
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion{};
  double mean_log_likelihood = 0.0;
  std::vector<double> p1;
  std::vector<double> predictions;
  std::vector<double> labels;
};

// 1 if p1 > 0.5 + tie_band, 0 if p1 < 0.5 - tie_band, else 0.5.
double predict_label(double p1, double tie_band);

template <typename Scalar>
EvalResult evaluate(const PreferenceDataset& dataset, const RewardModel<Scalar>& model,
                    double tie_band);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> eval_accuracy;
};

struct FitOptions {
  // Evaluated after each epoch when set; otherwise accuracy is measured on
  // the training set every `eval_every` epochs (0 disables).
  const PreferenceDataset* eval_set = nullptr;
  int eval_every = 1;
  double tie_band = 0.0;
  // Stop once the measured accuracy reaches this value.
  std::optional<double> stop_at_accuracy;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  std::vector<EpochRecord> curve;
  int epochs_run = 0;
  long steps = 0;
};

// Shuffled minibatch Adam on the mean per-triple loss. Deterministic in
// config.seed. ContractError on an empty dataset; NumericError naming the
// epoch and batch if the loss stops being finite.
template <typename Scalar>
FitResult fit(const PreferenceDataset& dataset, RewardModel<Scalar>& model,
              const TrainConfig& config, const FitOptions& options = {});

void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& curve);

extern template class SegmentCache<float>;
extern template class SegmentCache<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace prefmmt
