#include "prefmmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace prefmmt {

namespace {

double stable_sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double stable_log_sigmoid(double z) { return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)))); }

void require_label(double label) {
  if (!is_valid_label(label))
    throw ContractError("label " + std::to_string(label) + " is not one of {0, 0.5, 1}");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double bt_probability(double rho0, double rho1) {
  if (!std::isfinite(rho0) || !std::isfinite(rho1))
    throw NumericError("bt_probability: non-finite score");
  return stable_sigmoid(rho1 - rho0);
}

double triple_loss(double p1, double label) {
  require_label(label);
  if (!(p1 >= 0.0 && p1 <= 1.0)) throw ContractError("probability outside [0, 1]");
  const double lp1 = p1 > 0 ? std::max(std::log(p1), kLogProbFloor) : kLogProbFloor;
  const double lp0 = p1 < 1 ? std::max(std::log1p(-p1), kLogProbFloor) : kLogProbFloor;
  return -(label * lp1 + (1.0 - label) * lp0);
}

double triple_loss_from_scores(double rho0, double rho1, double label) {
  require_label(label);
  if (!std::isfinite(rho0) || !std::isfinite(rho1)) throw NumericError("non-finite score");
  const double d = rho1 - rho0;
  const double lp1 = std::max(stable_log_sigmoid(d), kLogProbFloor);
  const double lp0 = std::max(stable_log_sigmoid(-d), kLogProbFloor);
  return -(label * lp1 + (1.0 - label) * lp0);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
}

// --- segments -----------------------------------------------------------------

template <typename Scalar>
SegmentCache<Scalar>::SegmentCache(const TrajectoryStore& store) {
  for (const auto& t : store.all())
    items_.emplace(t.id, std::make_pair(Matrix<Scalar>(t.states.cast<Scalar>()),
                                        Matrix<Scalar>(t.actions.cast<Scalar>())));
}

template <typename Scalar>
const std::pair<Matrix<Scalar>, Matrix<Scalar>>& SegmentCache<Scalar>::entry(
    const std::string& id) const {
  auto it = items_.find(id);
  if (it == items_.end()) throw IntegrityError("unknown trajectory '" + id + "'");
  return it->second;
}

template <typename Scalar>
Tensor<Scalar> preference_loss(Graph<Scalar>& g, const RewardModel<Scalar>& model,
                               const SegmentCache<Scalar>& segments,
                               std::span<const PreferenceTriple> batch) {
  if (batch.empty()) throw ContractError("preference_loss: empty batch");
  const Scalar floor = static_cast<Scalar>(kLogProbFloor);
  Tensor<Scalar> total;
  for (const auto& p : batch) {
    require_label(p.label);
    auto rho0 = sum(model.forward(g, segments.states(p.id0), segments.actions(p.id0)));
    auto rho1 = sum(model.forward(g, segments.states(p.id1), segments.actions(p.id1)));
    auto d = rho1 - rho0;
    Tensor<Scalar> nll;
    if (p.label == 1.0) {
      nll = log_sigmoid(d, floor);
    } else if (p.label == 0.0) {
      nll = log_sigmoid(scale(d, Scalar(-1)), floor);
    } else {
      nll = scale(log_sigmoid(d, floor) + log_sigmoid(scale(d, Scalar(-1)), floor), Scalar(0.5));
    }
    total = total.valid() ? total - nll : scale(nll, Scalar(-1));
  }
  return total;
}

template <typename Scalar>
Tensor<Scalar> preference_loss(Graph<Scalar>& g, const RewardModel<Scalar>& model,
                               const PreferenceDataset& dataset,
                               std::span<const PreferenceTriple> batch) {
  SegmentCache<Scalar> segments(dataset.trajectories);
  return preference_loss(g, model, segments, batch);
}

// --- optimizer ----------------------------------------------------------------

template <typename Scalar>
Adam<Scalar>::Adam(const TrainConfig& config) : config_(config) {
  config_.validate();
}

template <typename Scalar>
void Adam<Scalar>::step(ModelParams<Scalar>& params, const Graph<Scalar>& graph) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const Scalar b1 = static_cast<Scalar>(config_.beta1);
  const Scalar b2 = static_cast<Scalar>(config_.beta2);
  const Scalar lr = static_cast<Scalar>(config_.learning_rate);
  const Scalar eps = static_cast<Scalar>(config_.eps);
  const Scalar wd = static_cast<Scalar>(config_.weight_decay);
  for (auto& [name, w] : params) {
    const Matrix<Scalar>* grad = graph.grad_of(w);
    if (!grad) continue;
    auto [it, fresh] = moments_.try_emplace(name);
    auto& [m, v] = it->second;
    if (fresh) {
      m.setZero(w.rows(), w.cols());
      v.setZero(w.rows(), w.cols());
    }
    Matrix<Scalar> g = *grad;
    if (wd > 0) g += wd * w;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    w.array() -= lr * (m.array() / static_cast<Scalar>(c1)) /
                 ((v.array() / static_cast<Scalar>(c2)).sqrt() + eps);
  }
}

// --- evaluation ---------------------------------------------------------------

double predict_label(double p1, double tie_band) {
  if (p1 > 0.5 + tie_band) return 1.0;
  if (p1 < 0.5 - tie_band) return 0.0;
  return 0.5;
}

template <typename Scalar>
EvalResult evaluate(const PreferenceDataset& dataset, const RewardModel<Scalar>& model,
                    double tie_band) {
  if (!(tie_band >= 0 && tie_band < 0.5)) throw ContractError("tie band must lie in [0, 0.5)");
  if (dataset.triples.empty()) throw ContractError("evaluate: dataset has no preferences");
  std::map<std::string, double> scores;
  auto score_of = [&](const std::string& id) {
    auto it = scores.find(id);
    if (it != scores.end()) return it->second;
    const Trajectory& t = dataset.trajectories.at(id);
    const double s = static_cast<double>(model.score(t.states, t.actions).score);
    scores.emplace(id, s);
    return s;
  };
  EvalResult r;
  double ll = 0.0;
  for (const auto& p : dataset.triples) {
    const double rho0 = score_of(p.id0);
    const double rho1 = score_of(p.id1);
    const double p1 = bt_probability(rho0, rho1);
    r.p1.push_back(p1);
    r.predictions.push_back(predict_label(p1, tie_band));
    r.labels.push_back(p.label);
    ll -= triple_loss_from_scores(rho0, rho1, p.label);
  }
  r.confusion = confusion(r.labels, r.predictions);
  r.accuracy = accuracy(r.confusion);
  r.mean_log_likelihood = ll / static_cast<double>(dataset.triples.size());
  return r;
}

// --- fitting ------------------------------------------------------------------

template <typename Scalar>
FitResult fit(const PreferenceDataset& dataset, RewardModel<Scalar>& model,
              const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (dataset.triples.empty()) throw ContractError("fit: dataset has no preferences");
  const SegmentCache<Scalar> segments(dataset.trajectories);
  Adam<Scalar> adam(config);
  std::mt19937_64 shuffle_rng(config.seed);
  std::vector<PreferenceTriple> order = dataset.triples;
  const std::size_t n = order.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  FitResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t len = std::min(bs, n - start);
      Graph<Scalar> g(GraphOptions{.grad_enabled = true,
                                   .training = true,
                                   .seed = mix_seed(config.seed, static_cast<std::uint64_t>(adam.steps()))});
      try {
        auto loss = preference_loss(g, model, segments,
                                    std::span<const PreferenceTriple>(order.data() + start, len));
        auto mean = scale(loss, static_cast<Scalar>(1.0 / static_cast<double>(len)));
        g.backward(mean);
        loss_sum += static_cast<double>(loss.value()(0, 0));
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           ": " + e.what());
      }
      adam.step(model.params(), g);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    if (options.eval_every > 0 && (epoch + 1) % options.eval_every == 0) {
      const PreferenceDataset& target = options.eval_set ? *options.eval_set : dataset;
      rec.eval_accuracy = evaluate(target, model, options.tie_band).accuracy;
    }
    result.curve.push_back(rec);
    result.epochs_run = epoch + 1;
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop_at_accuracy && rec.eval_accuracy && *rec.eval_accuracy >= *options.stop_at_accuracy)
      break;
  }
  result.steps = adam.steps();
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& curve) {
  CsvTable rows{{"epoch", "mean_loss", "eval_accuracy"}};
  for (const auto& r : curve) {
    char loss[32];
    std::snprintf(loss, sizeof loss, "%.9g", r.mean_loss);
    std::string acc;
    if (r.eval_accuracy) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *r.eval_accuracy);
      acc = buf;
    }
    rows.push_back({std::to_string(r.epoch), loss, acc});
  }
  write_csv(path, rows);
}

template class SegmentCache<float>;
template class SegmentCache<double>;
template class Adam<float>;
template class Adam<double>;

#define PREFMMT_INSTANTIATE(S)                                                                   \
  template Tensor<S> preference_loss<S>(Graph<S>&, const RewardModel<S>&, const SegmentCache<S>&, \
                                        std::span<const PreferenceTriple>);                      \
  template Tensor<S> preference_loss<S>(Graph<S>&, const RewardModel<S>&,                         \
                                        const PreferenceDataset&, std::span<const PreferenceTriple>); \
  template EvalResult evaluate<S>(const PreferenceDataset&, const RewardModel<S>&, double);      \
  template FitResult fit<S>(const PreferenceDataset&, RewardModel<S>&, const TrainConfig&,        \
                            const FitOptions&);

PREFMMT_INSTANTIATE(float)
PREFMMT_INSTANTIATE(double)

#undef PREFMMT_INSTANTIATE

}  // namespace prefmmt
