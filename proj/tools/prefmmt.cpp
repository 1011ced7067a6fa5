// Command-line entry point: data generation, oracle labeling, training,
// evaluation, relabeling, offline policy learning, attention export, the
// labeling server and the multi-seed pipeline.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prefmmt/checkpoint.hpp"
#include "prefmmt/envs.hpp"
#include "prefmmt/inference.hpp"
#include "prefmmt/label_service.hpp"
#include "prefmmt/metrics.hpp"
#include "prefmmt/offline_policy.hpp"
#include "prefmmt/pipeline.hpp"
#include "prefmmt/training.hpp"

namespace fs = std::filesystem;
using namespace prefmmt;

namespace {

constexpr int kUsageExit = 2;
constexpr int kRuntimeExit = 1;

// Expands `--config FILE` into `--key=value` arguments for every key not
// already given on the command line, so flags override the file and the
// file overrides defaults. Unknown keys then fail like unknown flags.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (!path) return args;
  std::ifstream in(*path);
  if (!in) throw CLI::ValidationError("--config", "cannot read config file '" + *path + "'");
  auto given = [&](const std::string& key) {
    for (const auto& a : args)
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--config", *path + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\"");
      const auto e = s.find_last_not_of(" \t\r\"");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!given(key)) args.push_back("--" + key + "=" + value);
  }
  return args;
}

void print_resolved(const CLI::App* sub) {
  std::cout << "# resolved configuration (" << sub->get_name() << ")\n"
            << sub->config_to_str(true, false) << std::flush;
}

// --- shared option groups ----------------------------------------------------

struct ModelFlags {
  std::string variant = "PrefMMT";
  ModelConfig config;
  std::vector<int> mlp_hidden{256, 256};

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "PrefMMT, MR, PrefIntra, PrefInter or UniSeq")->capture_default_str();
    app->add_option("--d-model", config.d_model, "embedding width")->capture_default_str();
    app->add_option("--heads", config.n_heads, "attention heads")->capture_default_str();
    app->add_option("--intra-layers", config.n_intra_layers, "intra-modal encoder depth")->capture_default_str();
    app->add_option("--inter-layers", config.n_inter_layers, "cross-attention encoder depth")->capture_default_str();
    app->add_option("--max-len", config.max_len, "maximum segment length")->capture_default_str();
    app->add_option("--dropout", config.dropout, "dropout rate")->capture_default_str();
    app->add_option("--mlp-hidden", mlp_hidden, "MR hidden widths")->delimiter(',')->capture_default_str();
  }
  ModelConfig resolve(int state_dim, int action_dim) const {
    ModelConfig c = config;
    c.variant = parse_variant(variant);
    c.state_dim = state_dim;
    c.action_dim = action_dim;
    c.mlp_hidden = mlp_hidden;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig config;

  void add(CLI::App* app) {
    app->add_option("--lr", config.learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--beta1", config.beta1)->capture_default_str();
    app->add_option("--beta2", config.beta2)->capture_default_str();
    app->add_option("--adam-eps", config.eps)->capture_default_str();
    app->add_option("--batch-size", config.batch_size, "triples per step")->capture_default_str();
    app->add_option("--epochs", config.epochs)->capture_default_str();
    app->add_option("--weight-decay", config.weight_decay)->capture_default_str();
  }
};

void print_confusion(const ConfusionMatrix& m) {
  std::printf("confusion (rows = label 0/0.5/1, cols = prediction 0/0.5/1):\n");
  for (const auto& row : m) std::printf("  %6ld %6ld %6ld\n", row[0], row[1], row[2]);
}

std::atomic<LabelServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (LabelServer* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based reward modeling with multimodal transformers", "prefmmt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");
  std::string config_path;  // consumed by expand_config; declared for --help
  app.add_option("--config", config_path, "key = value file; flags override it");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate offline episodes");
  std::string gen_env;
  int gen_episodes = 100, gen_length = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--env", gen_env, "maze7 or fragile-push")->required();
  gen->add_option("--episodes", gen_episodes)->capture_default_str();
  gen->add_option("--episode-length", gen_length, "0 selects the env default")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // label-oracle
  auto* lab = app.add_subcommand("label-oracle", "Sample segment pairs and label them with the oracle");
  std::string lab_data, lab_out, lab_mode = "deterministic";
  int lab_pairs = 100, lab_segment = 32;
  std::optional<double> lab_eps;
  double lab_noise = 0.0, lab_beta = 1.0;
  std::uint64_t lab_seed = 0;
  bool lab_queries_only = false;
  lab->add_option("--data", lab_data, "episode dataset")->required()->check(CLI::ExistingFile);
  lab->add_option("--pairs", lab_pairs)->capture_default_str();
  lab->add_option("--segment-len", lab_segment)->capture_default_str();
  lab->add_option("--epsilon", lab_eps, "tie threshold (default: 5% of the return range)");
  lab->add_option("--noise", lab_noise, "label flip probability")->capture_default_str();
  lab->add_option("--mode", lab_mode, "deterministic or bradley-terry")->capture_default_str();
  lab->add_option("--beta", lab_beta, "Bradley-Terry temperature")->capture_default_str();
  lab->add_option("--seed", lab_seed)->capture_default_str();
  lab->add_option("--out", lab_out)->required();
  lab->add_flag("--queries-only", lab_queries_only, "write unlabeled pairs for the labeling server");

  // train
  auto* train = app.add_subcommand("train", "Fit a reward model to preference triples");
  ModelFlags train_model;
  TrainFlags train_flags;
  std::string train_data, train_ckpt, train_curve, train_eval;
  std::uint64_t train_seed = 0;
  double train_band = 0.1;
  train->add_option("--data", train_data, "preference dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--checkpoint-out", train_ckpt)->required();
  train->add_option("--curve-out", train_curve, "per-epoch loss CSV");
  train->add_option("--eval-data", train_eval, "held-out preferences for the curve")->check(CLI::ExistingFile);
  train->add_option("--tie-band", train_band)->capture_default_str();
  train->add_option("--seed", train_seed)->capture_default_str();
  train_model.add(train);
  train_flags.add(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate preference prediction");
  std::string eval_ckpt, eval_data;
  double eval_band = 0.1;
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data)->required()->check(CLI::ExistingFile);
  eval->add_option("--tie-band", eval_band)->capture_default_str();

  // relabel
  auto* rel = app.add_subcommand("relabel", "Write learned per-step rewards with the sliding window");
  std::string rel_ckpt, rel_data, rel_out;
  int rel_window = 32;
  rel->add_option("--checkpoint", rel_ckpt)->required()->check(CLI::ExistingFile);
  rel->add_option("--data", rel_data, "episode dataset")->required()->check(CLI::ExistingFile);
  rel->add_option("--window", rel_window)->capture_default_str();
  rel->add_option("--out", rel_out)->required();

  // train-policy
  auto* pol = app.add_subcommand("train-policy", "Fitted Q-iteration on a relabeled maze7 dataset");
  std::string pol_data, pol_out, pol_reward = "learned";
  QConfig pol_q;
  int pol_episodes = 100, pol_length = 0;
  std::uint64_t pol_seed = 0;
  pol->add_option("--data", pol_data, "relabeled episodes")->required()->check(CLI::ExistingFile);
  pol->add_option("--reward", pol_reward, "learned or true")->capture_default_str();
  pol->add_option("--sweeps", pol_q.sweeps)->capture_default_str();
  pol->add_option("--gamma", pol_q.gamma)->capture_default_str();
  pol->add_option("--alpha", pol_q.alpha)->capture_default_str();
  pol->add_flag("--minmax-rescale", pol_q.minmax_rescale, "rescale rewards to [0, 1]");
  pol->add_option("--eval-episodes", pol_episodes)->capture_default_str();
  pol->add_option("--episode-length", pol_length, "rollout length (0: env default)")->capture_default_str();
  pol->add_option("--seed", pol_seed)->capture_default_str();
  pol->add_option("--out", pol_out, "policy table CSV")->required();

  // export-attention
  auto* att = app.add_subcommand("export-attention", "Per-step attention weights of one segment");
  std::string att_ckpt, att_data, att_out, att_segment;
  int att_index = 0, att_start = 0, att_len = 0;
  att->add_option("--checkpoint", att_ckpt)->required()->check(CLI::ExistingFile);
  att->add_option("--data", att_data)->required()->check(CLI::ExistingFile);
  att->add_option("--segment", att_segment, "trajectory id (default: --index)");
  att->add_option("--index", att_index, "trajectory position in the file")->capture_default_str();
  att->add_option("--start", att_start, "first step of the window")->capture_default_str();
  att->add_option("--length", att_len, "window length (0: up to max_len)")->capture_default_str();
  att->add_option("--out", att_out)->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Run the labeling server");
  std::string srv_pairs, srv_log, srv_ui, srv_host = "127.0.0.1";
  int srv_port = 8080;
  srv->add_option("--pairs", srv_pairs, "unlabeled pair file from label-oracle --queries-only");
  srv->add_option("--log", srv_log, "session log (default: <pairs>.labels.jsonl)");
  srv->add_option("--ui-dir", srv_ui, "built UI bundle served at /")->check(CLI::ExistingDirectory);
  srv->add_option("--host", srv_host)->capture_default_str();
  srv->add_option("--port", srv_port)->capture_default_str();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "gen -> label -> train -> eval -> relabel -> policy over seeds");
  ExperimentConfig exp;
  std::string pipe_env = "maze7", pipe_out;
  std::vector<std::string> pipe_variants{"PrefMMT"};
  int pipe_seeds = 5;
  ModelFlags pipe_model;
  TrainFlags pipe_train;
  pipe->add_option("--env", pipe_env)->capture_default_str();
  pipe->add_option("--variants", pipe_variants)->delimiter(',')->capture_default_str();
  pipe->add_option("--seeds", pipe_seeds, "runs with seeds 0..n-1")->capture_default_str();
  pipe->add_option("--episodes", exp.episodes)->capture_default_str();
  pipe->add_option("--episode-length", exp.episode_length, "0 selects the env default")->capture_default_str();
  pipe->add_option("--train-pairs", exp.train_pairs)->capture_default_str();
  pipe->add_option("--test-pairs", exp.test_pairs)->capture_default_str();
  pipe->add_option("--segment-len", exp.segment_len)->capture_default_str();
  pipe->add_option("--noise", exp.flip_prob)->capture_default_str();
  pipe->add_option("--tie-band", exp.tie_band)->capture_default_str();
  pipe->add_option("--window", exp.window)->capture_default_str();
  pipe->add_option("--sweeps", exp.q.sweeps)->capture_default_str();
  pipe->add_option("--policy-episodes", exp.policy_episodes)->capture_default_str();
  pipe->add_option("--out-dir", pipe_out)->required();
  pipe_model.add(pipe);
  pipe_train.add(pipe);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  try {
    for (auto* sub : app.get_subcommands()) print_resolved(sub);

    if (gen->parsed()) {
      EnvSpec spec = default_env_spec(parse_env_name(gen_env));
      spec.episodes = gen_episodes;
      spec.seed = gen_seed;
      if (gen_length > 0) spec.episode_length = gen_length;
      auto d = make_episode_dataset(generate_episodes(spec));
      if (d.env_name.empty()) d.env_name = to_string(spec.name);
      d.state_dim = spec.state_dim();
      d.action_dim = spec.action_dim();
      save_dataset(d, gen_out);
      std::printf("wrote %zu episodes to %s\n", d.trajectories.size(), gen_out.c_str());
    } else if (lab->parsed()) {
      const auto episodes = load_dataset(lab_data);
      const auto pairs = sample_pairs(episodes.trajectories.all(), static_cast<std::size_t>(lab_pairs),
                                      lab_segment, lab_seed);
      PreferenceDataset out;
      if (lab_queries_only) {
        out = pair_queries(pairs);
      } else {
        OracleConfig oc;
        oc.tie_threshold = lab_eps ? *lab_eps : default_tie_threshold(pairs);
        oc.flip_prob = lab_noise;
        if (lab_mode == "bradley-terry") oc.mode = OracleMode::BradleyTerry;
        else if (lab_mode != "deterministic") throw ConfigError("unknown oracle mode '" + lab_mode + "'");
        oc.beta = lab_beta;
        out = label_pairs(pairs, oc, lab_seed + 1);
        std::printf("tie threshold %.6g\n", oc.tie_threshold);
      }
      if (out.env_name.empty()) {
        out.env_name = episodes.env_name;
        out.state_dim = episodes.state_dim;
        out.action_dim = episodes.action_dim;
      }
      save_dataset(out, lab_out);
      std::printf("wrote %zu pairs to %s\n", pairs.size(), lab_out.c_str());
    } else if (train->parsed()) {
      const auto data = load_dataset(train_data);
      RewardModel<float> model(train_model.resolve(data.state_dim, data.action_dim), train_seed);
      TrainConfig tc = train_flags.config;
      tc.seed = train_seed;
      std::optional<PreferenceDataset> held_out;
      if (!train_eval.empty()) held_out = load_dataset(train_eval);
      FitOptions fo;
      fo.eval_set = held_out ? &*held_out : nullptr;
      fo.tie_band = train_band;
      fo.on_epoch = [](const EpochRecord& r) {
        if ((r.epoch + 1) % 10 == 0)
          std::printf("epoch %4d  loss %.6f  accuracy %.4f\n", r.epoch + 1, r.mean_loss,
                      r.eval_accuracy.value_or(0.0));
      };
      const auto result = fit(data, model, tc, fo);
      if (!train_curve.empty()) write_loss_curve(train_curve, result.curve);
      save_checkpoint(model, train_ckpt);
      std::printf("trained %s for %d epochs (%ld steps); checkpoint %s\n", to_string(model.config().variant).c_str(),
                  result.epochs_run, result.steps, train_ckpt.c_str());
    } else if (eval->parsed()) {
      const auto model = load_checkpoint(eval_ckpt);
      const auto data = load_dataset(eval_data);
      const auto r = evaluate(data, model, eval_band);
      std::printf("accuracy %.4f\nmean log-likelihood %.6f\n", r.accuracy, r.mean_log_likelihood);
      try {
        std::printf("pearson %.4f\n", pearson(r.labels, r.predictions));
      } catch (const UndefinedCorrelationError& e) {
        std::printf("pearson undefined (%s)\n", e.what());
      }
      print_confusion(r.confusion);
    } else if (rel->parsed()) {
      const auto model = load_checkpoint(rel_ckpt);
      auto data = load_dataset(rel_data);
      PreferenceDataset out;
      out.env_name = data.env_name;
      out.state_dim = data.state_dim;
      out.action_dim = data.action_dim;
      for (auto& t : relabel(data.trajectories.all(), model, rel_window)) out.trajectories.add(std::move(t));
      save_dataset(out, rel_out);
      std::printf("relabeled %zu episodes into %s\n", out.trajectories.size(), rel_out.c_str());
    } else if (pol->parsed()) {
      const auto data = load_dataset(pol_data);
      EnvSpec spec = default_env_spec(parse_env_name(data.env_name));
      if (pol_length > 0) spec.episode_length = pol_length;
      RewardSource src = RewardSource::Learned;
      if (pol_reward == "true") src = RewardSource::True;
      else if (pol_reward != "learned") throw ConfigError("--reward must be learned or true");
      const auto q = fitted_q(data.trajectories.all(), spec, src, pol_q);
      write_policy_csv(pol_out, q);
      const auto refs = maze7_references(spec, pol_seed + 1);
      const auto ev = evaluate_policy(q, spec, pol_episodes, pol_seed, refs);
      std::printf("mean return %.4f\nsuccess rate %.4f\nnormalized score %.2f\n", ev.mean_return,
                  ev.success_rate, ev.normalized_score);
    } else if (att->parsed()) {
      const auto model = load_checkpoint(att_ckpt);
      const auto data = load_dataset(att_data);
      if (data.trajectories.empty()) throw ContractError("dataset has no trajectories");
      const Trajectory& t = att_segment.empty()
                                ? data.trajectories.all().at(static_cast<std::size_t>(att_index))
                                : data.trajectories.at(att_segment);
      const long avail = static_cast<long>(t.length()) - att_start;
      if (att_start < 0 || avail < 1) throw ContractError("--start lies outside the trajectory");
      const long len = std::min<long>(att_len > 0 ? att_len : model.config().max_len, avail);
      const auto rec = extract_attention(model, slice(t, att_start, len, t.id));
      write_attention_csv(att_out, rec);
      std::printf("wrote %ld steps of attention for %s to %s\n", len, t.id.c_str(), att_out.c_str());
    } else if (srv->parsed()) {
      std::unique_ptr<LabelSession> session;
      if (!srv_pairs.empty() || !srv_log.empty()) {
        const fs::path log = srv_log.empty() ? fs::path(srv_pairs + ".labels.jsonl") : fs::path(srv_log);
        session = srv_pairs.empty() ? LabelSession::resume(log)
                                    : LabelSession::open(load_dataset(srv_pairs), log);
        const auto p = session->progress();
        std::printf("session %s: %zu / %zu labeled\n", log.c_str(), p.labeled, p.total);
      }
      ServerOptions so;
      so.host = srv_host;
      so.port = srv_port;
      if (!srv_ui.empty()) so.static_dir = srv_ui;
      LabelServer server(session.get(), so);
      const int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::printf("listening on http://%s:%d/\n", srv_host.c_str(), port);
      std::fflush(stdout);
      server.run();
      g_server = nullptr;
    } else if (pipe->parsed()) {
      exp.env = parse_env_name(pipe_env);
      exp.variants.clear();
      for (const auto& v : pipe_variants) exp.variants.push_back(parse_variant(v));
      if (pipe_seeds < 1) throw ConfigError("--seeds must be >= 1");
      exp.seeds.clear();
      for (int s = 0; s < pipe_seeds; ++s) exp.seeds.push_back(static_cast<std::uint64_t>(s));
      const EnvSpec spec = default_env_spec(exp.env);
      exp.model = pipe_model.resolve(spec.state_dim(), spec.action_dim());
      exp.train = pipe_train.config;
      fs::create_directories(pipe_out);
      const auto results = run_experiment(exp, [](const RunResult& r) {
        std::printf("%s %s seed %llu: test accuracy %.3f, pearson %s%s (%.0fs)\n", to_string(r.env).c_str(),
                    to_string(r.variant).c_str(), static_cast<unsigned long long>(r.seed), r.test_accuracy,
                    r.pearson ? std::to_string(*r.pearson).c_str() : "undefined",
                    r.policy ? (", policy success " + std::to_string(r.policy->learned.success_rate)).c_str() : "",
                    r.seconds);
        std::fflush(stdout);
      });
      write_csv(fs::path(pipe_out) / "runs.csv", results_table(results));
      const auto summary = summary_table(results);
      write_csv(fs::path(pipe_out) / "summary.csv", summary);
      for (const auto& row : summary) {
        for (std::size_t i = 0; i < row.size(); ++i) std::printf(i ? ", %s" : "%s", row[i].c_str());
        std::printf("\n");
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "prefmmt: %s\n", e.what());
    return kRuntimeExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "prefmmt: unexpected error: %s\n", e.what());
    return kRuntimeExit;
  }
  return 0;
}
