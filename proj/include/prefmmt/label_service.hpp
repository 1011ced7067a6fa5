#pragma once

// Labeling campaign state plus the HTTP/JSON front end.
//
// The session log is itself a dataset file: header, trajectories and pair
// queries are written when the session is created, and each accepted label
// is appended as one preference record and flushed to disk before the
// request is acknowledged. Reopening the log replays it.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_set>

#include "prefmmt/trajectory.hpp"

namespace prefmmt {

struct LabelProgress {
  std::size_t labeled = 0;
  std::size_t total = 0;
};

class LabelSession {
 public:
  // Creates `log_path` from `queries` unless it already exists, in which
  // case the existing log is replayed and `queries` is ignored. A torn
  // final line left by a crash is discarded.
  static std::unique_ptr<LabelSession> open(const PreferenceDataset& queries,
                                            const std::filesystem::path& log_path);
  // Replays an existing log.
  static std::unique_ptr<LabelSession> resume(const std::filesystem::path& log_path);

  // First pending pair in query order; nullopt when all are labeled.
  std::optional<PairQuery> next() const;

  // ValidationError for a label outside {0, 0.5, 1}; ConflictError for an
  // unknown or already-labeled pair. Returns the progress after the append.
  LabelProgress submit(const std::string& pair_id, double label);

  LabelProgress progress() const;
  const Trajectory& trajectory(const std::string& id) const { return data_.trajectories.at(id); }
  const std::filesystem::path& log_path() const { return log_path_; }

 private:
  LabelSession(PreferenceDataset data, std::filesystem::path log_path);
  void append_line(const std::string& line);

  mutable std::shared_mutex mutex_;
  PreferenceDataset data_;
  std::filesystem::path log_path_;
  std::unordered_set<std::string> completed_;
  std::size_t cursor_ = 0;  // every query before this index is completed
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Directory of the built UI bundle, served at "/". A placeholder page is
  // served when unset.
  std::optional<std::filesystem::path> static_dir;
};

// HTTP routes:
//   GET  /api/pair/next  -> {"pair_id", "traj0", "traj1"} or {"done": true}
//   POST /api/label      {"pair_id", "label"} -> {"ack": true, "labeled", "total"}
//   GET  /api/progress   -> {"labeled", "total"}
// Errors carry {"error": kind, "message"}: 409 for conflicts or a missing
// session, 400 for invalid input.
class LabelServer {
 public:
  // `session` may be null; every API call then answers 409.
  LabelServer(LabelSession* session, ServerOptions options);
  ~LabelServer();

  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  // Binds the configured port (0 picks a free one) and returns it.
  int bind();
  // Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Trajectory as sent to the labeler: id, env_name, states, actions, render.
// Ground-truth fields are withheld.
std::string trajectory_payload(const Trajectory& t);

}  // namespace prefmmt
