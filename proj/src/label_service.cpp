#include "prefmmt/label_service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <algorithm>
#include <cstring>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

namespace prefmmt {

using json = nlohmann::json;

namespace {

void write_all(int fd, const std::string& bytes, const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write to '" + path.string() + "' failed: " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void durable_append(const std::filesystem::path& path, const std::string& bytes, bool create) {
  const int flags = O_WRONLY | O_APPEND | (create ? O_CREAT | O_EXCL : 0);
  const int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
  try {
    write_all(fd, bytes, path);
    if (::fsync(fd) != 0) throw IoError("fsync of '" + path.string() + "' failed");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

// Drops a trailing partial record so the log parses again after a crash.
void discard_torn_tail(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.empty() || content.back() == '\n') return;
  const auto cut = content.rfind('\n');
  std::filesystem::resize_file(path, cut == std::string::npos ? 0 : cut + 1);
}

}  // namespace

LabelSession::LabelSession(PreferenceDataset data, std::filesystem::path log_path)
    : data_(std::move(data)), log_path_(std::move(log_path)) {
  std::unordered_set<std::string> known;
  for (const auto& q : data_.pairs)
    if (!known.insert(q.pair_id).second)
      throw IntegrityError("duplicate pair id '" + q.pair_id + "' in session");
  for (const auto& p : data_.triples) {
    if (!p.pair_id || !known.count(*p.pair_id))
      throw IntegrityError("session log holds a preference for no known pair");
    if (!completed_.insert(*p.pair_id).second)
      throw IntegrityError("session log labels pair '" + *p.pair_id + "' twice");
  }
  while (cursor_ < data_.pairs.size() && completed_.count(data_.pairs[cursor_].pair_id)) ++cursor_;
}

std::unique_ptr<LabelSession> LabelSession::open(const PreferenceDataset& queries,
                                                 const std::filesystem::path& log_path) {
  if (std::filesystem::exists(log_path)) return resume(log_path);
  if (queries.pairs.empty()) throw ContractError("a labeling session needs at least one pair");
  queries.check_integrity();
  PreferenceDataset fresh;
  fresh.env_name = queries.env_name;
  fresh.state_dim = queries.state_dim;
  fresh.action_dim = queries.action_dim;
  fresh.trajectories = queries.trajectories;
  fresh.pairs = queries.pairs;
  std::string bytes = encode_header(fresh) + '\n';
  for (const auto& t : fresh.trajectories.all()) bytes += encode_record(t) + '\n';
  for (const auto& q : fresh.pairs) bytes += encode_record(q) + '\n';
  auto session = std::unique_ptr<LabelSession>(new LabelSession(std::move(fresh), log_path));
  durable_append(log_path, bytes, true);
  return session;
}

std::unique_ptr<LabelSession> LabelSession::resume(const std::filesystem::path& log_path) {
  if (!std::filesystem::exists(log_path)) throw IoError("no session log at '" + log_path.string() + "'");
  discard_torn_tail(log_path);
  return std::unique_ptr<LabelSession>(new LabelSession(load_dataset(log_path), log_path));
}

std::optional<PairQuery> LabelSession::next() const {
  std::shared_lock lock(mutex_);
  if (cursor_ >= data_.pairs.size()) return std::nullopt;
  return data_.pairs[cursor_];
}

LabelProgress LabelSession::submit(const std::string& pair_id, double label) {
  if (!is_valid_label(label))
    throw ValidationError("label " + std::to_string(label) + " is not one of {0, 0.5, 1}");
  std::unique_lock lock(mutex_);
  auto it = std::find_if(data_.pairs.begin(), data_.pairs.end(),
                         [&](const PairQuery& q) { return q.pair_id == pair_id; });
  if (it == data_.pairs.end()) throw ConflictError("unknown pair '" + pair_id + "'");
  if (completed_.count(pair_id)) throw ConflictError("pair '" + pair_id + "' is already labeled");
  PreferenceTriple p{it->id0, it->id1, label, LabelSource::Human, pair_id};
  durable_append(log_path_, encode_record(p) + '\n', false);
  data_.triples.push_back(std::move(p));
  completed_.insert(pair_id);
  while (cursor_ < data_.pairs.size() && completed_.count(data_.pairs[cursor_].pair_id)) ++cursor_;
  return {completed_.size(), data_.pairs.size()};
}

LabelProgress LabelSession::progress() const {
  std::shared_lock lock(mutex_);
  return {completed_.size(), data_.pairs.size()};
}

std::string trajectory_payload(const Trajectory& t) {
  json j = json::parse(encode_record(t));
  for (const char* hidden : {"record", "true_return", "true_rewards", "learned_rewards"}) j.erase(hidden);
  return j.dump();
}

// --- HTTP ---------------------------------------------------------------------

namespace {

constexpr const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>prefmmt labeler</title></head>
<body><p>The labeling UI bundle is not installed. Start the server with
<code>--ui-dir</code> pointing at a built bundle, or use the JSON API under
<code>/api/</code>.</p></body></html>
)";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& msg) {
  send_json(res, status, {{"error", kind}, {"message", msg}});
}

}  // namespace

struct LabelServer::Impl {
  LabelSession* session;
  ServerOptions options;
  httplib::Server server;

  template <typename Handler>
  void guarded(httplib::Response& res, Handler&& handler) {
    if (!session) {
      send_error(res, 409, "conflict", "no labeling session is loaded");
      return;
    }
    try {
      handler();
    } catch (const ConflictError& e) {
      send_error(res, 409, e.kind(), e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.kind(), e.what());
    } catch (const Error& e) {
      send_error(res, 500, e.kind(), e.what());
    }
  }
};

LabelServer::LabelServer(LabelSession* session, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
  impl_->session = session;
  impl_->options = std::move(options);
  Impl& im = *impl_;
  auto& srv = im.server;

  srv.Get("/api/pair/next", [&im](const httplib::Request&, httplib::Response& res) {
    im.guarded(res, [&] {
      const auto q = im.session->next();
      if (!q) {
        send_json(res, 200, {{"done", true}});
        return;
      }
      json body = {{"pair_id", q->pair_id},
                   {"traj0", json::parse(trajectory_payload(im.session->trajectory(q->id0)))},
                   {"traj1", json::parse(trajectory_payload(im.session->trajectory(q->id1)))}};
      send_json(res, 200, body);
    });
  });

  srv.Post("/api/label", [&im](const httplib::Request& req, httplib::Response& res) {
    im.guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        throw ValidationError("request body is not JSON");
      }
      if (!body.is_object() || !body.contains("pair_id") || !body["pair_id"].is_string() ||
          !body.contains("label") || !body["label"].is_number())
        throw ValidationError("expected {\"pair_id\": string, \"label\": number}");
      const std::string pair_id = body["pair_id"].get<std::string>();
      const auto progress = im.session->submit(pair_id, body["label"].get<double>());
      send_json(res, 200,
                {{"ack", true}, {"pair_id", pair_id}, {"labeled", progress.labeled}, {"total", progress.total}});
    });
  });

  srv.Get("/api/progress", [&im](const httplib::Request&, httplib::Response& res) {
    im.guarded(res, [&] {
      const auto p = im.session->progress();
      send_json(res, 200, {{"labeled", p.labeled}, {"total", p.total}});
    });
  });

  if (im.options.static_dir) {
    if (!srv.set_mount_point("/", im.options.static_dir->string()))
      throw IoError("UI directory '" + im.options.static_dir->string() + "' does not exist");
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderPage, "text/html");
    });
  }
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::bind() {
  auto& im = *impl_;
  if (im.options.port == 0) {
    const int port = im.server.bind_to_any_port(im.options.host);
    if (port < 0) throw IoError("could not bind " + im.options.host);
    return port;
  }
  if (!im.server.bind_to_port(im.options.host, im.options.port))
    throw IoError("could not bind " + im.options.host + ":" + std::to_string(im.options.port));
  return im.options.port;
}

void LabelServer::run() { impl_->server.listen_after_bind(); }

void LabelServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace prefmmt
