#include "prefmmt/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"

namespace prefmmt {

using json = nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows, const char* field) {
  if (!rows.is_array()) throw std::invalid_argument(std::string(field) + " must be a list of lists");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = n ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const json& row = rows.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d)
      throw std::invalid_argument(std::string(field) + " rows have unequal length");
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
  }
  return m;
}

LabelSource parse_source(const std::string& s) {
  if (s == "oracle") return LabelSource::Oracle;
  if (s == "human") return LabelSource::Human;
  throw std::invalid_argument("unknown label source '" + s + "'");
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string to_string(LabelSource s) { return s == LabelSource::Oracle ? "oracle" : "human"; }

void validate_trajectory(const Trajectory& t) {
  using R = TrajectoryError::Reason;
  if (t.states.rows() < 1) throw TrajectoryError(R::Empty, "trajectory '" + t.id + "' is empty");
  if (t.states.rows() != t.actions.rows())
    throw TrajectoryError(R::LengthMismatch, "trajectory '" + t.id + "' has " +
                                                 std::to_string(t.states.rows()) + " states but " +
                                                 std::to_string(t.actions.rows()) + " actions");
  if (!t.states.allFinite() || !t.actions.allFinite())
    throw TrajectoryError(R::NonFinite, "trajectory '" + t.id + "' has a non-finite feature");
  if (t.render && static_cast<Eigen::Index>(t.render->size()) != t.length())
    throw TrajectoryError(R::BadRenderLength,
                          "trajectory '" + t.id + "' render has " + std::to_string(t.render->size()) +
                              " points for length " + std::to_string(t.length()));
  for (const auto* r : {&t.true_rewards, &t.learned_rewards}) {
    if (!*r) continue;
    if (static_cast<Eigen::Index>((*r)->size()) != t.length())
      throw TrajectoryError(R::BadRewardLength, "trajectory '" + t.id + "' reward length mismatch");
    if (!all_finite(**r))
      throw TrajectoryError(R::NonFinite, "trajectory '" + t.id + "' has a non-finite reward");
  }
  if (t.true_return && !std::isfinite(*t.true_return))
    throw TrajectoryError(R::NonFinite, "trajectory '" + t.id + "' has a non-finite return");
}

Trajectory slice(const Trajectory& t, Eigen::Index start, Eigen::Index len, std::string id) {
  if (start < 0 || len < 1 || start + len > t.length())
    throw ContractError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                        ") out of bounds for '" + t.id + "'");
  Trajectory s;
  s.id = std::move(id);
  s.states = t.states.middleRows(start, len);
  s.actions = t.actions.middleRows(start, len);
  s.env_name = t.env_name;
  auto cut = [&](const auto& v) {
    using V = std::decay_t<decltype(v)>;
    return V(v.begin() + start, v.begin() + start + len);
  };
  if (t.render) s.render = cut(*t.render);
  if (t.true_rewards) {
    s.true_rewards = cut(*t.true_rewards);
    double total = 0.0;
    for (double r : *s.true_rewards) total += r;
    s.true_return = total;
  }
  if (t.learned_rewards) s.learned_rewards = cut(*t.learned_rewards);
  return s;
}

void TrajectoryStore::add(Trajectory t) {
  if (contains(t.id)) throw IntegrityError("duplicate trajectory id '" + t.id + "'");
  index_.emplace(t.id, items_.size());
  items_.push_back(std::move(t));
}

const Trajectory& TrajectoryStore::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw IntegrityError("unknown trajectory id '" + id + "'");
  return items_[it->second];
}

void PreferenceDataset::check_integrity() const {
  for (const auto& t : trajectories.all()) {
    if (t.states.cols() != state_dim || t.actions.cols() != action_dim)
      throw IntegrityError("trajectory '" + t.id + "' dims do not match the header");
  }
  auto check = [&](const std::string& id, const char* what) {
    if (!trajectories.contains(id))
      throw IntegrityError(std::string(what) + " references unknown trajectory '" + id + "'");
  };
  for (const auto& q : pairs) {
    check(q.id0, "pair");
    check(q.id1, "pair");
  }
  for (const auto& p : triples) {
    check(p.id0, "preference");
    check(p.id1, "preference");
    if (p.id0 == p.id1) throw IntegrityError("preference compares '" + p.id0 + "' with itself");
    if (!is_valid_label(p.label)) throw IntegrityError("invalid preference label");
  }
}

std::string encode_header(const PreferenceDataset& d) {
  json j = {{"record", "header"},
            {"format_version", kFormatVersion},
            {"env_name", d.env_name},
            {"d_s", d.state_dim},
            {"d_a", d.action_dim}};
  return j.dump();
}

std::string encode_record(const Trajectory& t) {
  json j = {{"record", "trajectory"},
            {"id", t.id},
            {"env_name", t.env_name},
            {"states", matrix_to_json(t.states)},
            {"actions", matrix_to_json(t.actions)}};
  if (t.render) {
    json pts = json::array();
    for (const auto& p : *t.render) pts.push_back({p[0], p[1]});
    j["render"] = std::move(pts);
  }
  if (t.true_return) j["true_return"] = *t.true_return;
  if (t.true_rewards) j["true_rewards"] = *t.true_rewards;
  if (t.learned_rewards) j["learned_rewards"] = *t.learned_rewards;
  return j.dump();
}

std::string encode_record(const PairQuery& q) {
  return json{{"record", "pair"}, {"pair_id", q.pair_id}, {"id0", q.id0}, {"id1", q.id1}}.dump();
}

std::string encode_record(const PreferenceTriple& p) {
  json j = {{"record", "preference"},
            {"id0", p.id0},
            {"id1", p.id1},
            {"label", p.label},
            {"source", to_string(p.source)}};
  if (p.pair_id) j["pair_id"] = *p.pair_id;
  return j.dump();
}

void save_dataset(const PreferenceDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << encode_header(d) << '\n';
  for (const auto& t : d.trajectories.all()) out << encode_record(t) << '\n';
  for (const auto& q : d.pairs) out << encode_record(q) << '\n';
  for (const auto& p : d.triples) out << encode_record(p) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  PreferenceDataset d;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string kind = j.at("record").get<std::string>();
      if (!have_header) {
        if (kind != "header") throw std::invalid_argument("first record must be the header");
        if (j.at("format_version").get<int>() != kFormatVersion)
          throw std::invalid_argument("unsupported format_version");
        d.env_name = j.at("env_name").get<std::string>();
        d.state_dim = j.at("d_s").get<int>();
        d.action_dim = j.at("d_a").get<int>();
        have_header = true;
      } else if (kind == "trajectory") {
        Trajectory t;
        t.id = j.at("id").get<std::string>();
        t.env_name = j.at("env_name").get<std::string>();
        t.states = matrix_from_json(j.at("states"), "states");
        t.actions = matrix_from_json(j.at("actions"), "actions");
        if (t.states.rows() == 0) t.states.resize(0, d.state_dim);
        if (t.actions.rows() == 0) t.actions.resize(0, d.action_dim);
        if (j.contains("render")) {
          std::vector<RenderPoint> pts;
          for (const auto& p : j.at("render")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
          t.render = std::move(pts);
        }
        if (j.contains("true_return")) t.true_return = j.at("true_return").get<double>();
        if (j.contains("true_rewards")) t.true_rewards = j.at("true_rewards").get<std::vector<double>>();
        if (j.contains("learned_rewards"))
          t.learned_rewards = j.at("learned_rewards").get<std::vector<double>>();
        validate_trajectory(t);
        if (d.trajectories.contains(t.id)) throw std::invalid_argument("duplicate trajectory id '" + t.id + "'");
        d.trajectories.add(std::move(t));
      } else if (kind == "pair") {
        d.pairs.push_back({j.at("pair_id").get<std::string>(), j.at("id0").get<std::string>(),
                           j.at("id1").get<std::string>()});
      } else if (kind == "preference") {
        PreferenceTriple p;
        p.id0 = j.at("id0").get<std::string>();
        p.id1 = j.at("id1").get<std::string>();
        p.label = j.at("label").get<double>();
        p.source = parse_source(j.at("source").get<std::string>());
        if (j.contains("pair_id")) p.pair_id = j.at("pair_id").get<std::string>();
        if (!is_valid_label(p.label)) throw std::invalid_argument("label must be 0, 0.5 or 1");
        d.triples.push_back(std::move(p));
      } else {
        throw std::invalid_argument("unknown record type '" + kind + "'");
      }
    } catch (const TrajectoryError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing header record", lineno + 1);
  d.check_integrity();
  return d;
}

std::vector<std::pair<Trajectory, Trajectory>> sample_pairs(const std::vector<Trajectory>& episodes,
                                                            std::size_t n, Eigen::Index segment_len,
                                                            std::uint64_t seed) {
  std::vector<std::pair<Trajectory, Trajectory>> out;
  if (n == 0) return out;
  if (episodes.size() < 2) throw ContractError("sample_pairs needs at least two episodes");
  if (segment_len < 1) throw ContractError("segment_len must be >= 1");
  Eigen::Index shortest = std::numeric_limits<Eigen::Index>::max();
  for (const auto& e : episodes) shortest = std::min(shortest, e.length());
  if (segment_len > shortest)
    throw ContractError("segment_len " + std::to_string(segment_len) +
                        " exceeds the shortest episode (" + std::to_string(shortest) + ")");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, episodes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, episodes.size() - 2);
  auto cut = [&](const Trajectory& e) {
    std::uniform_int_distribution<Eigen::Index> offset(0, e.length() - segment_len);
    const Eigen::Index start = offset(rng);
    return slice(e, start, segment_len,
                 e.id + "/" + std::to_string(start) + ":" + std::to_string(start + segment_len));
  };
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = pick(rng);
    std::size_t j = pick_other(rng);
    if (j >= i) ++j;
    Trajectory a = cut(episodes[i]);
    Trajectory b = cut(episodes[j]);
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

PreferenceDataset make_episode_dataset(std::vector<Trajectory> episodes) {
  PreferenceDataset d;
  if (!episodes.empty()) {
    d.env_name = episodes.front().env_name;
    d.state_dim = static_cast<int>(episodes.front().states.cols());
    d.action_dim = static_cast<int>(episodes.front().actions.cols());
  }
  for (auto& e : episodes) d.trajectories.add(std::move(e));
  d.check_integrity();
  return d;
}

}  // namespace prefmmt
