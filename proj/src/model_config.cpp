#include "prefmmt/model_config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "prefmmt/errors.hpp"

namespace prefmmt {

namespace {

constexpr std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::PrefMMT, "PrefMMT"},     {Variant::MR, "MR"},
    {Variant::PrefIntra, "PrefIntra"}, {Variant::PrefInter, "PrefInter"},
    {Variant::UniSeq, "UniSeq"},
};

int parse_int(std::string_view key, std::string_view text) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("bad integer for " + std::string(key) + ": '" + std::string(text) + "'");
  return v;
}

}  // namespace

std::string to_string(Variant v) {
  for (auto [variant, name] : kVariantNames)
    if (variant == v) return std::string(name);
  throw ConfigError("unknown variant");
}

Variant parse_variant(std::string_view name) {
  for (auto [variant, n] : kVariantNames)
    if (n == name) return variant;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (state_dim < 1 || action_dim < 1) throw ConfigError("state_dim and action_dim must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (variant == Variant::MR) {
    if (mlp_hidden.empty()) throw ConfigError("MR needs at least one hidden layer");
    for (int h : mlp_hidden)
      if (h < 1) throw ConfigError("mlp_hidden widths must be >= 1");
    return;
  }
  if (d_model < 1 || n_heads < 1) throw ConfigError("d_model and n_heads must be >= 1");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (n_intra_layers < 0 || n_inter_layers < 0) throw ConfigError("layer counts must be >= 0");
  if ((variant == Variant::PrefMMT || variant == Variant::PrefInter) && n_inter_layers < 1)
    throw ConfigError(to_string(variant) + " needs n_inter_layers >= 1");
  if ((variant == Variant::PrefMMT || variant == Variant::PrefIntra ||
       variant == Variant::UniSeq) &&
      n_intra_layers < 1)
    throw ConfigError(to_string(variant) + " needs n_intra_layers >= 1");
}

std::string serialize(const ModelConfig& c) {
  std::ostringstream out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", c.dropout);
  out << "variant " << to_string(c.variant) << '\n'
      << "state_dim " << c.state_dim << '\n'
      << "action_dim " << c.action_dim << '\n'
      << "d_model " << c.d_model << '\n'
      << "n_heads " << c.n_heads << '\n'
      << "n_intra_layers " << c.n_intra_layers << '\n'
      << "n_inter_layers " << c.n_inter_layers << '\n'
      << "max_len " << c.max_len << '\n'
      << "dropout " << buf << '\n'
      << "mlp_hidden ";
  for (std::size_t i = 0; i < c.mlp_hidden.size(); ++i) out << (i ? "," : "") << c.mlp_hidden[i];
  out << '\n';
  return out.str();
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    const std::string key = line.substr(0, space);
    const std::string value = line.substr(space + 1);
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "state_dim") c.state_dim = parse_int(key, value);
    else if (key == "action_dim") c.action_dim = parse_int(key, value);
    else if (key == "d_model") c.d_model = parse_int(key, value);
    else if (key == "n_heads") c.n_heads = parse_int(key, value);
    else if (key == "n_intra_layers") c.n_intra_layers = parse_int(key, value);
    else if (key == "n_inter_layers") c.n_inter_layers = parse_int(key, value);
    else if (key == "max_len") c.max_len = parse_int(key, value);
    else if (key == "dropout") {
      try {
        c.dropout = std::stod(value);
      } catch (const std::exception&) {
        throw ConfigError("bad dropout '" + value + "'");
      }
    } else if (key == "mlp_hidden") {
      c.mlp_hidden.clear();
      std::istringstream parts(value);
      std::string part;
      while (std::getline(parts, part, ',')) c.mlp_hidden.push_back(parse_int(key, part));
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

}  // namespace prefmmt
