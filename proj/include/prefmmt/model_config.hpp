#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace prefmmt {

enum class Variant { PrefMMT, MR, PrefIntra, PrefInter, UniSeq };

std::string to_string(Variant v);
// Throws ConfigError on an unknown name.
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::PrefMMT;
  int state_dim = 0;
  int action_dim = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_intra_layers = 3;
  int n_inter_layers = 1;
  int max_len = 32;
  double dropout = 0.1;
  std::vector<int> mlp_hidden{256, 256};

  int head_dim() const { return d_model / n_heads; }
  bool has_attention() const { return variant != Variant::MR; }

  // Throws ConfigError when an invariant does not hold.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// "key value" lines, one per field, in a fixed order.
std::string serialize(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

}  // namespace prefmmt
