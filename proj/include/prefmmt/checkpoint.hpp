#pragma once

#include <filesystem>

#include "prefmmt/model.hpp"

namespace prefmmt {

// Text header (format version and the full ModelConfig) followed by one
// record per tensor: a "tensor <name> <rows> <cols>" line and rows*cols
// little-endian IEEE-754 binary32 values in row-major order.
void save_checkpoint(const RewardModel<float>& model, const std::filesystem::path& path);

RewardModel<float> load_checkpoint(const std::filesystem::path& path);

// As above, but throws CheckpointError unless the stored config equals
// `expected`.
RewardModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace prefmmt
