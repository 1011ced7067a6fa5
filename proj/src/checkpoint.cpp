#include "prefmmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace prefmmt {

namespace {

constexpr const char* kMagic = "prefmmt-checkpoint";
constexpr int kFormatVersion = 1;

void put_le32(std::ostream& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float get_le32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw CheckpointError("truncated tensor data");
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string read_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("unexpected end of checkpoint header");
  return line;
}

}  // namespace

void save_checkpoint(const RewardModel<float>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << kMagic << '\n' << "format_version " << kFormatVersion << '\n';
  out << serialize(model.config());
  out << "tensors " << model.params().size() << '\n';
  for (const auto& [name, m] : model.params()) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.size(); ++i) put_le32(out, m.data()[i]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

RewardModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  if (read_line(in) != kMagic) throw CheckpointError("not a checkpoint file");
  if (read_line(in) != "format_version " + std::to_string(kFormatVersion))
    throw CheckpointError("unsupported checkpoint format version");

  std::string config_text;
  std::size_t count = 0;
  for (;;) {
    std::string line = read_line(in);
    if (line.rfind("tensors ", 0) == 0) {
      count = std::stoul(line.substr(8));
      break;
    }
    config_text += line + '\n';
  }
  ModelConfig config;
  try {
    config = parse_model_config(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }

  ModelParams<float> params;
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream header(read_line(in));
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(header >> tag >> name >> rows >> cols) || tag != "tensor" || rows < 0 || cols < 0)
      throw CheckpointError("malformed tensor header");
    Matrix<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_le32(in);
    if (in.get() != '\n') throw CheckpointError("missing tensor terminator after '" + name + "'");
    params.add(name, std::move(m));
  }
  return RewardModel<float>(config, std::move(params));
}

RewardModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto model = load_checkpoint(path);
  if (!(model.config() == expected))
    throw CheckpointError("checkpoint config does not match the requested config:\n" +
                          serialize(model.config()) + "requested:\n" + serialize(expected));
  return model;
}

}  // namespace prefmmt
