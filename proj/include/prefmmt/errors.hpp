#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prefmmt {

// Base for every error raised by the library. `kind()` names the failure
// class so the CLI can report it without RTTI tricks.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PREFMMT_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(Kind, what) {}        \
  };

PREFMMT_DEFINE_ERROR(ShapeError, "shape error")
PREFMMT_DEFINE_ERROR(ContractError, "contract error")
PREFMMT_DEFINE_ERROR(StateError, "state error")
PREFMMT_DEFINE_ERROR(ConfigError, "config error")
PREFMMT_DEFINE_ERROR(CheckpointError, "checkpoint error")
PREFMMT_DEFINE_ERROR(IntegrityError, "integrity error")
PREFMMT_DEFINE_ERROR(ValidationError, "validation error")
PREFMMT_DEFINE_ERROR(UnsupportedError, "unsupported error")
PREFMMT_DEFINE_ERROR(GenerationError, "generation error")
PREFMMT_DEFINE_ERROR(IoError, "io error")
PREFMMT_DEFINE_ERROR(ConflictError, "conflict")

#undef PREFMMT_DEFINE_ERROR

// Non-finite value observed in the differentiation graph.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::int64_t node = -1)
      : Error("numeric error",
              node >= 0 ? what + " (node " + std::to_string(node) + ")" : what),
        node_(node) {}

  std::int64_t node() const noexcept { return node_; }

 private:
  std::int64_t node_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("parse error", "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace prefmmt
