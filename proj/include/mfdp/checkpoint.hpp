#pragma once

// Versioned checkpoint files:
//
//   MFDP-CHECKPOINT v1\n
//   <fnv1a64 of the rest, 16 hex digits> <byte length of the rest>\n
//   <single-line JSON header>\n
//   <payload: little-endian float64 values>
//
// The header holds the model config, the parameter index (name, shape,
// element offset) and, optionally, the optimizer step and moment index.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "mfdp/model.hpp"
#include "mfdp/optim.hpp"

namespace mfdp {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, Format, Version, Checksum, ConfigMismatch };
  CheckpointError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  MfdpModel model;
  std::optional<AdamWState> optimizer;
};

std::uint64_t fnv1a64(const std::string& bytes);

std::string serialize_checkpoint(const MfdpModel& model, const AdamWState* optimizer = nullptr);
/// When `expected` is given, a differing stored config is a ConfigMismatch.
Checkpoint deserialize_checkpoint(const std::string& bytes,
                                  const ModelConfig* expected = nullptr);

void save_checkpoint(const std::string& path, const MfdpModel& model,
                     const AdamWState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace mfdp
