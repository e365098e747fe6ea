#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ltformer/model/ltformer.hpp"
#include "ltformer/pipeline/run_config.hpp"

namespace ltformer {

/// Everything needed to resume training or run inference.
///
/// File layout: a magic line, a `key = value` metadata block (format
/// version, model config, run config, training state) closed by an `end`
/// line, then named tensor records. Each record is a text header
/// `tensor <name> <rank> <dims...>` followed by the values as little-endian
/// float32 and a newline. Parameters come first in canonical order, then
/// optimizer velocities named `velocity/<parameter>`.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  LTFormerConfig model_config;
  RunConfig run_config;
  int64_t step = 0;
  int epoch = 0;
  double final_loss = 0.0;
  ParameterList parameters;
  std::map<std::string, Tensor> velocity;

  /// Model view sharing this checkpoint's parameter storage.
  LTFormerModel model() const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws IoError on malformed bytes and DimensionError when a parameter
/// does not match describe_shapes for the stored config.
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ltformer
