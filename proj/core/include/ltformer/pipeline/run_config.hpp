#pragma once

#include <cstdint>
#include <string>

#include "ltformer/dataset/triplets.hpp"
#include "ltformer/imaging/clahe.hpp"
#include "ltformer/imaging/patch.hpp"
#include "ltformer/loss/lt_loss.hpp"

namespace ltformer {

/// Every knob of a gen-data / train / match / evaluate run.
///
/// Text form is flat `key = value` lines; '#' starts a comment. Keys are
/// the field names below, with transform toggles spelled
/// `transform.identity` etc.
struct RunConfig {
  // model
  int descriptor_dim = 128;

  // optimizer
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 256;
  int epochs = 50;
  /// Triplets per forward/backward chunk; gradients of the chunks of one
  /// batch are accumulated before the step. Bounds activation memory only.
  int micro_batch = 16;
  /// Stop after this many optimizer steps (0: run all epochs).
  int64_t max_steps = 0;
  int checkpoint_every = 10;
  LossMode loss = LossMode::kCorrected;

  // dataset
  uint64_t seed = 0;
  int pairs = 4;
  int pair_size = 512;
  int triplets = 10000;
  int max_keypoints = 0;
  double split_ratio = 0.8;
  TransformSet transforms;
  PatchGeometry geometry;
  ClaheParams clahe;

  // matcher
  double threshold = 0.5;
  double eps = 5.0;
  bool mutual = false;
  int match_keypoints = 150;

  int threads = 1;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Applies one key=value assignment; throws ConfigError for unknown keys or
/// unparsable values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Parses text over `base`; every key present overrides the base value.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

/// Canonical text with every key, doubles at round-trip precision.
std::string to_text(const RunConfig& config);

/// Formats a double so that parsing it back gives the same bits.
std::string format_double(double v);

}  // namespace ltformer
