#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

/// Hyperparameters of one pyramid stage.
struct StageConfig {
  int stride = 4;           // patch-embedding stride
  int channels = 16;
  int reduction_ratio = 8;  // spatial reduction of keys/values
  int num_heads = 1;
  int mlp_expansion = 8;
  int num_layers = 2;

  // Overlapping embedding: kernel 2s-1 with "same"-style padding, which
  // yields 7/4/3 for the first stage and 3/2/1 afterwards.
  int embed_kernel() const { return 2 * stride - 1; }
  int embed_padding() const { return embed_kernel() / 2; }

  bool operator==(const StageConfig&) const = default;
};

struct LTFormerConfig {
  static constexpr int kNumStages = 4;

  // Defaults to the lightweight configuration.
  std::array<StageConfig, kNumStages> stages{{{4, 16, 8, 1, 8, 2},
                                              {2, 32, 4, 2, 8, 2},
                                              {2, 64, 2, 4, 4, 2},
                                              {2, 128, 1, 8, 8, 2}}};
  int input_size = 128;
  int input_channels = 1;
  int descriptor_dim = 128;

  /// The lightweight configuration: S={4,2,2,2}, C={16,32,64,128},
  /// R={8,4,2,1}, N={1,2,4,8}, E={8,8,4,8}, L={2,2,2,2}.
  static LTFormerConfig lightweight(int descriptor_dim = 128);

  /// Same network with the wider PVTv2-B0 channel widths {32,64,160,256};
  /// used only for parameter-count comparisons.
  static LTFormerConfig pvt_v2_b0_widths(int descriptor_dim = 128);

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Token grid side length at the output of stage `i`.
  int stage_resolution(int i) const;

  bool operator==(const LTFormerConfig&) const = default;
};

/// Fixed input standardization applied to [0,1] patches.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

inline constexpr double kLayerNormEps = 1e-6;

struct ParameterShape {
  std::string name;
  Shape shape;
};

struct StageShapes {
  int index = 0;
  /// Activation shapes exclude the batch dimension: {C,H,W}.
  Shape embed_output;
  Shape stage_output;
  /// Key/value token grid after spatial reduction, {H/R, W/R}.
  Shape reduced_kv_grid;
  int num_heads = 0;
  int reduction_ratio = 0;
  int num_layers = 0;
  int hidden_channels = 0;
  std::vector<ParameterShape> parameters;
};

/// Every parameter and activation shape implied by a config.
struct ShapeTable {
  std::array<StageShapes, LTFormerConfig::kNumStages> stages;
  std::vector<ParameterShape> head_parameters;
  int descriptor_dim = 0;

  /// Stage parameters in order, then head parameters.
  std::vector<ParameterShape> all_parameters() const;
  int64_t parameter_count() const;
  /// Human-readable table with a symbolic batch dimension "B".
  std::string to_string() const;
};

ShapeTable describe_shapes(const LTFormerConfig& config);

}  // namespace ltformer
