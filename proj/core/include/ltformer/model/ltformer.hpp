#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ltformer/model/config.hpp"
#include "ltformer/numerics/optimizer.hpp"
#include "ltformer/numerics/tape.hpp"

namespace ltformer {

/// The pyramid transformer descriptor network.
///
/// Parameters are stored in the canonical order emitted by describe_shapes.
/// Tensor handles share storage, so a model copy aliases its parameters;
/// use clone() for an independent copy.
template <typename T>
class BasicLTFormer {
 public:
  BasicLTFormer() = default;
  /// Takes ownership of parameters; throws ConfigError/DimensionError unless
  /// names and shapes match describe_shapes(config) exactly.
  BasicLTFormer(LTFormerConfig config, std::vector<BasicNamedTensor<T>> params);

  const LTFormerConfig& config() const { return config_; }
  std::vector<BasicNamedTensor<T>>& parameters() { return params_; }
  const std::vector<BasicNamedTensor<T>>& parameters() const { return params_; }
  const BasicTensor<T>& parameter(const std::string& name) const;

  /// patches [B,Cin,S,S] with values in [0,1] -> unit-norm descriptors [B,D].
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& patches) const;

  /// Per-stage token grids [B,C,H,W], for shape verification.
  std::vector<Shape> stage_output_shapes(const BasicTensor<T>& patches) const;

  void set_requires_grad(bool value);
  void zero_grad();
  BasicLTFormer clone() const;

  template <typename U>
  BasicLTFormer<U> cast() const {
    std::vector<BasicNamedTensor<U>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back({p.name, p.tensor.template cast<U>()});
    return BasicLTFormer<U>(config_, std::move(out));
  }

 private:
  BasicTensor<T> run(BasicTape<T>& tape, const BasicTensor<T>& patches,
                     std::vector<Shape>* stage_shapes) const;

  LTFormerConfig config_;
  std::vector<BasicNamedTensor<T>> params_;
  std::map<std::string, size_t> index_;
};

using LTFormerModel = BasicLTFormer<float>;
using LTFormerModelD = BasicLTFormer<double>;

extern template class BasicLTFormer<float>;
extern template class BasicLTFormer<double>;

/// Deterministic initialization: conv/linear weights from a normal with
/// std 0.02 truncated at two standard deviations, biases zero, norm gains
/// one. Draws follow the canonical parameter order.
LTFormerModel init_model(const LTFormerConfig& config, uint64_t seed);

/// Exact number of scalar parameters.
template <typename T>
int64_t param_count(const BasicLTFormer<T>& model) {
  int64_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

}  // namespace ltformer
