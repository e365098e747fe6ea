#pragma once

#include <map>
#include <string>
#include <vector>

#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

template <typename T>
struct BasicNamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};
using NamedTensor = BasicNamedTensor<float>;
using ParameterList = std::vector<NamedTensor>;

/// Stochastic gradient descent with heavy-ball momentum:
///   v <- momentum * v + grad;  p <- p - lr * v
/// Gradients are zeroed after every step, so gradients from several
/// backward passes may be accumulated before a step.
class SgdMomentum {
 public:
  static constexpr double kDefaultLearningRate = 1e-3;
  static constexpr double kDefaultMomentum = 0.9;

  explicit SgdMomentum(double lr = kDefaultLearningRate,
                       double momentum = kDefaultMomentum);

  /// Throws ContractError if any parameter has no gradient buffer.
  void step(ParameterList& params);

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }

  /// Velocity buffers keyed by parameter name (empty before the first step).
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  void set_velocity(std::map<std::string, Tensor> velocity) {
    velocity_ = std::move(velocity);
  }

 private:
  double lr_;
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

/// One-shot form with caller-owned velocity.
void sgd_step(ParameterList& params, std::map<std::string, Tensor>& velocity,
              double lr, double momentum);

}  // namespace ltformer
