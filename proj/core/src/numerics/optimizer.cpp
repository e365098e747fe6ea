#include "ltformer/numerics/optimizer.hpp"

#include "ltformer/errors.hpp"

namespace ltformer {

void sgd_step(ParameterList& params, std::map<std::string, Tensor>& velocity,
              double lr, double momentum) {
  if (!(lr > 0)) throw ContractError("sgd_step: learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) {
    throw ContractError("sgd_step: momentum must lie in [0, 1)");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
  }
  const auto m = static_cast<float>(momentum);
  const auto rate = static_cast<float>(lr);
  for (auto& p : params) {
    auto it = velocity.find(p.name);
    if (it == velocity.end() || it->second.shape() != p.tensor.shape()) {
      it = velocity.insert_or_assign(p.name, Tensor::zeros(p.tensor.shape())).first;
    }
    Tensor& v = it->second;
    auto g = p.tensor.grad();
    auto w = p.tensor.data();
    for (size_t i = 0; i < w.size(); ++i) {
      v[static_cast<int64_t>(i)] = m * v[static_cast<int64_t>(i)] + g[i];
      w[i] -= rate * v[static_cast<int64_t>(i)];
    }
    p.tensor.zero_grad();
  }
}

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
}

void SgdMomentum::step(ParameterList& params) {
  sgd_step(params, velocity_, lr_, momentum_);
}

}  // namespace ltformer
