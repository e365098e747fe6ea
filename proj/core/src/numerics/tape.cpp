#include "ltformer/numerics/tape.hpp"

#include "ltformer/errors.hpp"

namespace ltformer {

template <typename T>
bool BasicTape<T>::should_record(
    std::initializer_list<const BasicTensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void BasicTape<T>::record(BasicTensor<T>& output,
                          std::vector<BasicTensor<T>> inputs,
                          BackwardFn backward) {
  output.set_requires_grad(true);
  output.storage()->is_leaf = false;
  nodes_.push_back(Node{output, std::move(inputs), std::move(backward)});
}

template <typename T>
bool BasicTape<T>::contains(const BasicTensor<T>& t) const {
  for (const auto& n : nodes_) {
    if (n.output.same_storage(t)) return true;
  }
  return false;
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  int64_t last = -1;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].output.same_storage(loss)) last = static_cast<int64_t>(i);
  }
  if (last < 0) throw ContractError("backward: loss was not produced on this tape");

  for (auto& n : nodes_) n.output.clear_grad();
  BasicTensor<T> seed = loss;
  seed.mutable_grad()[0] = T(1);

  for (int64_t i = last; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.output.has_grad()) continue;
    n.backward();
    // Consumed; intermediate gradients are not retained.
    n.output.clear_grad();
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace ltformer
