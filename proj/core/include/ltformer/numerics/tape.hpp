#pragma once

#include <functional>
#include <vector>

#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

/// Ordered record of differentiable operations.
///
/// Operations append a node when the tape is recording and at least one
/// input requires a gradient. Nodes are appended in execution order, so the
/// record is topologically sorted by construction. A tape must not be
/// mutated from more than one thread.
template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void()>;

  explicit BasicTape(bool recording = true) : recording_(recording) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) = default;
  BasicTape& operator=(BasicTape&&) = default;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  /// True if a gradient should be tracked for an op over these inputs.
  bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) const;

  /// Appends a node; marks `output` as a non-leaf that requires a gradient.
  /// The backward rule reads output.grad() and accumulates into the inputs.
  void record(BasicTensor<T>& output, std::vector<BasicTensor<T>> inputs,
              BackwardFn backward);

  bool contains(const BasicTensor<T>& t) const;

  /// Runs every node feeding `loss` once, in reverse order. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward(const BasicTensor<T>& loss);

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    BasicTensor<T> output;
    std::vector<BasicTensor<T>> inputs;
    BackwardFn backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape) {
  tape.backward(loss);
}

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace ltformer
