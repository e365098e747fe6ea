#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ltformer/numerics/aligned.hpp"

namespace ltformer {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  AlignedVector<T> data;
  // Empty until the first gradient is accumulated.
  AlignedVector<T> grad;
  bool requires_grad = false;
  // Outputs of recorded operations are not leaves.
  bool is_leaf = true;
};

/// Dense row-major tensor handle.
///
/// Copies of a handle share storage, the way autograd frameworks treat
/// tensors; use clone() for an independent deep copy. A default-constructed
/// handle is undefined and must not be dereferenced.
template <typename T>
class BasicTensor {
 public:
  using Storage = TensorStorage<T>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value) {
    return BasicTensor(std::move(shape), value);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  // Negative indices count from the back.
  int64_t dim(int i) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }
  T& operator[](int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const {
    return impl_->data[static_cast<size_t>(i)];
  }
  T item() const;

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad() { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> mutable_grad();
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->is_leaf; }

  /// Reinterprets the data with a new shape of equal element count. The
  /// result is a detached copy; use ops::reshape to stay on a tape.
  BasicTensor reshaped(Shape shape) const;
  BasicTensor clone() const;

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape());
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>((*this)[i]);
    return out;
  }

  bool same_storage(const BasicTensor& other) const {
    return impl_ == other.impl_;
  }
  const std::shared_ptr<Storage>& storage() const { return impl_; }

 private:
  std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ltformer
