#include "ltformer/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ltformer/errors.hpp"

namespace ltformer {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : impl_(std::make_shared<Storage>()) {
  const int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : impl_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(data.begin(), data.end());
}

template <typename T>
int64_t BasicTensor<T>::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw DimensionError("dimension index out of range for shape " +
                         shape_to_string(shape()));
  }
  return impl_->shape[static_cast<size_t>(i)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(this->shape()) +
                         " to " + shape_to_string(shape));
  }
  BasicTensor out(std::move(shape));
  out.impl_->data = impl_->data;
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(impl_->shape);
  out.impl_->data = impl_->data;
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace ltformer
