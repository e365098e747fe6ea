#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace ltformer {

/// Allocator returning 64-byte aligned blocks.
///
/// Vectorized reductions peel a prefix up to the first aligned element, so the
/// summation order depends on the buffer address. A fixed alignment makes
/// results depend only on offsets, which keeps runs bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

}  // namespace ltformer
