#pragma once

#include <cstddef>
#include <memory>
#include <new>

namespace nerv360::memory {

// Process-wide byte counters for every buffer allocated through
// TrackingAllocator. This is the CPU analogue of a device peak-allocation
// counter: activations, im2col workspaces and cached embeddings are counted,
// Eigen's internal GEMM blocking buffers are not.
std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;

// Resets the peak to the current live byte count.
void reset_peak() noexcept;

// A nonzero limit makes allocations that would exceed it throw std::bad_alloc.
void set_limit(std::size_t bytes) noexcept;
std::size_t limit() noexcept;

void note_allocate(std::size_t bytes);
void note_deallocate(std::size_t bytes) noexcept;

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  // Cache-line alignment keeps vectorized kernels on the same code path for
  // every buffer, so results do not depend on where a tensor happens to live.
  static constexpr std::align_val_t kAlignment{64};

  T* allocate(std::size_t n) {
    note_allocate(n * sizeof(T));
    try {
      return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
    } catch (...) {
      note_deallocate(n * sizeof(T));
      throw;
    }
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), kAlignment);
    note_deallocate(n * sizeof(T));
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

// Scoped memory limit, restored on destruction.
class LimitGuard {
 public:
  explicit LimitGuard(std::size_t bytes) : previous_(limit()) { set_limit(bytes); }
  ~LimitGuard() { set_limit(previous_); }
  LimitGuard(const LimitGuard&) = delete;
  LimitGuard& operator=(const LimitGuard&) = delete;

 private:
  std::size_t previous_;
};

}  // namespace nerv360::memory
