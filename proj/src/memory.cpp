#include "nerv360/memory.hpp"

#include <atomic>

namespace nerv360::memory {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_limit{0};

void raise_peak(std::size_t value) noexcept {
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (value > peak && !g_peak.compare_exchange_weak(peak, value, std::memory_order_relaxed)) {
  }
}
}  // namespace

std::size_t current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() noexcept { g_peak.store(current_bytes(), std::memory_order_relaxed); }
void set_limit(std::size_t bytes) noexcept { g_limit.store(bytes, std::memory_order_relaxed); }
std::size_t limit() noexcept { return g_limit.load(std::memory_order_relaxed); }

void note_allocate(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  const std::size_t cap = limit();
  if (cap != 0 && now > cap) {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
    throw std::bad_alloc();
  }
  raise_peak(now);
}

void note_deallocate(std::size_t bytes) noexcept {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

}  // namespace nerv360::memory
