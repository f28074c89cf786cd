#pragma once

/// @file memory.hpp
/// Process-wide accounting of image buffer bytes. Every pixel buffer (rasters,
/// decoded tiles, pyramid accumulators) allocates through TrackingAllocator so
/// the tiled warper's memory bound can be measured instead of assumed.

#include <atomic>
#include <cstddef>
#include <new>
#include <vector>

namespace wsireg {

class MemoryTracker {
 public:
  static MemoryTracker& instance() {
    static MemoryTracker tracker;
    return tracker;
  }

  void add(std::size_t bytes) noexcept {
    std::size_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t prev = peak_.load(std::memory_order_relaxed);
    while (now > prev && !peak_.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
    }
  }
  void remove(std::size_t bytes) noexcept { current_.fetch_sub(bytes, std::memory_order_relaxed); }

  std::size_t current() const noexcept { return current_.load(std::memory_order_relaxed); }
  std::size_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }

  /// Restarts peak tracking from the current level.
  void reset_peak() noexcept { peak_.store(current(), std::memory_order_relaxed); }

 private:
  MemoryTracker() = default;
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    MemoryTracker::instance().add(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::instance().remove(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using TrackedVector = std::vector<T, TrackingAllocator<T>>;

}  // namespace wsireg
