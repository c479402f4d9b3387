// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Accounting allocator for trainable parameter storage. Every FlatParams
// buffer goes through TrackedAllocator, so tests can observe the number of
// live parameter bytes and the peak since the last ResetPeak().

#ifndef DPZV_PARAM_STORAGE_HPP_
#define DPZV_PARAM_STORAGE_HPP_

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>

namespace dpzv::param_storage {

namespace internal {
inline std::atomic<int64_t> g_live_bytes{0};
inline std::atomic<int64_t> g_peak_bytes{0};
inline std::atomic<int64_t> g_allocations{0};

inline void OnAllocate(int64_t bytes) {
  const int64_t now = g_live_bytes.fetch_add(bytes) + bytes;
  int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
  g_allocations.fetch_add(1);
}

inline void OnDeallocate(int64_t bytes) { g_live_bytes.fetch_sub(bytes); }
}  // namespace internal

inline int64_t LiveBytes() { return internal::g_live_bytes.load(); }
inline int64_t PeakBytes() { return internal::g_peak_bytes.load(); }
inline int64_t AllocationCount() { return internal::g_allocations.load(); }
inline void ResetPeak() {
  internal::g_peak_bytes.store(internal::g_live_bytes.load());
}

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    internal::OnAllocate(static_cast<int64_t>(n * sizeof(T)));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    internal::OnDeallocate(static_cast<int64_t>(n * sizeof(T)));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace dpzv::param_storage

#endif  // DPZV_PARAM_STORAGE_HPP_
