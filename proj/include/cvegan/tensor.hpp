// Copyright 2026 The cvegan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvegan {

namespace detail {

// Size-keyed free lists for tensor storage. Training rebuilds a tape of
// identically shaped tensors every step; recycling the buffers keeps the
// allocator from cycling hundreds of megabytes of mmap pages per step.
struct TensorBufferPool {
  static constexpr size_t kMinBytes = 1 << 16;
  static constexpr size_t kCapBytes = size_t(3) << 30;

  static TensorBufferPool& instance() {
    thread_local TensorBufferPool pool;
    return pool;
  }

  void* allocate(size_t bytes) {
    if (bytes >= kMinBytes) {
      auto it = free_.find(bytes);
      if (it != free_.end() && !it->second.empty()) {
        void* p = it->second.back();
        it->second.pop_back();
        held_ -= bytes;
        return p;
      }
    }
    return ::operator new(bytes);
  }

  void deallocate(void* p, size_t bytes) {
    if (bytes >= kMinBytes && held_ + bytes <= kCapBytes) {
      free_[bytes].push_back(p);
      held_ += bytes;
      return;
    }
    ::operator delete(p);
  }

  std::map<size_t, std::vector<void*>> free_;
  size_t held_ = 0;
};

}  // namespace detail

template <typename T>
struct PooledAlloc {
  using value_type = T;
  PooledAlloc() = default;
  template <typename U>
  PooledAlloc(const PooledAlloc<U>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(detail::TensorBufferPool::instance().allocate(n * sizeof(T)));
  }
  void deallocate(T* p, size_t n) {
    detail::TensorBufferPool::instance().deallocate(p, n * sizeof(T));
  }
  template <typename U>
  bool operator==(const PooledAlloc<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const PooledAlloc<U>&) const {
    return false;
  }
};

// Dense row-major tensor of doubles. Image batches use NHWC layout
// (batch, height, width, channels).
class Tensor {
 public:
  using Storage = std::vector<double, PooledAlloc<double>>;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(checked_numel(shape_)), 0.0) {}
  Tensor(std::vector<int64_t> shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NHWC element access.
  double& at(int64_t b, int64_t y, int64_t x, int64_t c) {
    return data_[static_cast<size_t>(((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }
  double at(int64_t b, int64_t y, int64_t x, int64_t c) const {
    return data_[static_cast<size_t>(((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }
  // 2-D access (rows, cols).
  double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  Tensor reshaped(std::vector<int64_t> shape) const {
    if (checked_numel(shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  Storage data_;
};

// Deterministic PRNG. Distribution code is hand-rolled so that streams do
// not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  Tensor normal_tensor(std::vector<int64_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * normal();
    return t;
  }

  Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cvegan
