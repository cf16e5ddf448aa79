#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vncseg {

// Dense row-major tensor of rank 1..4, last dimension fastest. Rank-4 shapes
// follow the (batch, channel, height, width) convention.
template <typename T>
struct Tensor {
  int rank = 0;
  std::array<int, 4> shape{1, 1, 1, 1};
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::initializer_list<int> s) {
    if (s.size() < 1 || s.size() > 4)
      throw std::invalid_argument("tensor rank must be 1..4");
    rank = static_cast<int>(s.size());
    int i = 0;
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      shape[i++] = d;
      n *= d;
    }
    for (; i < 4; ++i) shape[i] = 1;
    data.assign(static_cast<std::size_t>(n), T(0));
  }

  static Tensor zeros(std::initializer_list<int> s) { return Tensor(s); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  bool same_shape(const Tensor& o) const { return rank == o.rank && shape == o.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < rank; ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }

  // rank-4 access
  T& operator()(int b, int c, int h, int w) {
    return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T operator()(int b, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  // rank-3 access
  T& operator()(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  T operator()(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }

  void fill(T v) { data.assign(data.size(), v); }
};

}  // namespace vncseg
