#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cod {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor over a flat Eigen array. Shapes are small
// (rank <= 3 in practice), data is owned and contiguous.
template <typename T>
struct Tensor {
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Shape shape;
  Storage data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Storage::Zero(shape_numel(shape))) {}
  Tensor(Shape s, Storage d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor constant(Shape s, T v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }

  static Tensor from(Shape s, std::initializer_list<T> vals) {
    Tensor t(std::move(s));
    if (static_cast<std::int64_t>(vals.size()) != t.numel())
      throw std::invalid_argument("tensor: literal size does not match shape " + shape_str(t.shape));
    std::int64_t i = 0;
    for (T v : vals) t.data[i++] = v;
    return t;
  }

  std::int64_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i) { return data[i]; }
  T at(std::int64_t i) const { return data[i]; }
  T& at2(int i, int j) { return data[static_cast<std::int64_t>(i) * dim(1) + j]; }
  T at2(int i, int j) const { return data[static_cast<std::int64_t>(i) * dim(1) + j]; }
  T& at3(int i, int j, int k) {
    return data[(static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k];
  }
  T at3(int i, int j, int k) const {
    return data[(static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape: " + shape_str(shape) + " -> " + shape_str(s) +
                                  " changes element count");
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  bool all_finite() const { return data.isFinite().all(); }
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data = t.data.template cast<To>();
  return out;
}

template <typename T>
Tensor<T> randn(Shape s, Rng& rng) {
  Tensor<T> t(std::move(s));
  std::normal_distribution<T> dist(T(0), T(1));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = dist(rng);
  return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape s, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(s));
  std::uniform_real_distribution<T> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = dist(rng);
  return t;
}

// splitmix64; used to derive independent stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cod
