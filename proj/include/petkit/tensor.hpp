// petkit/tensor.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_TENSOR_HPP
#define PETKIT_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace petkit {

// Error taxonomy. ConfigError maps to CLI exit code 2, the rest to 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor shape has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline constexpr double kPi = 3.14159265358979323846;

// splitmix64 finalizer; derives independent stream seeds from (seed, id).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled output conversions. std::*_distribution is
// implementation-defined, which would break the bit-identical seeding
// contract across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller cosine branch; two engine draws per value.
  double gaussian() {
    double u1 = uniform01();
    while (u1 == 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

// Dense N-d array with an optional gradient buffer. `trainable` gates both
// gradient accumulation out of a graph and optimizer updates.
template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until ensure_grad()
  bool trainable = false;
  std::string name;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), Real(0)) {}

  std::size_t size() const { return data.size(); }

  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Real& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  Real at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  // [d0, d1, d2] indexing for conv weights.
  Real& at3(int a, int b, int c) {
    return data[(static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  Real at3(int a, int b, int c) const {
    return data[(static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }

  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), Real(0));
  }

  static Tensor zeros(Shape s, std::string name = {}) {
    Tensor t(std::move(s));
    t.name = std::move(name);
    return t;
  }

  static Tensor full(Shape s, Real v, std::string name = {}) {
    Tensor t(std::move(s));
    t.data.assign(t.data.size(), v);
    t.name = std::move(name);
    return t;
  }

  static Tensor gaussian(Shape s, Rng& rng, double stddev, std::string name = {}) {
    Tensor t(std::move(s));
    for (Real& v : t.data) v = static_cast<Real>(rng.gaussian() * stddev);
    t.name = std::move(name);
    return t;
  }
};

}  // namespace petkit

#endif  // PETKIT_TENSOR_HPP
