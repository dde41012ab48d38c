// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgalign::diff {

// Dense row-major matrix of doubles. Column vectors are rows x 1. This is
// the only tensor type in the project; everything is desk scale.
struct Dense {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Dense() = default;
  Dense(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Dense(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
      throw std::invalid_argument("Dense: data length does not match shape");
  }

  static Dense zeros(std::size_t r, std::size_t c) { return Dense(r, c); }

  static Dense vec(std::initializer_list<double> xs) {
    return Dense(xs.size(), 1, std::vector<double>(xs));
  }

  static Dense vec(std::vector<double> xs) {
    const std::size_t n = xs.size();
    return Dense(n, 1, std::move(xs));
  }

  std::size_t size() const { return rows * cols; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Dense& o) const {
    return rows == o.rows && cols == o.cols;
  }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double v) {
    for (auto& x : data) x = v;
  }

  double norm() const {
    double s = 0.0;
    for (double x : data) s += x * x;
    return std::sqrt(s);
  }
};

inline Dense normalized(const Dense& v) {
  const double n = v.norm();
  if (n <= 1e-300) throw std::invalid_argument("normalized: degenerate vector");
  Dense out = v;
  for (auto& x : out.data) x /= n;
  return out;
}

}  // namespace rgalign::diff
