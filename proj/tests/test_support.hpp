// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the test binaries.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "refine/prob.hpp"
#include "refine/single_stage.hpp"
#include "refine/successive.hpp"

namespace refine::testing {

inline Matrix hamming(std::size_t n) {
  Matrix m(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  return m;
}

/// pmf {1 - p1, p1} under Hamming distortion.
inline RdProblem binary_hamming(double p1) { return {Pmf({1.0 - p1, p1}), hamming(2)}; }

inline SrProblem binary_sr(double p1) { return {Pmf({1.0 - p1, p1}), hamming(2), hamming(2)}; }

inline Pmf random_pmf(std::mt19937_64& rng, std::size_t n, double floor = 1e-3) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = g(rng) + floor;
  return Pmf::from_weights(w);
}

inline Matrix random_distortion(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

/// Standard normal on an evenly spaced grid over [-half_width, half_width],
/// reproduction grid identical, squared error.
inline RdProblem gaussian_grid(std::size_t points, double half_width) {
  std::vector<double> xs(points);
  std::vector<double> w(points);
  for (std::size_t i = 0; i < points; ++i) {
    xs[i] = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(points - 1);
    w[i] = std::exp(-0.5 * xs[i] * xs[i]);
  }
  Matrix d(points, points);
  for (std::size_t i = 0; i < points; ++i)
    for (std::size_t j = 0; j < points; ++j) d(i, j) = (xs[i] - xs[j]) * (xs[i] - xs[j]);
  return {Pmf::from_weights(w), d};
}

inline SrProblem gaussian_sr_grid(std::size_t points, double half_width) {
  const RdProblem p = gaussian_grid(points, half_width);
  return {p.px(), p.distortion(), p.distortion()};
}

}  // namespace refine::testing
