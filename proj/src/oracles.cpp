// SPDX-License-Identifier: Apache-2.0
#include "refine/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "refine/errors.hpp"

namespace refine {
namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw OutOfRange("binary entropy: p outside [0, 1]");
  return -xlogx(p) - xlogx(1.0 - p);
}

OracleResult analytic_rd_binary(double p, double d) {
  if (!(p >= 0.0 && p <= 1.0)) throw OutOfRange("binary rate-distortion: p outside [0, 1]");
  if (!(d >= 0.0) || !std::isfinite(d)) throw OutOfRange("binary rate-distortion: d < 0");
  const double d_max = std::min(p, 1.0 - p);
  const double v = d >= d_max ? 0.0 : binary_entropy(p) - binary_entropy(d);
  return {std::max(0.0, v), "analytic", 0.0};
}

OracleResult analytic_rd_gaussian(double d, double variance) {
  if (!(variance > 0.0)) throw OutOfRange("gaussian rate-distortion: variance must be positive");
  if (!(d > 0.0) || !std::isfinite(d)) throw OutOfRange("gaussian rate-distortion: d <= 0");
  return {d >= variance ? 0.0 : 0.5 * std::log(variance / d), "analytic", 0.0};
}

BinaryHammingOptimum binary_hamming_optimum(double p, double lambda) {
  if (!(p >= 0.0 && p <= 1.0)) throw OutOfRange("binary optimum: p outside [0, 1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw OutOfRange("binary optimum: bad slope");
  const double d = 1.0 / (1.0 + std::exp(lambda));
  const double pmin = std::min(p, 1.0 - p);
  BinaryHammingOptimum out;
  if (d < pmin) {
    out.distortion = d;
    out.q = (p - d) / (1.0 - 2.0 * d);
    out.f_value = binary_entropy(p) - binary_entropy(d) + lambda * d;
  } else {
    out.distortion = pmin;
    out.q = p >= 0.5 ? 1.0 : 0.0;
    out.f_value = lambda * pmin;
  }
  return out;
}

namespace {

double dual_objective(const RdProblem& problem, double lambda, std::span<const double> q) {
  const Pmf& px = problem.px();
  double v = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    double s = 0.0;
    for (std::size_t y = 0; y < q.size(); ++y) {
      s += q[y] * std::exp(-lambda * problem.distortion()(x, y));
    }
    v -= px[x] * std::log(s);
  }
  return v;
}

}  // namespace

OracleResult brute_force_dual(const RdProblem& problem, double lambda, std::size_t grid_steps) {
  if (problem.num_inputs() > 3 || problem.num_outputs() > 3) {
    throw TooLarge("brute_force_dual: alphabets limited to 3 symbols");
  }
  if (grid_steps < 50) throw ValidationError("brute_force_dual: grid_steps must be >= 50");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("brute_force_dual: slope must be finite and nonnegative");
  }
  const std::size_t ny = problem.num_outputs();
  const double n = static_cast<double>(grid_steps);
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 3> q{};
  if (ny == 1) {
    q[0] = 1.0;
    best = dual_objective(problem, lambda, std::span<const double>(q.data(), 1));
  } else if (ny == 2) {
    for (std::size_t i = 0; i <= grid_steps; ++i) {
      q[0] = static_cast<double>(i) / n;
      q[1] = 1.0 - q[0];
      best = std::min(best, dual_objective(problem, lambda, std::span<const double>(q.data(), 2)));
    }
  } else {
    for (std::size_t i = 0; i <= grid_steps; ++i) {
      for (std::size_t j = 0; i + j <= grid_steps; ++j) {
        q[0] = static_cast<double>(i) / n;
        q[1] = static_cast<double>(j) / n;
        q[2] = static_cast<double>(grid_steps - i - j) / n;
        best = std::min(best, dual_objective(problem, lambda, std::span<const double>(q.data(), 3)));
      }
    }
  }
  return {best, "grid", 1.0 / n};
}

namespace {

// Inner second-stage value for a binary conditional source (w0, w1):
// min over P[Y2 = 0] = t of -sum_x w_x ln(t e0_x + (1 - t) e1_x). Convex in t.
struct InnerStage {
  std::array<double, 2> e0;
  std::array<double, 2> e1;

  double eval(const std::array<double, 2>& w, double t) const {
    double v = 0.0;
    for (int x = 0; x < 2; ++x) {
      if (w[x] > 0.0) v -= w[x] * std::log(t * e0[x] + (1.0 - t) * e1[x]);
    }
    return v;
  }

  double minimize(const std::array<double, 2>& w, std::size_t steps) const {
    double h = 1.0 / static_cast<double>(steps);
    double best_t = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) * h;
      const double v = eval(w, t);
      if (v < best) {
        best = v;
        best_t = t;
      }
    }
    for (int round = 0; round < 4; ++round) {
      const double lo = std::max(0.0, best_t - 2.0 * h);
      const double hi = std::min(1.0, best_t + 2.0 * h);
      h = (hi - lo) / 20.0;
      for (int i = 0; i <= 20; ++i) {
        const double t = lo + i * h;
        const double v = eval(w, t);
        if (v < best) {
          best = v;
          best_t = t;
        }
      }
    }
    return best;
  }
};

}  // namespace

OracleResult brute_force_sr_dual(const SrProblem& problem, const LagrangeTriple& triple,
                                 std::size_t grid_steps) {
  if (problem.num_inputs() != 2 || problem.num_y1() != 2 || problem.num_y2() != 2) {
    throw TooLarge("brute_force_sr_dual: needs |X| = |Y1| = |Y2| = 2");
  }
  if (grid_steps < 30) throw ValidationError("brute_force_sr_dual: grid_steps must be >= 30");
  triple.validate();
  const Pmf& px = problem.px();
  InnerStage inner;
  for (int x = 0; x < 2; ++x) {
    inner.e0[x] = std::exp(-triple.lambda2 * problem.d2()(x, 0));
    inner.e1[x] = std::exp(-triple.lambda2 * problem.d2()(x, 1));
  }

  // a = P[Y1 = 0 | X = 0], b = P[Y1 = 0 | X = 1].
  auto lagrangian = [&](double a, double b) {
    const std::array<std::array<double, 2>, 2> k{{{a, 1.0 - a}, {b, 1.0 - b}}};
    double v = 0.0;
    for (int y1 = 0; y1 < 2; ++y1) {
      const double py1 = px[0] * k[0][y1] + px[1] * k[1][y1];
      if (py1 <= 0.0) continue;
      std::array<double, 2> w{};
      for (int x = 0; x < 2; ++x) {
        const double joint = px[x] * k[x][y1];
        w[x] = joint / py1;
        if (joint > 0.0) {
          v += (1.0 + triple.nu1) * joint * std::log(k[x][y1] / py1);
          v += triple.lambda1 * joint * problem.d1()(x, y1);
        }
      }
      v += py1 * inner.minimize(w, grid_steps);
    }
    return v;
  };

  double h = 1.0 / static_cast<double>(grid_steps);
  double best = std::numeric_limits<double>::infinity();
  double best_a = 0.0;
  double best_b = 0.0;
  for (std::size_t i = 0; i <= grid_steps; ++i) {
    for (std::size_t j = 0; j <= grid_steps; ++j) {
      const double a = static_cast<double>(i) * h;
      const double b = static_cast<double>(j) * h;
      const double v = lagrangian(a, b);
      if (v < best) {
        best = v;
        best_a = a;
        best_b = b;
      }
    }
  }
  for (int round = 0; round < 4; ++round) {
    const double alo = std::max(0.0, best_a - 2.0 * h);
    const double ahi = std::min(1.0, best_a + 2.0 * h);
    const double blo = std::max(0.0, best_b - 2.0 * h);
    const double bhi = std::min(1.0, best_b + 2.0 * h);
    const double ha = (ahi - alo) / 20.0;
    const double hb = (bhi - blo) / 20.0;
    for (int i = 0; i <= 20; ++i) {
      for (int j = 0; j <= 20; ++j) {
        const double a = alo + i * ha;
        const double b = blo + j * hb;
        const double v = lagrangian(a, b);
        if (v < best) {
          best = v;
          best_a = a;
          best_b = b;
        }
      }
    }
    h = std::max(ha, hb);
  }
  return {best, "grid", h};
}

}  // namespace refine
