// SPDX-License-Identifier: Apache-2.0
//
// Closed-form two-stage iteration for a zero-mean Gaussian source under
// squared error at both stages. Every iterate stays Gaussian:
//   Y1 ~ N(0, s1),  Y2 | Y1 = y1 ~ N(c * y1, s21).
#pragma once

#include <cstddef>
#include <vector>

#include "refine/successive.hpp"

namespace refine {

struct GaussParams {
  double source_var = 1.0;  // E[X^2]
  double s1 = 1.0;          // Var[Y1]
  double c = 1.0;           // gain of Y2 given Y1
  double s21 = 1.0;         // Var[Y2 | Y1]

  void validate() const;
};

/// Quantities produced by one step, besides the next parameters.
struct GaussStep {
  GaussParams next;
  double f_value = 0.0;  // (1 + nu1) E[ln 1/beta1(X)] in nats
  double t1 = 0.0;       // s1 * A, the first-stage tilt
  double t2 = 0.0;       // lambda2 * s21
  double y1_gain = 0.0;  // Y1 | X = x ~ N(y1_gain x, y1_var)
  double y1_var = 0.0;
  double post_gain = 0.0;  // E[X | Y1 = y] = post_gain y
  double post_var = 0.0;   // Var[X | Y1]
  double y2_var_given_xy1 = 0.0;
};

/// M(a, t) = exp(-a t / (1 + 2t)) (1 + 2t)^(-1/2).
double gauss_m(double a, double t);

GaussStep gaussian_sr_step(const GaussParams& params, const LagrangeTriple& triple);

struct GaussRun {
  std::vector<GaussStep> steps;
  double f_value = 0.0;
};

GaussRun run_gaussian_sr(const LagrangeTriple& triple, std::size_t iterations,
                         const GaussParams& init = {});

struct Fig3Point {
  double d2 = 0.0;
  double estimate = 0.0;
  double analytic = 0.0;
  double abs_error = 0.0;
};

struct Fig3Result {
  std::vector<SrDualPoint> duals;
  std::vector<Fig3Point> points;
  double max_abs_error = 0.0;
};

/// Runs `iterations` steps at each lambda2 and evaluates the envelope of
/// F_K - lambda2 d2 - lambda1 d1 - nu1 R1 at the given d2 values, where
/// d1 = nu1 / (2 lambda1) and R1 = 1/2 ln(1/d1) for a unit-variance source.
Fig3Result reproduce_fig3(const std::vector<double>& lambda2_sweep, std::size_t iterations,
                          const std::vector<double>& d2_grid, double nu1 = 1.0,
                          double lambda1 = 5.0 / 9.0);

}  // namespace refine
