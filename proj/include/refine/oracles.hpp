// SPDX-License-Identifier: Apache-2.0
//
// Ground-truth values for validating the iterative solvers: closed-form
// rate-distortion functions and exhaustive grid minimization of the duals
// on tiny alphabets. The grid searches never call the iterative code.
#pragma once

#include <cstddef>
#include <string>

#include "refine/single_stage.hpp"
#include "refine/successive.hpp"

namespace refine {

struct OracleResult {
  double value = 0.0;
  std::string method;       // "analytic" or "grid"
  double resolution = 0.0;  // final grid spacing; 0 for analytic values
};

/// h(p) in nats.
double binary_entropy(double p);

/// h(p) - h(d) for a Bernoulli(p) source under Hamming distortion; zero for
/// d >= min(p, 1 - p). Throws OutOfRange for p outside [0, 1] or d < 0.
OracleResult analytic_rd_binary(double p, double d);

/// 1/2 ln(variance / d), zero for d >= variance. Throws OutOfRange for d <= 0.
OracleResult analytic_rd_gaussian(double d, double variance = 1.0);

/// Optimum of the Bernoulli(p)/Hamming dual at slope lambda, with p = P[X = 1].
struct BinaryHammingOptimum {
  double f_value = 0.0;
  double distortion = 0.0;  // tangency distortion
  double q = 0.0;           // P[Y* = 1]
};
BinaryHammingOptimum binary_hamming_optimum(double p, double lambda);

/// min over output marginals q on a simplex grid of E[-ln E_q exp(-lambda d(X, Y))].
/// Needs |X|, |Y| <= 3 (TooLarge otherwise) and grid_steps >= 50.
OracleResult brute_force_dual(const RdProblem& problem, double lambda, std::size_t grid_steps);

/// min of (1 + nu1) I(X;Y1) + I(X;Y2|Y1) + lambda1 E d1 + lambda2 E d2 over
/// P_{Y1|X} on a two-parameter grid; for each candidate the second stage is
/// minimized per y1 over a grid of output marginals. The best cell of both
/// grids is refined by local zooming. Needs |X| = |Y1| = |Y2| = 2 and
/// grid_steps >= 30.
OracleResult brute_force_sr_dual(const SrProblem& problem, const LagrangeTriple& triple,
                                 std::size_t grid_steps);

}  // namespace refine
