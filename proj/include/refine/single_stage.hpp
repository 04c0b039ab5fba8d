// SPDX-License-Identifier: Apache-2.0
//
// Single-stage rate-distortion: the generalized Blahut iteration for the
// Lagrange dual F(lambda), reconstruction of R(d) as the upper envelope of
// supporting lines, optimality verification and d-tilted information.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "refine/prob.hpp"

namespace refine {

/// Source pmf plus a finite, nonnegative distortion matrix (rows: source
/// symbols, columns: reproduction symbols).
class RdProblem {
 public:
  RdProblem(Pmf px, Matrix distortion);

  const Pmf& px() const { return px_; }
  const Matrix& distortion() const { return distortion_; }
  std::size_t num_inputs() const { return px_.size(); }
  std::size_t num_outputs() const { return distortion_.cols(); }

 private:
  Pmf px_;
  Matrix distortion_;
};

/// One iterate of the Blahut loop. `f_value` is F_k, computed from the
/// previous marginal; `kernel` and `py` are the k-th tilted kernel and its
/// output marginal.
struct BlahutState {
  std::size_t iteration = 0;
  Pmf py;
  Kernel kernel;
  double f_value = 0.0;
  double lambda = 0.0;
};

/// Iteration-0 state: kernel rows equal to `init`, F_0 = +inf.
BlahutState initial_state(const RdProblem& problem, double lambda, const Pmf& init);

/// Sigma(x) = E[exp(-lambda d(x, Y))] with Y ~ py, in log domain.
std::vector<double> log_sigma_bar(const RdProblem& problem, double lambda, const Pmf& py);
std::vector<double> sigma_bar(const RdProblem& problem, double lambda, const Pmf& py);

/// One Blahut update. Output mass below kMassFloor is clamped to zero.
BlahutState blahut_step(const RdProblem& problem, const BlahutState& state);

struct BlahutOptions {
  std::size_t max_iters = 10000;
  double delta = 1e-9;
  /// Keep every iterate in the run's trace. F values are always recorded.
  bool keep_states = true;
};

struct DualPoint {
  double lambda = 0.0;
  double f_value = 0.0;
  bool converged = false;
  std::size_t iterations_used = 0;
  /// Value of the stopping functional sup_y ln(P_{Y_K}/P_{Y_{K-1}})(y).
  double gap_bound = 0.0;
  /// E[d(X,Y)] and I(X;Y) of the final kernel: the tangency point of the line.
  double distortion = 0.0;
  double rate = 0.0;
};

struct BlahutRun {
  DualPoint dual;
  std::vector<double> f_trace;      // F_1, ..., F_K
  std::vector<BlahutState> trace;   // states 1..K when keep_states
  BlahutState final_state;
};

BlahutRun run_blahut(const RdProblem& problem, double lambda, const Pmf& init,
                     const BlahutOptions& options = {});
/// Uniform initial marginal over the reproduction alphabet.
BlahutRun run_blahut(const RdProblem& problem, double lambda, const BlahutOptions& options = {});

/// lo..hi in `count` steps, geometric or linear.
std::vector<double> slope_grid(double lo, double hi, std::size_t count, bool geometric = true);

/// Upper envelope of the lines R = F(lambda) - lambda d, floored at zero
/// (the lambda = 0 line, F(0) = 0, is always a valid supporting line).
class RdCurve {
 public:
  struct Line {
    double lambda;
    double f_value;
  };

  RdCurve(std::vector<Line> hull, std::vector<std::pair<double, double>> points,
          double d_min, double d_max);

  double evaluate(double d) const;
  /// Slope of the active supporting line at d (a subgradient negated).
  double active_slope(double d) const;

  const std::vector<Line>& lines() const { return hull_; }
  /// Breakpoints (d, R) of the envelope between d_min and d_max.
  const std::vector<std::pair<double, double>>& points() const { return points_; }
  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }

 private:
  std::vector<Line> hull_;  // sorted by decreasing slope, only active lines
  std::vector<std::pair<double, double>> points_;
  double d_min_;
  double d_max_;
};

/// Throws InsufficientSlopes unless at least two distinct slopes are given.
RdCurve rd_envelope(std::span<const DualPoint> duals);

struct TiltedInfo {
  std::vector<double> alpha_star;
  double lambda_star = 0.0;
  std::vector<double> values;  // j_d(x, d) = -ln alpha*(x) - lambda* d

  double mean(const Pmf& px) const;
  double variance(const Pmf& px) const;
};

/// alpha* is Sigma at the final marginal; lambda* is the dual's slope.
/// Throws NotConverged when the dual did not meet its stopping rule.
TiltedInfo tilted_information(const RdProblem& problem, const DualPoint& dual,
                              const BlahutState& final_state, double d);

struct OptimalityReport {
  std::vector<double> constraint;  // E[exp(-lambda d(X,y)) / alpha(X)] per y
  double tol = 0.0;
  double max_value = 0.0;
  double min_on_support = 0.0;
  bool passes = false;
};

/// Checks constraint(y) <= 1 + tol everywhere and >= 1 - tol on the support
/// of the final marginal, with tol = 10 delta.
OptimalityReport verify_optimality(const RdProblem& problem, const DualPoint& dual,
                                   const BlahutState& final_state, double delta = 1e-9);

/// Converged run at one slope together with its tilted information at the
/// tangency distortion.
struct SingleStageSolution {
  BlahutRun run;
  double lambda = 0.0;
  double distortion = 0.0;
  double rate = 0.0;  // F - lambda d
  TiltedInfo tilted;
};

SingleStageSolution solve_at_slope(const RdProblem& problem, double lambda,
                                   const BlahutOptions& options = {});
/// Bisection on log(lambda) until the tangency distortion matches `d`.
SingleStageSolution solve_at_distortion(const RdProblem& problem, double d,
                                        const BlahutOptions& options = {},
                                        double d_tol = 1e-10);

}  // namespace refine
