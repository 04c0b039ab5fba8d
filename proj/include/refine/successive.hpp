// SPDX-License-Identifier: Apache-2.0
//
// Successive refinement: the two-stage generalization of the Blahut
// iteration, the surface envelope R2(d1, d2, R1), certificate (beta1, beta2)
// feasibility checks, tilted information, and the successively-refinable
// construction from two single-stage solutions.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "refine/errors.hpp"
#include "refine/prob.hpp"
#include "refine/single_stage.hpp"

namespace refine {

class SrProblem {
 public:
  SrProblem(Pmf px, Matrix d1, Matrix d2);

  const Pmf& px() const { return px_; }
  const Matrix& d1() const { return d1_; }
  const Matrix& d2() const { return d2_; }
  std::size_t num_inputs() const { return px_.size(); }
  std::size_t num_y1() const { return d1_.cols(); }
  std::size_t num_y2() const { return d2_.cols(); }

  RdProblem first_stage() const { return {px_, d1_}; }
  RdProblem second_stage() const { return {px_, d2_}; }

 private:
  Pmf px_;
  Matrix d1_;
  Matrix d2_;
};

/// (nu1, lambda1, lambda2), all finite and nonnegative.
struct LagrangeTriple {
  double nu1 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  void validate() const;
};

/// log beta1(x) and log beta2(x | y1) (rows x, columns y1).
struct Betas {
  std::vector<double> log_beta1;
  Matrix log_beta2;
};

/// One iterate of the two-stage loop. Kernels and marginals are those of
/// iteration k; the betas are the ones that produced them (computed from the
/// k-1 marginals), paired with f_value = (1 + nu1) E[ln 1/beta1(X)].
struct SrState {
  std::size_t iteration = 0;
  Pmf py1;
  Kernel py2_given_y1;  // |Y1| x |Y2|
  Kernel k1;            // |X| x |Y1|
  Kernel k2;            // (|X| * |Y1|) x |Y2|, row x * |Y1| + y1
  Betas betas;
  double f_value = 0.0;

  std::vector<double> beta1() const;
  Matrix beta2() const;
};

SrState initial_sr_state(const SrProblem& problem, const Pmf& init1, const Kernel& init2);

/// beta2 first (from the conditional output kernel), then beta1.
Betas update_betas(const SrProblem& problem, const LagrangeTriple& triple, const Pmf& py1,
                   const Kernel& py2_given_y1);
Betas update_betas(const SrProblem& problem, const LagrangeTriple& triple, const SrState& state);

SrState update_kernels(const SrProblem& problem, const LagrangeTriple& triple,
                       const SrState& state, const Betas& betas);

SrState sr_step(const SrProblem& problem, const LagrangeTriple& triple, const SrState& state);

struct SrDualPoint {
  LagrangeTriple triple;
  double f_value = 0.0;
  bool converged = false;
  std::size_t iterations_used = 0;
  double gap_bound = 0.0;
  // Tangency coordinates read off the final kernels.
  double d1 = 0.0;
  double d2 = 0.0;
  double r1 = 0.0;
};

struct SrRun {
  SrDualPoint dual;
  std::vector<double> f_trace;
  std::vector<SrState> trace;
  SrState final_state;
};

SrRun run_sr_blahut(const SrProblem& problem, const LagrangeTriple& triple, const Pmf& init1,
                    const Kernel& init2, const BlahutOptions& options = {});
/// Uniform P_{Y1} and uniform rows of P_{Y2|Y1}.
SrRun run_sr_blahut(const SrProblem& problem, const LagrangeTriple& triple,
                    const BlahutOptions& options = {});

/// E[d1(X,Y1)], E[d2(X,Y2)], I(X;Y1) and I(X;Y1,Y2) of a state's kernels.
struct SrOperatingPoint {
  double d1 = 0.0;
  double d2 = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
};
SrOperatingPoint operating_point(const SrProblem& problem, const SrState& state);

struct OmegaReport {
  bool finite = false;
  bool decreasing_in_d1 = false;
  bool decreasing_in_d2 = false;
  bool decreasing_in_r1 = false;
  bool inside = false;  // strict decrease along every axis and finite
};

/// Max over supporting hyperplanes, floored at zero.
class SrSurface {
 public:
  struct Line {
    LagrangeTriple triple;
    double f_value;
  };

  explicit SrSurface(std::vector<Line> lines) : lines_(std::move(lines)) {}

  double evaluate(double d1, double d2, double r1) const;
  OmegaReport in_omega(double d1, double d2, double r1, double eps = 1e-3) const;
  const std::vector<Line>& lines() const { return lines_; }

 private:
  std::vector<Line> lines_;
};

SrSurface sr_envelope(std::span<const SrDualPoint> duals);

/// Sigma1(y1) and Sigma2(y1, y2) for a (beta1, beta2, triple) certificate.
struct SigmaValues {
  std::vector<double> sigma1;
  Matrix sigma2;  // |Y1| x |Y2|

  double max_sigma1() const;
  double max_sigma2() const;
};

SigmaValues sigma_values(const SrProblem& problem, const LagrangeTriple& triple,
                         const Betas& betas);

struct SrOptimalityReport {
  SigmaValues sigma;
  double tol = 0.0;
  double max_sigma1 = 0.0;
  double max_sigma2_excess = 0.0;    // max over support-y1 of Sigma2 - Sigma1
  double max_sigma1_gap = 0.0;       // max |Sigma1 - 1| on the Y1 support
  double max_sigma2_gap = 0.0;       // max |Sigma2 - Sigma1| on the Y2|Y1 support
  bool passes = false;
};

/// Betas are recomputed from the final marginals; the equality conditions
/// are checked on the supports of P_{Y1} and P_{Y2|Y1} (a.e. form).
SrOptimalityReport verify_sr_optimality(const SrProblem& problem, const LagrangeTriple& triple,
                                        const SrState& final_state, double delta = 1e-9);

struct SrTiltedInfo {
  std::vector<double> values;

  double mean(const Pmf& px) const;
  double variance(const Pmf& px) const;
};

/// Uses the betas stored in the final state (those paired with its F value).
SrTiltedInfo sr_tilted_information(const SrDualPoint& dual, const SrState& final_state, double d1,
                                   double d2, double r1);

/// A dual certificate: any betas with a triple. Feasible when both Sigma
/// functions stay below one.
struct Certificate {
  LagrangeTriple triple;
  Betas betas;
};

/// (1 + nu1) E[ln 1/beta1(X)] - lambda1 d1 - lambda2 d2 - nu1 R1.
double certificate_value(const Pmf& px, const Certificate& cert, double d1, double d2, double r1);

/// Betas from the state's marginals, with beta1 scaled so that every Sigma
/// value is at most one.
Certificate certificate_from_state(const SrProblem& problem, const LagrangeTriple& triple,
                                   const SrState& state);

struct MarkovReport {
  Pmf py1;               // first-stage optimal output marginal
  Kernel mixing;         // P_{Y2|Y1} that best explains P_{X|Y1} by P_{X|Y2}
  /// Total variation between P_{X Y1} and P_{Y1} x sum_y2 P_{Y2|Y1} P_{X|Y2}.
  double mixture_residual = 0.0;
  /// Total variation between the induced Y2 marginal and the second-stage optimum.
  double y2_marginal_residual = 0.0;
  /// max |dP_{X|Y1,Y2}/dP_X - exp(-lambda2 d2)/alpha2| over the joint support
  double backward_residual = 0.0;
  double tol = 0.0;
  bool passes = false;
};

struct RefinableCertificate {
  Certificate certificate;
  SigmaValues sigma;
  MarkovReport markov;
  double d1 = 0.0;
  double d2 = 0.0;
  double r1 = 0.0;  // R_{d1}(d1)
  double r2 = 0.0;  // R_{d2}(d2)
  /// Certificate value at (d1, d2, R_{d1}(d1)); equals R_{d2}(d2).
  double value = 0.0;
};

/// Raised when the constructed certificate cannot be optimal: a Sigma
/// constraint exceeds 1 + tol, or no joint law realizes both single-stage
/// backward channels (the source is not successively refinable there).
class ConstraintViolated : public Error {
 public:
  ConstraintViolated(const std::string& what, RefinableCertificate result)
      : Error(what), result_(std::move(result)) {}
  const char* kind() const noexcept override { return "ConstraintViolated"; }
  ExitCode exit_code() const noexcept override { return ExitCode::kNumerical; }
  const RefinableCertificate& result() const { return result_; }

 private:
  RefinableCertificate result_;
};

/// Builds the refinable certificate from single-stage solutions of
/// (px, d1) and (px, d2). nu1 must be positive.
RefinableCertificate refinable_construction(const SrProblem& problem,
                                            const SingleStageSolution& stage1,
                                            const SingleStageSolution& stage2, double nu1,
                                            double tol = 1e-6);
RefinableCertificate refinable_construction(const SrProblem& problem, double d1, double d2,
                                            double nu1, const BlahutOptions& options = {},
                                            double tol = 1e-6);

}  // namespace refine
