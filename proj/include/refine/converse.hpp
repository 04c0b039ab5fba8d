// SPDX-License-Identifier: Apache-2.0
//
// Nonasymptotic converse machinery for two-stage codes: information-content
// terms F, F1, F2 under a dual certificate, the two-event necessary
// condition for a code, three computable corollary bounds, and the scalar
// normal approximation. Tail probabilities of i.i.d. sums are computed
// exactly over type classes when feasible and by seeded Monte Carlo
// otherwise.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refine/single_stage.hpp"
#include "refine/successive.hpp"

namespace refine {

/// A two-stage code. enc2 rows are indexed by x * m1 + w1; dec2 by
/// w1 * second_size() + w2.
struct CodeSpec {
  std::size_t m1 = 1;
  std::size_t m2 = 1;
  Kernel enc1;
  Kernel enc2;
  std::vector<std::size_t> dec1;
  std::vector<std::size_t> dec2;

  std::size_t second_size() const { return m2 / m1; }
  void validate(const SrProblem& problem) const;

  /// Deterministic encoders f1: X -> [m1], f2: X -> [m2 / m1].
  static CodeSpec deterministic(std::size_t num_inputs, std::size_t m1, std::size_t m2,
                                std::span<const std::size_t> f1, std::span<const std::size_t> f2,
                                std::vector<std::size_t> dec1, std::vector<std::size_t> dec2);
};

struct FAtom {
  std::size_t x = 0;
  std::size_t y1 = 0;
  std::size_t y2 = 0;
  double prob = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double f = 0.0;
  double dist1 = 0.0;  // d1(x, y1)
  double dist2 = 0.0;  // d2(x, y2)
};

/// Joint law of (F1, F2, F, d1(X,Y1), d2(X,Y2)) induced by a code.
struct FTerms {
  std::vector<FAtom> atoms;
  double nu1 = 0.0;
  double log_m1 = 0.0;
  double log_m2 = 0.0;
  double d1 = 0.0;  // target distortions
  double d2 = 0.0;
};

/// Throws CertificateInvalid unless Sigma1 <= 1 and Sigma2 <= 1 everywhere
/// (up to `slack` for rounding).
void require_valid_certificate(const SrProblem& problem, const Certificate& cert,
                               double slack = 1e-12);

FTerms evaluate_f_terms(const SrProblem& problem, const Certificate& cert, const CodeSpec& code,
                        double d1, double d2);

struct Theorem3Residuals {
  double lhs1 = 0.0;  // P[F1 >= ln M1 + gamma1, d1(X,Y1) <= d1]
  double lhs2 = 0.0;  // P[F2 >= ln M2 + gamma2, both distortions met]
  double bound1 = 0.0;
  double bound2 = 0.0;
  double margin1 = 0.0;  // bound1 - lhs1
  double margin2 = 0.0;
  bool holds = false;
};

Theorem3Residuals theorem3_residuals(const FTerms& terms, double gamma1, double gamma2);

enum class Corollary { kSeparate, kJoint, kTilted };
const char* corollary_name(Corollary c);

/// How tail probabilities of n-fold sums are computed.
struct TailOptions {
  /// Exact enumeration over type classes up to this many compositions.
  double max_compositions = 1e7;
  std::size_t mc_samples = 200000;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: worker_count()
};

struct TailEstimate {
  double probability = 0.0;
  double ci_low = 0.0;  // 99% Clopper-Pearson for Monte Carlo; equal to the value when exact
  double ci_high = 0.0;
  bool exact = true;
  std::size_t samples = 0;
};

/// P[pred(S)] where S_j = sum_i values[j][X_i] over n i.i.d. draws from px.
TailEstimate iid_sum_probability(const Pmf& px, const std::vector<std::vector<double>>& values,
                                 std::size_t n,
                                 const std::function<bool(std::span<const double>)>& pred,
                                 const TailOptions& options = {});

struct BlockSpec {
  std::size_t n = 1;
  double log_m1 = 0.0;
  double log_m2 = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  TailOptions tail;

  /// gamma1 = gamma2 = ln n (n >= 2), or 1 for n = 1 where ln n vanishes.
  static double default_gamma(std::size_t n);
  void validate() const;
};

struct BoundTerm {
  double probability = 0.0;  // probability of the information-content event
  double ci_low = 0.0;
  double ci_high = 0.0;
  double raw = 0.0;    // probability minus the exponential slack terms
  double value = 0.0;  // raw floored at zero; uses ci_low under Monte Carlo
  bool vacuous = true;
};

struct BoundResult {
  Corollary which = Corollary::kSeparate;
  std::size_t n = 1;
  double log_m1 = 0.0;
  double log_m2 = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  std::optional<BoundTerm> eps1;
  BoundTerm eps2;
  bool exact = true;
  /// Label only: the second term read as the separate second-stage error.
  bool separate_second_stage = false;
};

/// Single-stage tilted informations for both stages.
BoundResult corollary1(const Pmf& px, std::span<const double> tilted1,
                       std::span<const double> tilted2, const BlockSpec& block,
                       bool separate_second_stage = false);
BoundResult corollary1(const Pmf& px, const TiltedInfo& stage1, const TiltedInfo& stage2,
                       const BlockSpec& block, bool separate_second_stage = false);

/// Joint bound from F and F1. Throws F1NotSourceOnly unless beta2(x | y1)
/// is constant in y1, and CertificateInvalid for an infeasible certificate.
BoundResult corollary2(const SrProblem& problem, const Certificate& cert, double d1, double d2,
                       const BlockSpec& block);

/// Joint bound from the two-stage tilted information under the certificate.
BoundResult corollary3(const SrProblem& problem, const Certificate& cert, double d1, double d2,
                       const BlockSpec& block);

struct NormalApproximation {
  double log_m = 0.0;  // n R + sqrt(n V) Qinv(epsilon), nats
  double mean = 0.0;
  double variance = 0.0;
  double q_inverse = 0.0;
};

/// Throws ZeroVariance when the tilted information is (numerically) constant.
NormalApproximation normal_approximation(const Pmf& px, std::span<const double> tilted,
                                         std::size_t n, double epsilon);

}  // namespace refine
