// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "refine/converse.hpp"
#include "refine/errors.hpp"
#include "refine/oracles.hpp"
#include "test_support.hpp"

namespace refine {
namespace {

BlahutOptions tight() {
  BlahutOptions o;
  o.delta = 1e-13;
  return o;
}

// All deterministic codes of a given size on |X| = 2.
std::vector<CodeSpec> all_codes(const SrProblem& p, std::size_t m1, std::size_t m2) {
  const std::size_t nx = p.num_inputs();
  const std::size_t l = m2 / m1;
  std::vector<CodeSpec> out;
  const std::size_t n_f1 = static_cast<std::size_t>(std::pow(m1, nx));
  const std::size_t n_f2 = static_cast<std::size_t>(std::pow(l, nx));
  const std::size_t n_g1 = static_cast<std::size_t>(std::pow(p.num_y1(), m1));
  const std::size_t n_g2 = static_cast<std::size_t>(std::pow(p.num_y2(), m1 * l));
  auto digits = [](std::size_t v, std::size_t base, std::size_t len) {
    std::vector<std::size_t> d(len);
    for (std::size_t i = 0; i < len; ++i) {
      d[i] = v % base;
      v /= base;
    }
    return d;
  };
  for (std::size_t a = 0; a < n_f1; ++a)
    for (std::size_t b = 0; b < n_f2; ++b)
      for (std::size_t c = 0; c < n_g1; ++c)
        for (std::size_t e = 0; e < n_g2; ++e) {
          const auto f1 = digits(a, m1, nx);
          const auto f2 = digits(b, l, nx);
          out.push_back(CodeSpec::deterministic(nx, m1, m2, f1, f2, digits(c, p.num_y1(), m1),
                                                digits(e, p.num_y2(), m1 * l)));
        }
  return out;
}

Certificate zero_certificate(const SrProblem& p) {
  Certificate c;
  c.betas.log_beta1.assign(p.num_inputs(), 0.0);
  c.betas.log_beta2 = Matrix(p.num_inputs(), p.num_y1());
  return c;
}

TEST(CodeSpec, Validation) {
  const SrProblem p = testing::binary_sr(0.5);
  const std::vector<std::size_t> f{0, 1};
  EXPECT_THROW(CodeSpec::deterministic(2, 3, 2, f, f, {0, 0, 0}, {0}), ValidationError);
  EXPECT_THROW(CodeSpec::deterministic(2, 2, 4, std::vector<std::size_t>{0, 2}, f, {0, 1},
                                       {0, 1, 0, 1}),
               ValidationError);
  const CodeSpec bad = CodeSpec::deterministic(2, 2, 4, f, f, {0, 5}, {0, 1, 0, 1});
  EXPECT_THROW(bad.validate(p), ValidationError);
}

TEST(FTerms, ZeroCertificate) {
  const SrProblem p = testing::binary_sr(0.5);
  const std::vector<std::size_t> f{0, 1};
  const CodeSpec code = CodeSpec::deterministic(2, 2, 4, f, f, {0, 1}, {0, 1, 0, 1});
  const FTerms t = evaluate_f_terms(p, zero_certificate(p), code, 0.2, 0.1);
  ASSERT_EQ(t.atoms.size(), 2u);
  for (const FAtom& a : t.atoms) {
    EXPECT_EQ(a.f1, 0.0);
    EXPECT_EQ(a.f2, 0.0);
  }
  double total = 0.0;
  for (const FAtom& a : t.atoms) total += a.prob;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(FTerms, RejectsInfeasibleCertificate) {
  const SrProblem p = testing::binary_sr(0.5);
  Certificate c = zero_certificate(p);
  c.betas.log_beta1 = {-1.0, -1.0};
  const std::vector<std::size_t> f{0, 0};
  const CodeSpec code = CodeSpec::deterministic(2, 1, 1, f, f, {0}, {0});
  EXPECT_THROW(evaluate_f_terms(p, c, code, 0.2, 0.1), CertificateInvalid);
}

TEST(FTerms, DecompositionIdentity) {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0.3, 2.5);
  for (int t = 0; t < 10; ++t) {
    const SrProblem p(testing::random_pmf(rng, 2), testing::random_distortion(rng, 2, 2),
                      testing::random_distortion(rng, 2, 2));
    const LagrangeTriple tr{u(rng), u(rng), u(rng)};
    const Certificate c = certificate_from_state(p, tr, run_sr_blahut(p, tr).final_state);
    for (const CodeSpec& code : all_codes(p, 2, 4)) {
      for (const FAtom& a : evaluate_f_terms(p, c, code, 0.3, 0.2).atoms) {
        EXPECT_NEAR(a.f, tr.nu1 * (a.f1 - std::log(2.0)) + a.f2, 1e-12);
      }
    }
  }
}

// Under the refinable certificate the terms differ from the single-stage
// tilted informations only through d1(X, Y1) - d1, and coincide on that event.
TEST(FTerms, RefinableCertificateGivesTiltedInformations) {
  const SrProblem p = testing::binary_sr(0.3);
  const double d1 = 0.2;
  const double d2 = 0.1;
  const double nu = 1.5;
  const RefinableCertificate rc = refinable_construction(p, d1, d2, nu, tight());
  const SingleStageSolution s1 = solve_at_distortion(p.first_stage(), d1, tight());
  const SingleStageSolution s2 = solve_at_distortion(p.second_stage(), d2, tight());
  const double ls1 = s1.lambda;
  const double a = nu / (1.0 + nu);
  for (const CodeSpec& code : all_codes(p, 2, 4)) {
    for (const FAtom& at : evaluate_f_terms(p, rc.certificate, code, d1, d2).atoms) {
      const double shift = ls1 * (d1 - at.dist1);
      EXPECT_NEAR(at.f1, s1.tilted.values[at.x] + shift / (1.0 + nu), 1e-7);
      EXPECT_NEAR(at.f2, s2.tilted.values[at.x] - a * shift, 1e-7);
    }
  }
}

TEST(FTerms, DefinitionOneCertificateGivesSrTiltedInformation) {
  const SrProblem p = testing::binary_sr(0.3);
  const LagrangeTriple tr{1.0, 1.2, 2.5};
  const SrRun r = run_sr_blahut(p, tr, tight());
  ASSERT_TRUE(r.dual.converged);
  const Certificate c = certificate_from_state(p, tr, r.final_state);
  const double lm1 = std::log(2.0);
  const SrTiltedInfo ti = sr_tilted_information(r.dual, r.final_state, 0.25, 0.1, lm1);
  for (const CodeSpec& code : all_codes(p, 2, 4)) {
    for (const FAtom& a : evaluate_f_terms(p, c, code, 0.25, 0.1).atoms) {
      EXPECT_NEAR(a.f, ti.values[a.x], 1e-8);
    }
  }
}

TEST(Theorem3, Threshold) {
  FTerms t;
  t.d1 = 1.0;
  t.d2 = 1.0;
  const Theorem3Residuals r = theorem3_residuals(t, std::log(10.0), 1.0);
  EXPECT_NEAR(r.bound1, 0.1, 1e-15);
  EXPECT_TRUE(r.holds);
  EXPECT_THROW(theorem3_residuals(t, 0.0, 1.0), ValidationError);
}

TEST(Theorem3, HoldsForEveryCodeUnderRefinableCertificate) {
  const SrProblem p = testing::binary_sr(0.5);
  const RefinableCertificate rc = refinable_construction(p, 0.2, 0.1, 1.0, tight());
  int checked = 0;
  for (auto [m1, m2] : {std::pair<std::size_t, std::size_t>{1, 1}, {1, 2}, {2, 2}, {2, 4}}) {
    for (const CodeSpec& code : all_codes(p, m1, m2)) {
      const FTerms t = evaluate_f_terms(p, rc.certificate, code, 0.2, 0.1);
      for (double g : {0.1, 1.0, 3.0}) {
        const Theorem3Residuals r = theorem3_residuals(t, g, g);
        EXPECT_GE(r.margin1, 0.0);
        EXPECT_GE(r.margin2, 0.0);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Theorem3, HoldsForRandomStochasticCodes) {
  std::mt19937_64 rng(67);
  std::uniform_real_distribution<double> u(0.3, 2.5);
  for (int t = 0; t < 50; ++t) {
    const SrProblem p(testing::random_pmf(rng, 3), testing::random_distortion(rng, 3, 3),
                      testing::random_distortion(rng, 3, 3));
    const LagrangeTriple tr{u(rng), u(rng), u(rng)};
    const Certificate c = certificate_from_state(p, tr, run_sr_blahut(p, tr).final_state);
    CodeSpec code;
    code.m1 = 2;
    code.m2 = 4;
    std::vector<double> e1;
    for (int i = 0; i < 3; ++i) {
      const Pmf r = testing::random_pmf(rng, 2, 0.0);
      e1.insert(e1.end(), r.probs().begin(), r.probs().end());
    }
    std::vector<double> e2;
    for (int i = 0; i < 6; ++i) {
      const Pmf r = testing::random_pmf(rng, 2, 0.0);
      e2.insert(e2.end(), r.probs().begin(), r.probs().end());
    }
    code.enc1 = Kernel(3, 2, e1);
    code.enc2 = Kernel(6, 2, e2);
    std::uniform_int_distribution<std::size_t> pick(0, 2);
    code.dec1 = {pick(rng), pick(rng)};
    code.dec2 = {pick(rng), pick(rng), pick(rng), pick(rng)};
    const double d1 = 0.3 + 0.5 * u(rng) / 2.5;
    const double d2 = 0.2 + 0.5 * u(rng) / 2.5;
    const FTerms ft = evaluate_f_terms(p, c, code, d1, d2);
    for (double g : {0.1, 1.0, 3.0}) EXPECT_TRUE(theorem3_residuals(ft, g, g).holds);
  }
}

TEST(TailProbability, ExactSmallCase) {
  const Pmf px({0.7, 0.3});
  const TailEstimate e = iid_sum_probability(
      px, {{0.0, 1.0}}, 3, [](std::span<const double> s) { return s[0] >= 2.0 - 1e-9; });
  EXPECT_TRUE(e.exact);
  EXPECT_NEAR(e.probability, 3 * 0.09 * 0.7 + 0.027, 1e-14);
  EXPECT_EQ(e.ci_low, e.probability);
}

TEST(TailProbability, MonteCarloIsDeterministicAcrossThreads) {
  const Pmf px({0.2, 0.5, 0.3});
  const std::vector<std::vector<double>> v{{0.0, 1.0, 2.5}};
  auto pred = [](std::span<const double> s) { return s[0] >= 30.0; };
  const TailEstimate exact = iid_sum_probability(px, v, 25, pred);
  ASSERT_TRUE(exact.exact);
  TailOptions o;
  o.max_compositions = 1.0;
  o.mc_samples = 100000;
  o.seed = 9;
  o.threads = 1;
  const TailEstimate a = iid_sum_probability(px, v, 25, pred, o);
  o.threads = 4;
  const TailEstimate b = iid_sum_probability(px, v, 25, pred, o);
  EXPECT_FALSE(a.exact);
  EXPECT_EQ(a.probability, b.probability);
  EXPECT_EQ(a.ci_low, b.ci_low);
  EXPECT_EQ(a.samples, 100000u);
  EXPECT_LE(a.ci_low, exact.probability);
  EXPECT_GE(a.ci_high, exact.probability);
  o.seed = 10;
  EXPECT_NE(iid_sum_probability(px, v, 25, pred, o).probability, a.probability);
}

TEST(BlockSpec, Defaults) {
  EXPECT_EQ(BlockSpec::default_gamma(1), 1.0);
  EXPECT_NEAR(BlockSpec::default_gamma(20), std::log(20.0), 1e-15);
  BlockSpec b;
  b.gamma1 = 0.0;
  b.gamma2 = 1.0;
  EXPECT_THROW(b.validate(), ValidationError);
}

TEST(Corollary1, SingletonSourceIsVacuous) {
  const Pmf px({1.0});
  const std::vector<double> zero{0.0};
  BlockSpec b;
  b.n = 5;
  b.gamma1 = b.gamma2 = 1.0;
  const BoundResult r = corollary1(px, zero, zero, b);
  EXPECT_EQ(r.eps2.value, 0.0);
  EXPECT_TRUE(r.eps2.vacuous);
  EXPECT_LT(r.eps2.raw, 0.0);
}

TEST(Corollary1, DeterministicStepForUniformBinary) {
  const SingleStageSolution s = solve_at_distortion(testing::binary_hamming(0.5), 0.1, tight());
  const double rate = std::log(2.0) - binary_entropy(0.1);
  for (double v : s.tilted.values) EXPECT_NEAR(v, rate, 1e-8);
  BlockSpec b;
  b.n = 30;
  b.gamma1 = b.gamma2 = 1.0;
  b.log_m1 = b.log_m2 = b.n * rate - b.gamma1 - 0.5;
  const BoundResult below = corollary1(Pmf::uniform(2), s.tilted, s.tilted, b);
  EXPECT_NEAR(below.eps1->value, 1.0 - std::exp(-1.0), 1e-12);
  b.log_m1 = b.log_m2 = b.n * rate - b.gamma1 + 0.5;
  const BoundResult above = corollary1(Pmf::uniform(2), s.tilted, s.tilted, b);
  EXPECT_EQ(above.eps1->value, 0.0);
  EXPECT_TRUE(above.eps1->vacuous);
}

TEST(Corollary1, ExactConvolutionValue) {
  const SingleStageSolution s = solve_at_distortion(testing::binary_hamming(0.8), 0.1, tight());
  BlockSpec b;
  b.n = 20;
  b.gamma1 = b.gamma2 = BlockSpec::default_gamma(20);
  b.log_m1 = b.log_m2 = 20 * s.rate;
  const BoundResult r = corollary1(Pmf({0.2, 0.8}), s.tilted, s.tilted, b);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.eps1->probability, 0.08669251356740035, 1e-9);
  EXPECT_NEAR(r.eps1->value, 0.03669251356740034, 1e-9);
  EXPECT_EQ(r.eps1->value, r.eps2.value);
}

TEST(Corollary1, NonincreasingInCodeSize) {
  const SingleStageSolution s = solve_at_distortion(testing::binary_hamming(0.8), 0.1, tight());
  BlockSpec b;
  b.n = 40;
  b.gamma1 = b.gamma2 = BlockSpec::default_gamma(40);
  double prev = 2.0;
  for (double lm = 0.0; lm < 15.0; lm += 0.25) {
    b.log_m1 = b.log_m2 = lm;
    const double v = corollary1(Pmf({0.2, 0.8}), s.tilted, s.tilted, b).eps2.value;
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Corollary2, RequiresSourceOnlyFirstTerm) {
  const SrProblem p = testing::binary_sr(0.3);
  const RefinableCertificate rc = refinable_construction(p, 0.2, 0.1, 1.0, tight());
  BlockSpec b;
  b.n = 4;
  b.gamma1 = b.gamma2 = 1.0;
  b.log_m1 = 1.0;
  b.log_m2 = 2.0;
  EXPECT_THROW(corollary2(p, rc.certificate, 0.2, 0.1, b), F1NotSourceOnly);

  // lambda1 = 0 from identical initial rows keeps beta2 constant in y1
  const LagrangeTriple tr{1.0, 0.0, 2.0};
  const Certificate c = certificate_from_state(p, tr, run_sr_blahut(p, tr, tight()).final_state);
  const BoundResult r = corollary2(p, c, 0.2, 0.1, b);
  EXPECT_TRUE(r.exact);
  ASSERT_TRUE(r.eps1.has_value());
  EXPECT_GE(r.eps2.probability, r.eps1->probability - 1e-15);
  EXPECT_GE(r.eps2.value, 0.0);
  EXPECT_LE(r.eps2.value, 1.0);
}

TEST(Corollary3, NonincreasingInCodeSize) {
  const SrProblem p = testing::binary_sr(0.3);
  const RefinableCertificate rc = refinable_construction(p, 0.2, 0.1, 1.0, tight());
  BlockSpec b;
  b.n = 30;
  b.gamma1 = b.gamma2 = BlockSpec::default_gamma(30);
  b.log_m1 = 30 * rc.r1;
  double prev = 2.0;
  bool positive = false;
  for (double lm = b.log_m1; lm < b.log_m1 + 20.0; lm += 0.5) {
    b.log_m2 = lm;
    const BoundResult r = corollary3(p, rc.certificate, 0.2, 0.1, b);
    EXPECT_FALSE(r.eps1.has_value());
    EXPECT_LE(r.eps2.value, prev);
    positive = positive || r.eps2.value > 0.0;
    prev = r.eps2.value;
  }
  EXPECT_TRUE(positive);
}

TEST(Corollary3, ZeroNuMatchesCorollary1SecondStage) {
  const SrProblem p = testing::binary_sr(0.3);
  const double l2 = std::log(9.0);
  const LagrangeTriple tr{0.0, 0.0, l2};
  const SrRun run = run_sr_blahut(p, tr, tight());
  const Certificate c = certificate_from_state(p, tr, run.final_state);
  const SingleStageSolution s2 = solve_at_slope(p.second_stage(), l2, tight());
  BlockSpec b;
  b.n = 25;
  b.gamma1 = b.gamma2 = BlockSpec::default_gamma(25);
  for (double lm : {3.0, 6.0, 9.0}) {
    b.log_m1 = b.log_m2 = lm;
    const BoundResult r3 = corollary3(p, c, 0.0, s2.distortion, b);
    const BoundResult r1 = corollary1(p.px(), s2.tilted, s2.tilted, b);
    EXPECT_NEAR(r3.eps2.probability, r1.eps2.probability, 1e-9);
    EXPECT_NEAR(r3.eps2.raw, r1.eps2.raw - std::exp(-b.gamma1), 1e-9);
  }
}

TEST(NormalApproximation, Examples) {
  const SingleStageSolution s = solve_at_distortion(testing::binary_hamming(0.8), 0.1, tight());
  const Pmf px({0.2, 0.8});
  const NormalApproximation half = normal_approximation(px, s.tilted.values, 50, 0.5);
  EXPECT_NEAR(half.log_m, 50 * s.rate, 1e-9);
  EXPECT_EQ(half.q_inverse, 0.0);

  const NormalApproximation a = normal_approximation(px, s.tilted.values, 100, 0.1);
  EXPECT_NEAR(a.log_m, 24.63837584986935, 1e-6);
  // exact-convolution crossing of the first-order bound at epsilon = 0.1
  EXPECT_NEAR(a.log_m, 21.24454099540521, 0.05 * 100);

  const SingleStageSolution u = solve_at_distortion(testing::binary_hamming(0.5), 0.1, tight());
  EXPECT_THROW(normal_approximation(Pmf::uniform(2), u.tilted.values, 10, 0.1), ZeroVariance);
  EXPECT_THROW(normal_approximation(px, s.tilted.values, 10, 1.0), OutOfRange);
}

}  // namespace
}  // namespace refine
