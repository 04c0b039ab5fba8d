// SPDX-License-Identifier: Apache-2.0
#include "refine/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "refine/errors.hpp"

namespace refine {

void GaussParams::validate() const {
  for (double v : {source_var, s1, s21}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError("gaussian: variances must be positive and finite");
    }
  }
  if (!std::isfinite(c)) throw ValidationError("gaussian: gain must be finite");
}

double gauss_m(double a, double t) {
  return std::exp(-a * t / (1.0 + 2.0 * t)) / std::sqrt(1.0 + 2.0 * t);
}

GaussStep gaussian_sr_step(const GaussParams& p, const LagrangeTriple& triple) {
  p.validate();
  triple.validate();
  const double nu = triple.nu1;
  const double l1 = triple.lambda1;
  const double l2 = triple.lambda2;

  // beta2(x|y1) = E exp(-l2 (x - Y2)^2), Y2 ~ N(c y1, s21)
  //            = (1 + 2 t2)^(-1/2) exp(-k2 (x - c y1)^2).
  const double t2 = l2 * p.s21;
  const double k2 = l2 / (1.0 + 2.0 * t2);
  // beta1(x) = (1 + 2 t2)^(-1/(2(1+nu))) E exp(-(A Y1^2 - 2 B x Y1 + C x^2)), Y1 ~ N(0, s1).
  const double a = (k2 * p.c * p.c + l1) / (1.0 + nu);
  const double b = (k2 * p.c + l1) / (1.0 + nu);
  const double cq = (k2 + l1) / (1.0 + nu);
  const double t1 = a * p.s1;
  const double e = cq - 2.0 * b * b * p.s1 / (1.0 + 2.0 * t1);

  GaussStep out;
  out.t1 = t1;
  out.t2 = t2;
  out.f_value = 0.5 * std::log1p(2.0 * t2) +
                (1.0 + nu) * (0.5 * std::log1p(2.0 * t1) + e * p.source_var);

  // Y1 | X = x: precision 1/s1 + 2A, mean 2 B s1 x / (1 + 2 t1).
  out.y1_gain = 2.0 * b * p.s1 / (1.0 + 2.0 * t1);
  out.y1_var = p.s1 / (1.0 + 2.0 * t1);
  const double s1_new = out.y1_gain * out.y1_gain * p.source_var + out.y1_var;
  out.post_gain = out.y1_gain * p.source_var / s1_new;
  out.post_var = p.source_var * out.y1_var / s1_new;

  // Y2 | X, Y1: mean (c y1 + 2 t2 x) / (1 + 2 t2), variance s21 / (1 + 2 t2).
  out.y2_var_given_xy1 = p.s21 / (1.0 + 2.0 * t2);
  const double w = 2.0 * t2 / (1.0 + 2.0 * t2);
  out.next.source_var = p.source_var;
  out.next.s1 = s1_new;
  out.next.c = p.c / (1.0 + 2.0 * t2) + w * out.post_gain;
  out.next.s21 = w * w * out.post_var + out.y2_var_given_xy1;
  return out;
}

GaussRun run_gaussian_sr(const LagrangeTriple& triple, std::size_t iterations,
                         const GaussParams& init) {
  if (iterations < 1) throw ValidationError("gaussian: iterations must be at least 1");
  GaussRun run;
  GaussParams p = init;
  for (std::size_t k = 0; k < iterations; ++k) {
    GaussStep s = gaussian_sr_step(p, triple);
    p = s.next;
    run.steps.push_back(s);
  }
  run.f_value = run.steps.back().f_value;
  return run;
}

Fig3Result reproduce_fig3(const std::vector<double>& lambda2_sweep, std::size_t iterations,
                          const std::vector<double>& d2_grid, double nu1, double lambda1) {
  if (lambda2_sweep.empty()) throw InsufficientSlopes("fig3: empty slope sweep");
  if (!(lambda1 > 0.0) || !(nu1 > 0.0)) {
    throw ValidationError("fig3: nu1 and lambda1 must be positive");
  }
  const double d1 = nu1 / (2.0 * lambda1);
  const double r1 = 0.5 * std::log(1.0 / d1);

  Fig3Result out;
  for (double l2 : lambda2_sweep) {
    const LagrangeTriple t{nu1, lambda1, l2};
    const GaussRun run = run_gaussian_sr(t, iterations);
    SrDualPoint dp;
    dp.triple = t;
    dp.f_value = run.f_value;
    dp.iterations_used = iterations;
    dp.converged = false;
    out.duals.push_back(dp);
  }
  const SrSurface surface = sr_envelope(out.duals);
  for (double d2 : d2_grid) {
    Fig3Point pt;
    pt.d2 = d2;
    pt.estimate = surface.evaluate(d1, d2, r1);
    pt.analytic = d2 >= 1.0 ? 0.0 : 0.5 * std::log(1.0 / d2);
    pt.abs_error = std::abs(pt.estimate - pt.analytic);
    out.max_abs_error = std::max(out.max_abs_error, pt.abs_error);
    out.points.push_back(pt);
  }
  return out;
}

}  // namespace refine
