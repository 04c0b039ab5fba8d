// SPDX-License-Identifier: Apache-2.0
#include "refine/successive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

namespace refine {
namespace {

void check_matrix(const Matrix& m, std::size_t rows, const char* name) {
  if (m.rows() != rows) {
    throw ValidationError(std::string("problem: ") + name + " has " + std::to_string(m.rows()) +
                          " rows but the source has " + std::to_string(rows) + " symbols");
  }
  if (m.cols() == 0) throw ValidationError(std::string("problem: ") + name + " has no columns");
  for (double v : m.data()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError(std::string("problem: ") + name +
                            " entries must be finite and nonnegative");
    }
  }
}

}  // namespace

SrProblem::SrProblem(Pmf px, Matrix d1, Matrix d2)
    : px_(std::move(px)), d1_(std::move(d1)), d2_(std::move(d2)) {
  check_matrix(d1_, px_.size(), "d1");
  check_matrix(d2_, px_.size(), "d2");
}

void LagrangeTriple::validate() const {
  for (double v : {nu1, lambda1, lambda2}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError("slopes (nu1, lambda1, lambda2) must be finite and nonnegative");
    }
  }
}

std::vector<double> SrState::beta1() const {
  std::vector<double> out(betas.log_beta1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(betas.log_beta1[i]);
  return out;
}

Matrix SrState::beta2() const {
  Matrix out = betas.log_beta2;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (double& v : out.row(r)) v = std::exp(v);
  }
  return out;
}

SrState initial_sr_state(const SrProblem& problem, const Pmf& init1, const Kernel& init2) {
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  if (init1.size() != n1) throw ValidationError("sr: initial P_Y1 has the wrong size");
  if (init2.input_size() != n1 || init2.output_size() != n2) {
    throw ValidationError("sr: initial P_Y2|Y1 has the wrong shape");
  }
  std::vector<double> k2(nx * n1 * n2);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      const auto r = init2.row(y1);
      std::copy(r.begin(), r.end(), k2.begin() + static_cast<std::ptrdiff_t>((x * n1 + y1) * n2));
    }
  }
  SrState s;
  s.iteration = 0;
  s.py1 = init1;
  s.py2_given_y1 = init2;
  s.k1 = Kernel::constant_rows(nx, init1);
  s.k2 = Kernel(nx * n1, n2, std::move(k2));
  s.f_value = std::numeric_limits<double>::infinity();
  return s;
}

Betas update_betas(const SrProblem& problem, const LagrangeTriple& triple, const Pmf& py1,
                   const Kernel& py2_given_y1) {
  triple.validate();
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  if (py1.size() != n1 || py2_given_y1.input_size() != n1 || py2_given_y1.output_size() != n2) {
    throw ValidationError("sr: marginal shapes do not match the problem");
  }
  const double a = 1.0 / (1.0 + triple.nu1);

  Betas b;
  b.log_beta2 = Matrix(nx, n1);
  b.log_beta1.assign(nx, 0.0);
  std::vector<double> terms2(n2);
  std::vector<double> terms1(n1);
  for (std::size_t x = 0; x < nx; ++x) {
    const auto d1row = problem.d1().row(x);
    const auto d2row = problem.d2().row(x);
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      const auto cond = py2_given_y1.row(y1);
      for (std::size_t y2 = 0; y2 < n2; ++y2) {
        terms2[y2] = cond[y2] > 0.0 ? std::log(cond[y2]) - triple.lambda2 * d2row[y2] : kNegInf;
      }
      // lambda2 = 0: beta2 = sum of a pmf row, exactly one
      b.log_beta2(x, y1) = triple.lambda2 == 0.0 ? 0.0 : log_sum_exp(terms2);
    }
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      terms1[y1] = py1[y1] > 0.0
                       ? std::log(py1[y1]) + a * (b.log_beta2(x, y1) - triple.lambda1 * d1row[y1])
                       : kNegInf;
    }
    b.log_beta1[x] = triple.lambda1 == 0.0 && triple.lambda2 == 0.0 ? 0.0 : log_sum_exp(terms1);
  }
  return b;
}

Betas update_betas(const SrProblem& problem, const LagrangeTriple& triple, const SrState& state) {
  return update_betas(problem, triple, state.py1, state.py2_given_y1);
}

SrState update_kernels(const SrProblem& problem, const LagrangeTriple& triple,
                       const SrState& state, const Betas& betas) {
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  const Pmf& px = problem.px();
  const double a = 1.0 / (1.0 + triple.nu1);

  double f_value = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    if (px[x] == 0.0) continue;
    if (!std::isfinite(betas.log_beta1[x])) {
      throw DegenerateMarginal("sr: beta1(x) underflowed; slopes too large for this grid");
    }
    f_value -= px[x] * betas.log_beta1[x];
  }
  f_value *= 1.0 + triple.nu1;

  std::vector<double> k1(nx * n1, 0.0);
  std::vector<double> k2(nx * n1 * n2, 0.0);
  std::vector<double> marg1(n1, 0.0);
  std::vector<double> joint(n1 * n2, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    const auto d1row = problem.d1().row(x);
    const auto d2row = problem.d2().row(x);
    double* k1row = k1.data() + x * n1;
    const bool live = std::isfinite(betas.log_beta1[x]);
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      if (!live) {
        k1row[y1] = state.py1[y1];
      } else if (state.py1[y1] > 0.0) {
        k1row[y1] = std::exp(std::log(state.py1[y1]) +
                             a * (betas.log_beta2(x, y1) - triple.lambda1 * d1row[y1]) -
                             betas.log_beta1[x]);
      }
      double* k2row = k2.data() + (x * n1 + y1) * n2;
      const auto cond = state.py2_given_y1.row(y1);
      const double lb2 = betas.log_beta2(x, y1);
      for (std::size_t y2 = 0; y2 < n2; ++y2) {
        if (!std::isfinite(lb2)) {
          k2row[y2] = cond[y2];
        } else if (cond[y2] > 0.0) {
          k2row[y2] = std::exp(std::log(cond[y2]) - triple.lambda2 * d2row[y2] - lb2);
        }
      }
      if (px[x] == 0.0) continue;
      const double w = px[x] * k1row[y1];
      marg1[y1] += w;
      for (std::size_t y2 = 0; y2 < n2; ++y2) joint[y1 * n2 + y2] += w * k2row[y2];
    }
  }

  for (double& m : marg1) {
    if (m < kMassFloor) m = 0.0;
  }
  Pmf py1 = Pmf::from_weights(marg1);
  std::vector<double> cond(n1 * n2, 0.0);
  for (std::size_t y1 = 0; y1 < n1; ++y1) {
    double* row = cond.data() + y1 * n2;
    double total = 0.0;
    for (std::size_t y2 = 0; y2 < n2; ++y2) {
      double j = joint[y1 * n2 + y2];
      if (j < kMassFloor) j = 0.0;
      row[y2] = j;
      total += j;
    }
    if (py1[y1] == 0.0 || !(total > 0.0)) {
      // Dropped first-stage symbol: keep its previous conditional row.
      const auto prev = state.py2_given_y1.row(y1);
      std::copy(prev.begin(), prev.end(), row);
    } else {
      for (std::size_t y2 = 0; y2 < n2; ++y2) row[y2] /= total;
    }
  }

  SrState next;
  next.iteration = state.iteration + 1;
  next.py1 = std::move(py1);
  next.py2_given_y1 = Kernel(n1, n2, std::move(cond));
  next.k1 = Kernel(nx, n1, std::move(k1));
  next.k2 = Kernel(nx * n1, n2, std::move(k2));
  next.betas = betas;
  next.f_value = f_value;
  return next;
}

SrState sr_step(const SrProblem& problem, const LagrangeTriple& triple, const SrState& state) {
  return update_kernels(problem, triple, state, update_betas(problem, triple, state));
}

namespace {

double sr_stopping_functional(const SrState& cur, const SrState& prev, double nu1) {
  double sup = kNegInf;
  const std::size_t n1 = cur.py1.size();
  const std::size_t n2 = cur.py2_given_y1.output_size();
  for (std::size_t y1 = 0; y1 < n1; ++y1) {
    if (cur.py1[y1] == 0.0) continue;
    const double r1 = std::log(cur.py1[y1]) - std::log(prev.py1[y1]);
    for (std::size_t y2 = 0; y2 < n2; ++y2) {
      const double c = cur.py2_given_y1(y1, y2);
      if (c == 0.0) continue;
      const double r2 = std::log(c) - std::log(prev.py2_given_y1(y1, y2));
      sup = std::max(sup, (1.0 + nu1) * r1 + r2);
    }
  }
  return sup;
}

// Joint kernel X -> (Y1, Y2) flattened as y1 * |Y2| + y2.
Kernel joint_kernel(const SrProblem& problem, const SrState& state) {
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  std::vector<double> data(nx * n1 * n2);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      for (std::size_t y2 = 0; y2 < n2; ++y2) {
        data[x * n1 * n2 + y1 * n2 + y2] = state.k1(x, y1) * state.k2(x * n1 + y1, y2);
      }
    }
  }
  return Kernel(nx, n1 * n2, std::move(data));
}

}  // namespace

SrOperatingPoint operating_point(const SrProblem& problem, const SrState& state) {
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  const Pmf& px = problem.px();
  SrOperatingPoint op;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      const double w = px[x] * state.k1(x, y1);
      op.d1 += w * problem.d1()(x, y1);
      for (std::size_t y2 = 0; y2 < n2; ++y2) {
        op.d2 += w * state.k2(x * n1 + y1, y2) * problem.d2()(x, y2);
      }
    }
  }
  op.r1 = mutual_information(px, state.k1);
  op.r2 = mutual_information(px, joint_kernel(problem, state));
  return op;
}

SrRun run_sr_blahut(const SrProblem& problem, const LagrangeTriple& triple, const Pmf& init1,
                    const Kernel& init2, const BlahutOptions& options) {
  triple.validate();
  if (options.max_iters < 1) throw ValidationError("sr: max_iters must be at least 1");
  if (!(options.delta > 0.0)) throw ValidationError("sr: delta must be positive");
  for (double p : init1.probs()) {
    if (p == 0.0) throw ValidationError("sr: initial P_Y1 must have full support");
  }
  for (double p : init2.matrix().data()) {
    if (p == 0.0) throw ValidationError("sr: initial P_Y2|Y1 rows must have full support");
  }

  SrRun run;
  SrState state = initial_sr_state(problem, init1, init2);
  double gap = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t k = 1; k <= options.max_iters; ++k) {
    SrState next = sr_step(problem, triple, state);
    gap = sr_stopping_functional(next, state, triple.nu1);
    run.f_trace.push_back(next.f_value);
    state = std::move(next);
    if (options.keep_states) run.trace.push_back(state);
    if (gap <= options.delta) {
      converged = true;
      break;
    }
  }

  const SrOperatingPoint op = operating_point(problem, state);
  SrDualPoint& dual = run.dual;
  dual.triple = triple;
  dual.f_value = state.f_value;
  dual.converged = converged;
  dual.iterations_used = state.iteration;
  dual.gap_bound = gap;
  dual.d1 = op.d1;
  dual.d2 = op.d2;
  dual.r1 = op.r1;
  run.final_state = std::move(state);
  return run;
}

SrRun run_sr_blahut(const SrProblem& problem, const LagrangeTriple& triple,
                    const BlahutOptions& options) {
  return run_sr_blahut(problem, triple, Pmf::uniform(problem.num_y1()),
                       Kernel::uniform(problem.num_y1(), problem.num_y2()), options);
}

double SrSurface::evaluate(double d1, double d2, double r1) const {
  double best = 0.0;
  for (const Line& l : lines_) {
    best = std::max(best, l.f_value - l.triple.nu1 * r1 - l.triple.lambda1 * d1 -
                              l.triple.lambda2 * d2);
  }
  return best;
}

OmegaReport SrSurface::in_omega(double d1, double d2, double r1, double eps) const {
  OmegaReport r;
  const double v = evaluate(d1, d2, r1);
  r.finite = std::isfinite(v);
  r.decreasing_in_d1 = evaluate(d1 - eps, d2, r1) > evaluate(d1 + eps, d2, r1);
  r.decreasing_in_d2 = evaluate(d1, d2 - eps, r1) > evaluate(d1, d2 + eps, r1);
  r.decreasing_in_r1 = evaluate(d1, d2, r1 - eps) > evaluate(d1, d2, r1 + eps);
  r.inside = r.finite && r.decreasing_in_d1 && r.decreasing_in_d2 && r.decreasing_in_r1;
  return r;
}

SrSurface sr_envelope(std::span<const SrDualPoint> duals) {
  if (duals.empty()) throw InsufficientSlopes("surface: need at least one dual point");
  std::vector<SrSurface::Line> lines;
  lines.reserve(duals.size());
  for (const SrDualPoint& p : duals) lines.push_back({p.triple, p.f_value});
  return SrSurface(std::move(lines));
}

double SigmaValues::max_sigma1() const {
  return *std::max_element(sigma1.begin(), sigma1.end());
}

double SigmaValues::max_sigma2() const {
  return *std::max_element(sigma2.data().begin(), sigma2.data().end());
}

SigmaValues sigma_values(const SrProblem& problem, const LagrangeTriple& triple,
                         const Betas& betas) {
  triple.validate();
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  if (betas.log_beta1.size() != nx || betas.log_beta2.rows() != nx ||
      betas.log_beta2.cols() != n1) {
    throw ValidationError("sigma: certificate shape does not match the problem");
  }
  const Pmf& px = problem.px();
  const double a = 1.0 / (1.0 + triple.nu1);
  const double b = triple.nu1 / (1.0 + triple.nu1);

  SigmaValues s;
  s.sigma1.assign(n1, 0.0);
  s.sigma2 = Matrix(n1, n2);
  for (std::size_t x = 0; x < nx; ++x) {
    if (px[x] == 0.0) continue;
    const double lb1 = betas.log_beta1[x];
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      const double lb2 = betas.log_beta2(x, y1);
      const double e1 = -a * triple.lambda1 * problem.d1()(x, y1);
      s.sigma1[y1] += px[x] * std::exp(e1 + a * lb2 - lb1);
      for (std::size_t y2 = 0; y2 < n2; ++y2) {
        s.sigma2(y1, y2) +=
            px[x] * std::exp(e1 - triple.lambda2 * problem.d2()(x, y2) - lb1 - b * lb2);
      }
    }
  }
  return s;
}

SrOptimalityReport verify_sr_optimality(const SrProblem& problem, const LagrangeTriple& triple,
                                        const SrState& final_state, double delta) {
  const Betas betas = update_betas(problem, triple, final_state);
  SrOptimalityReport r;
  r.sigma = sigma_values(problem, triple, betas);
  r.tol = 10.0 * delta;
  r.max_sigma1 = r.sigma.max_sigma1();
  r.max_sigma2_excess = kNegInf;
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  for (std::size_t y1 = 0; y1 < n1; ++y1) {
    if (final_state.py1[y1] == 0.0) continue;
    const double s1 = r.sigma.sigma1[y1];
    r.max_sigma1_gap = std::max(r.max_sigma1_gap, std::abs(s1 - 1.0));
    for (std::size_t y2 = 0; y2 < n2; ++y2) {
      const double s2 = r.sigma.sigma2(y1, y2);
      r.max_sigma2_excess = std::max(r.max_sigma2_excess, s2 - s1);
      if (final_state.py2_given_y1(y1, y2) > 0.0) {
        r.max_sigma2_gap = std::max(r.max_sigma2_gap, std::abs(s2 - s1));
      }
    }
  }
  r.passes = r.max_sigma1 <= 1.0 + r.tol && r.max_sigma2_excess <= r.tol &&
             r.max_sigma1_gap <= r.tol && r.max_sigma2_gap <= r.tol;
  return r;
}

double SrTiltedInfo::mean(const Pmf& px) const {
  double m = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) m += px[x] * values[x];
  }
  return m;
}

double SrTiltedInfo::variance(const Pmf& px) const {
  const double m = mean(px);
  double v = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) v += px[x] * (values[x] - m) * (values[x] - m);
  }
  return v;
}

SrTiltedInfo sr_tilted_information(const SrDualPoint& dual, const SrState& final_state, double d1,
                                   double d2, double r1) {
  if (!dual.converged) throw NotConverged("sr tilted information: dual did not converge");
  const LagrangeTriple& t = dual.triple;
  const double shift = t.lambda1 * d1 + t.lambda2 * d2 + t.nu1 * r1;
  SrTiltedInfo out;
  out.values.resize(final_state.betas.log_beta1.size());
  for (std::size_t x = 0; x < out.values.size(); ++x) {
    out.values[x] = -(1.0 + t.nu1) * final_state.betas.log_beta1[x] - shift;
  }
  return out;
}

double certificate_value(const Pmf& px, const Certificate& cert, double d1, double d2,
                         double r1) {
  double e = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) e -= px[x] * cert.betas.log_beta1[x];
  }
  const LagrangeTriple& t = cert.triple;
  return (1.0 + t.nu1) * e - t.lambda1 * d1 - t.lambda2 * d2 - t.nu1 * r1;
}

Certificate certificate_from_state(const SrProblem& problem, const LagrangeTriple& triple,
                                   const SrState& state) {
  Certificate c{triple, update_betas(problem, triple, state)};
  const SigmaValues s = sigma_values(problem, triple, c.betas);
  const double scale = std::max({1.0, s.max_sigma1(), s.max_sigma2()});
  // Scaling beta1 by c divides both Sigma functions by c.
  const double shift = std::log(scale);
  for (double& v : c.betas.log_beta1) v += shift;
  return c;
}

namespace {

// Solves the symmetric system a x = b in place by Gauss-Jordan with partial
// pivoting. Returns false when a pivot is negligible.
bool solve_dense(std::vector<double>& a, std::vector<double>& b) {
  const std::size_t n = b.size();
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i * n + i]));
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    }
    if (!(std::abs(a[piv * n + c]) > 1e-12 * scale)) return false;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r * n + c] / a[c * n + c];
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i * n + i];
  return true;
}

// Reverse channel W(y1|y2), rows y2, with P_{X Y1}(x, y1) ~ sum_y2 P_{X Y2}(x, y2) W(y1|y2).
using Rows = std::vector<std::vector<double>>;

double reverse_fit_error(const Rows& joint1, const Rows& joint2, const Matrix& w) {
  double err = 0.0;
  for (std::size_t i = 0; i < joint1.size(); ++i) {
    for (std::size_t x = 0; x < joint1[i].size(); ++x) {
      double m = 0.0;
      for (std::size_t j = 0; j < joint2.size(); ++j) m += joint2[j][x] * w(j, i);
      err += std::abs(joint1[i][x] - m);
    }
  }
  return 0.5 * err;
}

// Per-column least squares, clipped and row-normalized. Exact when the
// channel sits on the boundary of the simplex, where EM crawls.
bool reverse_least_squares(const Rows& joint1, const Rows& joint2, Matrix& w) {
  const std::size_t n1 = joint1.size();
  const std::size_t n2 = joint2.size();
  const std::size_t nx = joint1.front().size();
  std::vector<double> gram(n2 * n2);
  for (std::size_t i = 0; i < n2; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      double g = 0.0;
      for (std::size_t x = 0; x < nx; ++x) g += joint2[i][x] * joint2[j][x];
      gram[i * n2 + j] = g;
    }
  }
  w = Matrix(n2, n1);
  for (std::size_t c = 0; c < n1; ++c) {
    std::vector<double> a = gram;
    std::vector<double> rhs(n2);
    for (std::size_t j = 0; j < n2; ++j) {
      double v = 0.0;
      for (std::size_t x = 0; x < nx; ++x) v += joint2[j][x] * joint1[c][x];
      rhs[j] = v;
    }
    if (!solve_dense(a, rhs)) return false;
    for (std::size_t j = 0; j < n2; ++j) w(j, c) = std::max(0.0, rhs[j]);
  }
  for (std::size_t j = 0; j < n2; ++j) {
    double total = 0.0;
    for (double v : w.row(j)) total += v;
    if (!(total > 0.0)) return false;
    for (double& v : w.row(j)) v /= total;
  }
  return true;
}

// EM on the reverse channel; monotone in D(P_{X Y1} || model).
Matrix reverse_em(const Rows& joint1, const Rows& joint2, std::size_t max_iters, double tol) {
  const std::size_t n1 = joint1.size();
  const std::size_t n2 = joint2.size();
  const std::size_t nx = joint1.front().size();
  Matrix w(n2, n1, 1.0 / static_cast<double>(n1));
  Matrix ratio(n1, nx);
  Matrix next(n2, n1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t x = 0; x < nx; ++x) {
        double m = 0.0;
        for (std::size_t j = 0; j < n2; ++j) m += joint2[j][x] * w(j, i);
        ratio(i, x) = m > 0.0 ? joint1[i][x] / m : 0.0;
      }
    }
    double change = 0.0;
    for (std::size_t j = 0; j < n2; ++j) {
      double total = 0.0;
      for (std::size_t i = 0; i < n1; ++i) {
        double r = 0.0;
        for (std::size_t x = 0; x < nx; ++x) r += joint2[j][x] * ratio(i, x);
        next(j, i) = w(j, i) * r;
        total += next(j, i);
      }
      for (std::size_t i = 0; i < n1; ++i) {
        const double v = total > 0.0 ? next(j, i) / total : w(j, i);
        change = std::max(change, std::abs(v - w(j, i)));
        w(j, i) = v;
      }
    }
    if (change < tol) break;
  }
  return w;
}

Matrix fit_reverse_channel(const Rows& joint1, const Rows& joint2) {
  Matrix ls;
  const bool have_ls = reverse_least_squares(joint1, joint2, ls);
  const double ls_err = have_ls ? reverse_fit_error(joint1, joint2, ls)
                                : std::numeric_limits<double>::infinity();
  if (ls_err <= 1e-12) return ls;
  Matrix em = reverse_em(joint1, joint2, 5000, 1e-12);
  return reverse_fit_error(joint1, joint2, em) < ls_err ? em : ls;
}

}  // namespace

RefinableCertificate refinable_construction(const SrProblem& problem,
                                            const SingleStageSolution& stage1,
                                            const SingleStageSolution& stage2, double nu1,
                                            double tol) {
  if (!(nu1 > 0.0) || !std::isfinite(nu1)) {
    throw ValidationError("refinable construction: nu1 must be positive");
  }
  const std::size_t nx = problem.num_inputs();
  const std::size_t n1 = problem.num_y1();
  const std::size_t n2 = problem.num_y2();
  const auto& alpha1 = stage1.tilted.alpha_star;
  const auto& alpha2 = stage2.tilted.alpha_star;
  if (alpha1.size() != nx || alpha2.size() != nx ||
      stage1.run.final_state.py.size() != n1 || stage2.run.final_state.py.size() != n2) {
    throw ValidationError("refinable construction: stage solutions do not match the problem");
  }
  const double ls1 = stage1.lambda;
  const double ls2 = stage2.lambda;
  const Pmf& px = problem.px();

  RefinableCertificate out;
  Certificate& cert = out.certificate;
  cert.triple = {nu1, nu1 * ls1, ls2};
  cert.betas.log_beta1.resize(nx);
  cert.betas.log_beta2 = Matrix(nx, n1);
  const double a = 1.0 / (1.0 + nu1);
  for (std::size_t x = 0; x < nx; ++x) {
    const double la1 = std::log(alpha1[x]);
    const double la2 = std::log(alpha2[x]);
    cert.betas.log_beta1[x] = (1.0 - a) * la1 + a * la2;
    for (std::size_t y1 = 0; y1 < n1; ++y1) {
      cert.betas.log_beta2(x, y1) = -ls1 * problem.d1()(x, y1) - la1 + la2;
    }
  }
  out.sigma = sigma_values(problem, cert.triple, cert.betas);
  out.d1 = stage1.distortion;
  out.d2 = stage2.distortion;
  out.r1 = stage1.rate;
  out.r2 = stage2.rate;
  out.value = certificate_value(px, cert, out.d1, out.d2, out.r1);

  // Backward channels of the two single-stage optima.
  const Pmf& py1 = stage1.run.final_state.py;
  const Pmf& py2 = stage2.run.final_state.py;
  std::vector<std::size_t> supp1;
  std::vector<std::size_t> supp2;
  for (std::size_t y = 0; y < n1; ++y) {
    if (py1[y] > 0.0) supp1.push_back(y);
  }
  for (std::size_t y = 0; y < n2; ++y) {
    if (py2[y] > 0.0) supp2.push_back(y);
  }
  auto backward = [&](const Matrix& d, std::size_t y, double lambda,
                      const std::vector<double>& alpha) {
    std::vector<double> p(nx, 0.0);
    double total = 0.0;
    for (std::size_t x = 0; x < nx; ++x) {
      if (px[x] == 0.0) continue;
      p[x] = px[x] * std::exp(-lambda * d(x, y) - std::log(alpha[x]));
      total += p[x];
    }
    for (double& v : p) v /= total;
    return p;
  };
  std::vector<std::vector<double>> post1;
  std::vector<std::vector<double>> post2;
  for (std::size_t y : supp1) post1.push_back(backward(problem.d1(), y, ls1, alpha1));
  for (std::size_t y : supp2) post2.push_back(backward(problem.d2(), y, ls2, alpha2));

  // Markov chain X - Y2 - Y1: fit P_{Y1|Y2}, then read off P_{Y2|Y1} by Bayes.
  Rows joint1;
  Rows joint2;
  for (std::size_t i = 0; i < supp1.size(); ++i) {
    joint1.push_back(post1[i]);
    for (double& v : joint1.back()) v *= py1[supp1[i]];
  }
  for (std::size_t j = 0; j < supp2.size(); ++j) {
    joint2.push_back(post2[j]);
    for (double& v : joint2.back()) v *= py2[supp2[j]];
  }
  Matrix w(supp1.size(), supp2.size());
  if (!supp1.empty() && !supp2.empty()) {
    const Matrix rev = fit_reverse_channel(joint1, joint2);
    for (std::size_t i = 0; i < supp1.size(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < supp2.size(); ++j) {
        w(i, j) = py2[supp2[j]] * rev(j, i);
        total += w(i, j);
      }
      for (std::size_t j = 0; j < supp2.size(); ++j) {
        w(i, j) = total > 0.0 ? w(i, j) / total : 1.0 / static_cast<double>(supp2.size());
      }
    }
  }

  MarkovReport& mk = out.markov;
  mk.tol = tol;
  mk.py1 = py1;
  std::vector<double> mixing(n1 * n2, 0.0);
  std::vector<double> y2_marg(n2, 0.0);
  for (std::size_t i = 0; i < n1; ++i) mixing[i * n2 + (supp2.empty() ? 0 : supp2.front())] = 1.0;
  for (std::size_t i = 0; i < supp1.size(); ++i) {
    const std::size_t y1 = supp1[i];
    std::fill(mixing.begin() + static_cast<std::ptrdiff_t>(y1 * n2),
              mixing.begin() + static_cast<std::ptrdiff_t>((y1 + 1) * n2), 0.0);
    for (std::size_t j = 0; j < supp2.size(); ++j) {
      mixing[y1 * n2 + supp2[j]] = w(i, j);
      y2_marg[supp2[j]] += py1[y1] * w(i, j);
    }
    for (std::size_t x = 0; x < nx; ++x) {
      if (px[x] == 0.0) continue;
      double m = 0.0;
      double ratio = 0.0;
      for (std::size_t j = 0; j < supp2.size(); ++j) {
        m += w(i, j) * post2[j][x];
        ratio += w(i, j) * std::exp(-ls2 * problem.d2()(x, supp2[j])) / alpha2[x];
      }
      mk.mixture_residual += 0.5 * py1[y1] * std::abs(post1[i][x] - m);
      const double target = std::exp(-ls1 * problem.d1()(x, y1)) / alpha1[x];
      mk.backward_residual = std::max(mk.backward_residual, std::abs(ratio - target));
    }
  }
  for (std::size_t y = 0; y < n2; ++y) {
    mk.y2_marginal_residual += 0.5 * std::abs(y2_marg[y] - py2[y]);
  }
  mk.mixing = Kernel(n1, n2, std::move(mixing));
  mk.passes = mk.mixture_residual <= tol && mk.y2_marginal_residual <= tol;

  if (out.sigma.max_sigma1() > 1.0 + tol || out.sigma.max_sigma2() > 1.0 + tol) {
    throw ConstraintViolated("refinable construction: Sigma constraint exceeds 1 + tol",
                             std::move(out));
  }
  if (!mk.passes) {
    throw ConstraintViolated(
        "refinable construction: no joint law realizes both backward channels; "
        "not successively refinable at these distortions",
        std::move(out));
  }
  return out;
}

RefinableCertificate refinable_construction(const SrProblem& problem, double d1, double d2,
                                            double nu1, const BlahutOptions& options,
                                            double tol) {
  if (!(nu1 > 0.0) || !std::isfinite(nu1)) {
    throw ValidationError("refinable construction: nu1 must be positive");
  }
  const SingleStageSolution s1 = solve_at_distortion(problem.first_stage(), d1, options);
  const SingleStageSolution s2 = solve_at_distortion(problem.second_stage(), d2, options);
  return refinable_construction(problem, s1, s2, nu1, tol);
}

}  // namespace refine
