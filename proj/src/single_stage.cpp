// SPDX-License-Identifier: Apache-2.0
#include "refine/single_stage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "refine/errors.hpp"

namespace refine {

RdProblem::RdProblem(Pmf px, Matrix distortion)
    : px_(std::move(px)), distortion_(std::move(distortion)) {
  if (distortion_.rows() != px_.size()) {
    throw ValidationError("problem: distortion matrix has " + std::to_string(distortion_.rows()) +
                          " rows but the source has " + std::to_string(px_.size()) + " symbols");
  }
  if (distortion_.cols() == 0) throw ValidationError("problem: empty reproduction alphabet");
  for (double v : distortion_.data()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError("problem: distortion entries must be finite and nonnegative");
    }
  }
}

BlahutState initial_state(const RdProblem& problem, double lambda, const Pmf& init) {
  if (init.size() != problem.num_outputs()) {
    throw ValidationError("blahut: initial marginal has the wrong size");
  }
  return BlahutState{0, init, Kernel::constant_rows(problem.num_inputs(), init),
                     std::numeric_limits<double>::infinity(), lambda};
}

std::vector<double> log_sigma_bar(const RdProblem& problem, double lambda, const Pmf& py) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("slope must be finite and nonnegative");
  }
  if (py.size() != problem.num_outputs()) throw ValidationError("sigma_bar: marginal size");
  const std::size_t ny = problem.num_outputs();
  std::vector<double> log_py(ny);
  for (std::size_t y = 0; y < ny; ++y) log_py[y] = py.log(y);

  std::vector<double> out(problem.num_inputs(), 0.0);
  if (lambda == 0.0) return out;  // E[1] = 1 for a normalized py
  std::vector<double> terms(ny);
  for (std::size_t x = 0; x < out.size(); ++x) {
    const auto drow = problem.distortion().row(x);
    for (std::size_t y = 0; y < ny; ++y) {
      terms[y] = log_py[y] == kNegInf ? kNegInf : log_py[y] - lambda * drow[y];
    }
    out[x] = log_sum_exp(terms);
  }
  return out;
}

std::vector<double> sigma_bar(const RdProblem& problem, double lambda, const Pmf& py) {
  auto out = log_sigma_bar(problem, lambda, py);
  for (double& v : out) v = std::exp(v);
  return out;
}

BlahutState blahut_step(const RdProblem& problem, const BlahutState& state) {
  const double lambda = state.lambda;
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("slope must be finite and nonnegative");
  }
  const std::size_t nx = problem.num_inputs();
  const std::size_t ny = problem.num_outputs();
  if (state.py.size() != ny) throw ValidationError("blahut: marginal size");
  const Pmf& px = problem.px();
  std::vector<double> log_py(ny);
  for (std::size_t y = 0; y < ny; ++y) log_py[y] = state.py.log(y);

  // One pass per row: the tilt terms give both Sigma(x) and the kernel row.
  double f_value = 0.0;
  std::vector<double> kernel(nx * ny, 0.0);
  std::vector<double> marginal(ny, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    const auto drow = problem.distortion().row(x);
    double* krow = kernel.data() + x * ny;
    double top = kNegInf;
    for (std::size_t y = 0; y < ny; ++y) {
      krow[y] = log_py[y] == kNegInf ? kNegInf : log_py[y] - lambda * drow[y];
      top = std::max(top, krow[y]);
    }
    double sum = 0.0;
    if (std::isfinite(top)) {
      for (std::size_t y = 0; y < ny; ++y) {
        krow[y] = krow[y] == kNegInf ? 0.0 : std::exp(krow[y] - top);
        sum += krow[y];
      }
    }
    if (!std::isfinite(top) || !(sum > 0.0)) {
      if (px[x] > 0.0) {
        throw DegenerateMarginal("blahut: Sigma(x) underflowed; slope too large for this grid");
      }
      // Unreached source symbol: fall back to the prior.
      for (std::size_t y = 0; y < ny; ++y) krow[y] = state.py[y];
      continue;
    }
    const double log_sigma = lambda == 0.0 ? 0.0 : top + std::log(sum);
    f_value -= px[x] * log_sigma;
    for (std::size_t y = 0; y < ny; ++y) {
      krow[y] /= sum;
      marginal[y] += px[x] * krow[y];
    }
  }
  for (double& m : marginal) {
    if (m < kMassFloor) m = 0.0;
  }
  Pmf py = Pmf::from_weights(std::move(marginal));
  return BlahutState{state.iteration + 1, std::move(py), Kernel(nx, ny, std::move(kernel)),
                     f_value, lambda};
}

namespace {

double stopping_functional(const Pmf& current, const Pmf& previous) {
  double sup = kNegInf;
  for (std::size_t y = 0; y < current.size(); ++y) {
    if (current[y] == 0.0) continue;
    sup = std::max(sup, std::log(current[y]) - std::log(previous[y]));
  }
  return sup;
}

double expected_distortion(const RdProblem& problem, const Kernel& k) {
  double d = 0.0;
  for (std::size_t x = 0; x < problem.num_inputs(); ++x) {
    const double p = problem.px()[x];
    if (p == 0.0) continue;
    const auto r = k.row(x);
    const auto drow = problem.distortion().row(x);
    for (std::size_t y = 0; y < r.size(); ++y) d += p * r[y] * drow[y];
  }
  return d;
}

}  // namespace

BlahutRun run_blahut(const RdProblem& problem, double lambda, const Pmf& init,
                     const BlahutOptions& options) {
  if (options.max_iters < 1) throw ValidationError("blahut: max_iters must be at least 1");
  if (!(options.delta > 0.0)) throw ValidationError("blahut: delta must be positive");
  for (double p : init.probs()) {
    if (p == 0.0) throw ValidationError("blahut: initial marginal must have full support");
  }

  BlahutRun run;
  BlahutState state = initial_state(problem, lambda, init);
  double gap = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t k = 1; k <= options.max_iters; ++k) {
    BlahutState next = blahut_step(problem, state);
    gap = stopping_functional(next.py, state.py);
    run.f_trace.push_back(next.f_value);
    state = std::move(next);
    if (options.keep_states) run.trace.push_back(state);
    if (gap <= options.delta) {
      converged = true;
      break;
    }
  }

  DualPoint& dual = run.dual;
  dual.lambda = lambda;
  dual.f_value = state.f_value;
  dual.converged = converged;
  dual.iterations_used = state.iteration;
  dual.gap_bound = gap;
  dual.distortion = expected_distortion(problem, state.kernel);
  dual.rate = mutual_information(problem.px(), state.kernel);
  run.final_state = std::move(state);
  return run;
}

BlahutRun run_blahut(const RdProblem& problem, double lambda, const BlahutOptions& options) {
  return run_blahut(problem, lambda, Pmf::uniform(problem.num_outputs()), options);
}

std::vector<double> slope_grid(double lo, double hi, std::size_t count, bool geometric) {
  if (count == 0) throw ValidationError("slope grid: count must be at least 1");
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo < 0.0 || hi < lo) {
    throw ValidationError("slope grid: need 0 <= lo <= hi");
  }
  if (geometric && !(lo > 0.0)) {
    throw ValidationError("slope grid: geometric grids need positive endpoints");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out[i] = geometric ? lo * std::pow(hi / lo, t) : lo + (hi - lo) * t;
  }
  if (count > 1) out.back() = hi;
  return out;
}

RdCurve::RdCurve(std::vector<Line> hull, std::vector<std::pair<double, double>> points,
                 double d_min, double d_max)
    : hull_(std::move(hull)), points_(std::move(points)), d_min_(d_min), d_max_(d_max) {}

double RdCurve::evaluate(double d) const {
  double best = 0.0;
  for (const Line& l : hull_) best = std::max(best, l.f_value - l.lambda * d);
  return best;
}

double RdCurve::active_slope(double d) const {
  double best = 0.0;
  double slope = 0.0;
  for (const Line& l : hull_) {
    const double v = l.f_value - l.lambda * d;
    if (v > best) {
      best = v;
      slope = l.lambda;
    }
  }
  return slope;
}

namespace {

double intersect(const RdCurve::Line& a, const RdCurve::Line& b) {
  return (a.f_value - b.f_value) / (a.lambda - b.lambda);
}

}  // namespace

RdCurve rd_envelope(std::span<const DualPoint> duals) {
  std::vector<RdCurve::Line> lines;
  for (const DualPoint& p : duals) lines.push_back({p.lambda, p.f_value});
  std::sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) {
    return a.lambda > b.lambda || (a.lambda == b.lambda && a.f_value > b.f_value);
  });
  lines.erase(std::unique(lines.begin(), lines.end(),
                          [](const auto& a, const auto& b) { return a.lambda == b.lambda; }),
              lines.end());
  if (lines.size() < 2) throw InsufficientSlopes("envelope: need at least two distinct slopes");

  // The lambda = 0 line with F(0) = 0 is exact, so it always joins the hull.
  if (lines.back().lambda > 0.0) {
    lines.push_back({0.0, 0.0});
  } else {
    lines.back().f_value = std::max(lines.back().f_value, 0.0);
  }

  // Upper envelope over d >= 0; lines are sorted by decreasing lambda.
  std::vector<RdCurve::Line> hull;
  for (const auto& l : lines) {
    while (!hull.empty() && hull.back().f_value <= l.f_value) hull.pop_back();
    while (hull.size() >= 2 &&
           intersect(hull[hull.size() - 2], l) <= intersect(hull[hull.size() - 2], hull.back())) {
      hull.pop_back();
    }
    hull.push_back(l);
  }
  while (hull.size() >= 2 && intersect(hull[0], hull[1]) <= 0.0) hull.erase(hull.begin());

  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const double d = intersect(hull[i], hull[i + 1]);
    points.emplace_back(d, hull[i].f_value - hull[i].lambda * d);
  }
  const double d_max = points.empty() ? 0.0 : points.back().first;
  const double d_min = points.size() >= 2 ? points.front().first : 0.0;
  return RdCurve(std::move(hull), std::move(points), d_min, d_max);
}

double TiltedInfo::mean(const Pmf& px) const {
  double m = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) m += px[x] * values[x];
  }
  return m;
}

double TiltedInfo::variance(const Pmf& px) const {
  const double m = mean(px);
  double v = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) v += px[x] * (values[x] - m) * (values[x] - m);
  }
  return v;
}

TiltedInfo tilted_information(const RdProblem& problem, const DualPoint& dual,
                              const BlahutState& final_state, double d) {
  if (!dual.converged) throw NotConverged("tilted information: dual did not converge");
  TiltedInfo out;
  out.lambda_star = dual.lambda;
  const auto log_alpha = log_sigma_bar(problem, dual.lambda, final_state.py);
  out.alpha_star.resize(log_alpha.size());
  out.values.resize(log_alpha.size());
  for (std::size_t x = 0; x < log_alpha.size(); ++x) {
    out.alpha_star[x] = std::exp(log_alpha[x]);
    out.values[x] = -log_alpha[x] - dual.lambda * d;
  }
  return out;
}

OptimalityReport verify_optimality(const RdProblem& problem, const DualPoint& dual,
                                   const BlahutState& final_state, double delta) {
  const auto log_alpha = log_sigma_bar(problem, dual.lambda, final_state.py);
  const Pmf& px = problem.px();
  OptimalityReport report;
  report.tol = 10.0 * delta;
  report.constraint.assign(problem.num_outputs(), 0.0);
  for (std::size_t y = 0; y < problem.num_outputs(); ++y) {
    double c = 0.0;
    for (std::size_t x = 0; x < px.size(); ++x) {
      if (px[x] == 0.0) continue;
      c += px[x] * std::exp(-dual.lambda * problem.distortion()(x, y) - log_alpha[x]);
    }
    report.constraint[y] = c;
  }
  report.max_value = *std::max_element(report.constraint.begin(), report.constraint.end());
  report.min_on_support = std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < problem.num_outputs(); ++y) {
    if (final_state.py[y] > 0.0) {
      report.min_on_support = std::min(report.min_on_support, report.constraint[y]);
    }
  }
  report.passes =
      report.max_value <= 1.0 + report.tol && report.min_on_support >= 1.0 - report.tol;
  return report;
}

SingleStageSolution solve_at_slope(const RdProblem& problem, double lambda,
                                   const BlahutOptions& options) {
  SingleStageSolution s;
  s.run = run_blahut(problem, lambda, options);
  s.lambda = lambda;
  s.distortion = s.run.dual.distortion;
  s.rate = s.run.dual.f_value - lambda * s.distortion;
  s.tilted = tilted_information(problem, s.run.dual, s.run.final_state, s.distortion);
  return s;
}

SingleStageSolution solve_at_distortion(const RdProblem& problem, double d,
                                        const BlahutOptions& options, double d_tol) {
  BlahutOptions opts = options;
  opts.keep_states = false;
  // d_min = E[min_y d(X,y)], d_max = min_y E[d(X,y)]
  const Pmf& px = problem.px();
  double d_min = 0.0;
  double d_max = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < px.size(); ++x) {
    const auto row = problem.distortion().row(x);
    d_min += px[x] * *std::min_element(row.begin(), row.end());
  }
  for (std::size_t y = 0; y < problem.num_outputs(); ++y) {
    double e = 0.0;
    for (std::size_t x = 0; x < px.size(); ++x) e += px[x] * problem.distortion()(x, y);
    d_max = std::min(d_max, e);
  }
  if (!(d > d_min && d < d_max)) {
    throw OutOfRange("solve_at_distortion: target distortion outside (d_min, d_max)");
  }
  auto distortion_at = [&](double lambda) { return run_blahut(problem, lambda, opts).dual.distortion; };

  // Tangency distortion is nonincreasing in the slope.
  double lo = 1e-3;
  double hi = 1.0;
  for (int i = 0; i < 60 && distortion_at(lo) < d; ++i) lo /= 4.0;
  for (int i = 0; i < 60 && distortion_at(hi) > d; ++i) {
    lo = hi;
    hi *= 2.0;
  }
  if (distortion_at(lo) < d || distortion_at(hi) > d) {
    throw OutOfRange("solve_at_distortion: target distortion outside (d_min, d_max)");
  }
  double lambda = std::sqrt(lo * hi);
  for (int i = 0; i < 200; ++i) {
    lambda = std::sqrt(lo * hi);
    const double di = distortion_at(lambda);
    if (std::abs(di - d) <= d_tol || hi / lo - 1.0 < 1e-15) break;
    if (di > d) {
      lo = lambda;
    } else {
      hi = lambda;
    }
  }
  return solve_at_slope(problem, lambda, options);
}

}  // namespace refine
