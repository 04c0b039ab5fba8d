// SPDX-License-Identifier: Apache-2.0
#include "refine/prob.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>

#include "refine/errors.hpp"

namespace refine {
namespace {

// Neumaier-compensated accumulator.
class Accumulator {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::string describe(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void normalize_in_place(std::vector<double>& probs, const char* what) {
  if (probs.empty()) throw ValidationError(std::string(what) + ": empty distribution");
  Accumulator acc;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw ValidationError(std::string(what) + ": entry " + std::to_string(i) +
                            " is negative or not finite (" + describe(p) + ")");
    }
    acc.add(p);
  }
  const double total = acc.value();
  const double drift = std::abs(total - 1.0);
  // inclusive, with a few ulps so that a decimal sum like 0.999999999 qualifies
  if (drift > kRenormalizeDrift + 16.0 * std::numeric_limits<double>::epsilon()) {
    throw ValidationError(std::string(what) + ": entries sum to " + describe(total) +
                          ", not 1");
  }
  if (drift > kNormTolerance) {
    for (double& p : probs) p /= total;
  }
}

}  // namespace

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  return m + std::log(s);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ValidationError("matrix: data size does not match shape");
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ValidationError("matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return {rows.size(), cols, std::move(data)};
}

Pmf::Pmf(std::vector<double> probs) : probs_(std::move(probs)) {
  normalize_in_place(probs_, "pmf");
}

Pmf Pmf::uniform(std::size_t n) {
  if (n == 0) throw ValidationError("pmf: empty distribution");
  return Pmf(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Pmf Pmf::point_mass(std::size_t n, std::size_t at) {
  std::vector<double> p(n, 0.0);
  p.at(at) = 1.0;
  return Pmf(std::move(p));
}

Pmf Pmf::from_weights(std::vector<double> weights) {
  Accumulator acc;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DegenerateMarginal("pmf: invalid weight");
    acc.add(w);
  }
  const double total = acc.value();
  if (!(total >= kMassFloor)) throw DegenerateMarginal("pmf: total mass collapsed");
  for (double& w : weights) w /= total;
  Pmf out;
  out.probs_ = std::move(weights);
  return out;
}

Pmf Pmf::from_log_weights(std::span<const double> log_weights) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) throw DegenerateMarginal("pmf: log weights are degenerate");
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = log_weights[i] == kNegInf ? 0.0 : std::exp(log_weights[i] - lse);
  }
  return from_weights(std::move(w));
}

std::size_t Pmf::support_size() const {
  return static_cast<std::size_t>(
      std::count_if(probs_.begin(), probs_.end(), [](double p) { return p > 0.0; }));
}

Kernel::Kernel(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_(rows, cols, std::move(data)) {
  if (rows == 0 || cols == 0) throw ValidationError("kernel: empty shape");
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(m_.row(r).begin(), m_.row(r).end());
    normalize_in_place(row, "kernel row");
    std::copy(row.begin(), row.end(), m_.row(r).begin());
  }
}

Kernel Kernel::from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m = Matrix::from_rows(rows);
  return Kernel(m.rows(), m.cols(), m.data());
}

Kernel Kernel::uniform(std::size_t rows, std::size_t cols) {
  return Kernel(rows, cols, std::vector<double>(rows * cols, 1.0 / static_cast<double>(cols)));
}

Kernel Kernel::constant_rows(std::size_t rows, const Pmf& row) {
  std::vector<double> data;
  data.reserve(rows * row.size());
  for (std::size_t r = 0; r < rows; ++r) data.insert(data.end(), row.probs().begin(), row.probs().end());
  return Kernel(rows, row.size(), std::move(data));
}

Pmf Kernel::row_pmf(std::size_t x) const {
  return Pmf(std::vector<double>(row(x).begin(), row(x).end()));
}

Pmf push_forward(const Pmf& px, const Kernel& k) {
  if (px.size() != k.input_size()) throw ValidationError("push_forward: shape mismatch");
  std::vector<double> out(k.output_size(), 0.0);
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    const auto r = k.row(x);
    for (std::size_t y = 0; y < out.size(); ++y) out[y] += px[x] * r[y];
  }
  return Pmf::from_weights(std::move(out));
}

namespace {

double divergence_terms(std::span<const double> p, std::span<const double> q) {
  Accumulator acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;  // 0 ln 0 = 0
    if (q[i] == 0.0) {
      throw AbsoluteContinuityViolation("relative entropy: p(" + std::to_string(i) +
                                        ") > 0 where q vanishes");
    }
    acc.add(p[i] * (std::log(p[i]) - std::log(q[i])));
  }
  return acc.value();
}

}  // namespace

double relative_entropy(const Pmf& p, const Pmf& q) {
  if (p.size() != q.size()) throw ValidationError("relative_entropy: size mismatch");
  return std::max(0.0, divergence_terms(p.probs(), q.probs()));
}

double conditional_relative_entropy(const Kernel& k1, const Kernel& k2, const Pmf& px) {
  if (k1.input_size() != k2.input_size() || k1.output_size() != k2.output_size() ||
      px.size() != k1.input_size()) {
    throw ValidationError("conditional_relative_entropy: shape mismatch");
  }
  Accumulator acc;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    acc.add(px[x] * divergence_terms(k1.row(x), k2.row(x)));
  }
  return std::max(0.0, acc.value());
}

double mutual_information(const Pmf& px, const Kernel& k) {
  const Pmf py = push_forward(px, k);
  return conditional_relative_entropy(k, Kernel::constant_rows(k.input_size(), py), px);
}

}  // namespace refine
