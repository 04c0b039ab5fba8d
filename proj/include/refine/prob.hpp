// SPDX-License-Identifier: Apache-2.0
//
// Finite probability primitives. Everything is in nats; conversion to bits
// happens only at output boundaries.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace refine {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Normalization slack accepted silently on construction.
inline constexpr double kNormTolerance = 1e-12;
/// Drift that is still repaired by renormalization; anything larger is rejected.
inline constexpr double kRenormalizeDrift = 1e-9;
/// Output mass below this is treated as exactly zero by the iterative solvers.
inline constexpr double kMassFloor = 1e-300;

/// Log-domain scalar in nats. Zero mass maps to -inf.
struct LogProb {
  double value = kNegInf;

  static LogProb from_prob(double p) { return {p > 0.0 ? std::log(p) : kNegInf}; }
  double prob() const { return std::exp(value); }
  bool is_zero() const { return value == kNegInf; }
};

/// log(sum(exp(v))) ignoring -inf entries; returns -inf for an all -inf input.
double log_sum_exp(std::span<const double> v);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Probability mass function over {0, ..., n-1}.
class Pmf {
 public:
  Pmf() = default;
  /// Validates nonnegativity and normalization. Sums off by at most
  /// kRenormalizeDrift are renormalized; larger drift throws ValidationError.
  explicit Pmf(std::vector<double> probs);

  static Pmf uniform(std::size_t n);
  static Pmf point_mass(std::size_t n, std::size_t at);
  /// Normalizes arbitrary nonnegative weights. Throws DegenerateMarginal when
  /// the total is below kMassFloor.
  static Pmf from_weights(std::vector<double> weights);
  /// Normalizes log-domain weights (entries may be -inf).
  static Pmf from_log_weights(std::span<const double> log_weights);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }
  double log(std::size_t i) const { return probs_[i] > 0.0 ? std::log(probs_[i]) : kNegInf; }
  std::size_t support_size() const;

  friend bool operator==(const Pmf&, const Pmf&) = default;

 private:
  std::vector<double> probs_;
};

/// Row-stochastic matrix; row x is the conditional pmf of the output given x.
class Kernel {
 public:
  Kernel() = default;
  /// Validates every row with the same policy as Pmf.
  Kernel(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Kernel from_rows(const std::vector<std::vector<double>>& rows);
  static Kernel uniform(std::size_t rows, std::size_t cols);
  /// Every row equal to `row`.
  static Kernel constant_rows(std::size_t rows, const Pmf& row);

  std::size_t input_size() const { return m_.rows(); }
  std::size_t output_size() const { return m_.cols(); }
  double operator()(std::size_t x, std::size_t y) const { return m_(x, y); }
  std::span<const double> row(std::size_t x) const { return m_.row(x); }
  Pmf row_pmf(std::size_t x) const;
  const Matrix& matrix() const { return m_; }

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  Matrix m_;
};

/// Output marginal of px pushed through k.
Pmf push_forward(const Pmf& px, const Kernel& k);

/// D(p || q) in nats. Throws AbsoluteContinuityViolation when p_i > 0 = q_i.
double relative_entropy(const Pmf& p, const Pmf& q);

/// sum_x px(x) D(k1_x || k2_x); rows with px(x) = 0 contribute nothing.
double conditional_relative_entropy(const Kernel& k1, const Kernel& k2, const Pmf& px);

/// I(X;Y) for X ~ px and Y | X ~ k.
double mutual_information(const Pmf& px, const Kernel& k);

inline double nats_to_bits(double nats) { return nats / std::log(2.0); }

}  // namespace refine
