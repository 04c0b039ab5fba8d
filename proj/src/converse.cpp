// SPDX-License-Identifier: Apache-2.0
#include "refine/converse.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>

#include "refine/errors.hpp"
#include "refine/parallel.hpp"

namespace refine {

void CodeSpec::validate(const SrProblem& problem) const {
  const std::size_t nx = problem.num_inputs();
  if (m1 < 1 || m2 < m1) throw ValidationError("code: need 1 <= M1 <= M2");
  const std::size_t l = second_size();
  if (enc1.input_size() != nx || enc1.output_size() != m1) {
    throw ValidationError("code: first encoder must be |X| x M1");
  }
  if (enc2.input_size() != nx * m1 || enc2.output_size() != l) {
    throw ValidationError("code: second encoder must be (|X| M1) x floor(M2 / M1)");
  }
  if (dec1.size() != m1 || dec2.size() != m1 * l) {
    throw ValidationError("code: decoder tables have the wrong size");
  }
  for (std::size_t y : dec1) {
    if (y >= problem.num_y1()) throw ValidationError("code: first decoder output out of range");
  }
  for (std::size_t y : dec2) {
    if (y >= problem.num_y2()) throw ValidationError("code: second decoder output out of range");
  }
}

CodeSpec CodeSpec::deterministic(std::size_t num_inputs, std::size_t m1, std::size_t m2,
                                 std::span<const std::size_t> f1,
                                 std::span<const std::size_t> f2, std::vector<std::size_t> dec1,
                                 std::vector<std::size_t> dec2) {
  if (m1 < 1 || m2 < m1) throw ValidationError("code: need 1 <= M1 <= M2");
  if (f1.size() != num_inputs || f2.size() != num_inputs) {
    throw ValidationError("code: encoder maps must cover every source symbol");
  }
  const std::size_t l = m2 / m1;
  std::vector<double> e1(num_inputs * m1, 0.0);
  std::vector<double> e2(num_inputs * m1 * l, 0.0);
  for (std::size_t x = 0; x < num_inputs; ++x) {
    if (f1[x] >= m1 || f2[x] >= l) throw ValidationError("code: encoder output out of range");
    e1[x * m1 + f1[x]] = 1.0;
    for (std::size_t w1 = 0; w1 < m1; ++w1) e2[(x * m1 + w1) * l + f2[x]] = 1.0;
  }
  CodeSpec c;
  c.m1 = m1;
  c.m2 = m2;
  c.enc1 = Kernel(num_inputs, m1, std::move(e1));
  c.enc2 = Kernel(num_inputs * m1, l, std::move(e2));
  c.dec1 = std::move(dec1);
  c.dec2 = std::move(dec2);
  return c;
}

void require_valid_certificate(const SrProblem& problem, const Certificate& cert, double slack) {
  const SigmaValues s = sigma_values(problem, cert.triple, cert.betas);
  if (s.max_sigma1() > 1.0 + slack || s.max_sigma2() > 1.0 + slack) {
    throw CertificateInvalid("certificate: Sigma constraint exceeds 1");
  }
}

FTerms evaluate_f_terms(const SrProblem& problem, const Certificate& cert, const CodeSpec& code,
                        double d1, double d2) {
  code.validate(problem);
  require_valid_certificate(problem, cert);
  const LagrangeTriple& t = cert.triple;
  const double a = 1.0 / (1.0 + t.nu1);
  const std::size_t l = code.second_size();
  const Pmf& px = problem.px();

  FTerms out;
  out.nu1 = t.nu1;
  out.log_m1 = std::log(static_cast<double>(code.m1));
  out.log_m2 = std::log(static_cast<double>(code.m2));
  out.d1 = d1;
  out.d2 = d2;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    const double lb1 = cert.betas.log_beta1[x];
    for (std::size_t w1 = 0; w1 < code.m1; ++w1) {
      const double p1 = code.enc1(x, w1);
      if (p1 == 0.0) continue;
      const std::size_t y1 = code.dec1[w1];
      const double lb2 = cert.betas.log_beta2(x, y1);
      const double f1 = a * lb2 - lb1 - a * t.lambda1 * d1;
      const double f2 = -t.nu1 * a * lb2 - lb1 - a * t.lambda1 * d1 - t.lambda2 * d2;
      for (std::size_t w2 = 0; w2 < l; ++w2) {
        const double p2 = code.enc2(x * code.m1 + w1, w2);
        if (p2 == 0.0) continue;
        const std::size_t y2 = code.dec2[w1 * l + w2];
        FAtom atom;
        atom.x = x;
        atom.y1 = y1;
        atom.y2 = y2;
        atom.prob = px[x] * p1 * p2;
        atom.f1 = f1;
        atom.f2 = f2;
        atom.f = t.nu1 * (f1 - out.log_m1) + f2;
        atom.dist1 = problem.d1()(x, y1);
        atom.dist2 = problem.d2()(x, y2);
        out.atoms.push_back(atom);
      }
    }
  }
  return out;
}

Theorem3Residuals theorem3_residuals(const FTerms& terms, double gamma1, double gamma2) {
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) {
    throw ValidationError("theorem residuals: gammas must be positive");
  }
  Theorem3Residuals r;
  for (const FAtom& a : terms.atoms) {
    const bool ok1 = a.dist1 <= terms.d1;
    const bool ok2 = ok1 && a.dist2 <= terms.d2;
    if (ok1 && a.f1 >= terms.log_m1 + gamma1) r.lhs1 += a.prob;
    if (ok2 && a.f2 >= terms.log_m2 + gamma2) r.lhs2 += a.prob;
  }
  r.bound1 = std::exp(-gamma1);
  r.bound2 = std::exp(-gamma2);
  r.margin1 = r.bound1 - r.lhs1;
  r.margin2 = r.bound2 - r.lhs2;
  r.holds = r.margin1 >= 0.0 && r.margin2 >= 0.0;
  return r;
}

const char* corollary_name(Corollary c) {
  switch (c) {
    case Corollary::kSeparate:
      return "cor1";
    case Corollary::kJoint:
      return "cor2";
    case Corollary::kTilted:
      return "cor3";
  }
  return "unknown";
}

namespace {

struct MergedLaw {
  std::vector<double> probs;
  std::vector<std::vector<double>> values;  // values[symbol][coordinate]
};

MergedLaw merge_symbols(const Pmf& px, const std::vector<std::vector<double>>& values) {
  for (const auto& v : values) {
    if (v.size() != px.size()) throw ValidationError("tail: value vector size mismatch");
  }
  std::map<std::vector<double>, double> groups;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    std::vector<double> key(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) key[j] = values[j][x];
    groups[key] += px[x];
  }
  MergedLaw law;
  for (auto& [key, p] : groups) {
    law.values.push_back(key);
    law.probs.push_back(p);
  }
  return law;
}

double log_compositions(std::size_t n, std::size_t m) {
  if (m <= 1) return 0.0;
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  return std::lgamma(nn + mm) - std::lgamma(nn + 1.0) - std::lgamma(mm);
}

class CompositionWalker {
 public:
  CompositionWalker(const MergedLaw& law, std::size_t n,
                    const std::function<bool(std::span<const double>)>& pred)
      : law_(law), n_(n), pred_(pred), sums_(law.values.empty() ? 0 : law.values[0].size(), 0.0) {
    for (double p : law.probs) log_p_.push_back(std::log(p));
  }

  double run() {
    walk(0, n_, std::lgamma(static_cast<double>(n_) + 1.0));
    return std::min(1.0, total_ + comp_);
  }

 private:
  void add(double v) {
    const double t = total_ + v;
    comp_ += std::abs(total_) >= std::abs(v) ? (total_ - t) + v : (v - t) + total_;
    total_ = t;
  }

  void walk(std::size_t symbol, std::size_t remaining, double log_weight) {
    const std::size_t m = law_.probs.size();
    const auto& v = law_.values[symbol];
    if (symbol + 1 == m) {
      const double c = static_cast<double>(remaining);
      for (std::size_t j = 0; j < sums_.size(); ++j) sums_[j] += c * v[j];
      if (pred_(sums_)) {
        add(std::exp(log_weight - std::lgamma(c + 1.0) + c * log_p_[symbol]));
      }
      for (std::size_t j = 0; j < sums_.size(); ++j) sums_[j] -= c * v[j];
      return;
    }
    for (std::size_t k = 0; k <= remaining; ++k) {
      const double c = static_cast<double>(k);
      for (std::size_t j = 0; j < sums_.size(); ++j) sums_[j] += c * v[j];
      walk(symbol + 1, remaining - k,
           log_weight - std::lgamma(c + 1.0) + c * log_p_[symbol]);
      for (std::size_t j = 0; j < sums_.size(); ++j) sums_[j] -= c * v[j];
    }
  }

  const MergedLaw& law_;
  std::size_t n_;
  const std::function<bool(std::span<const double>)>& pred_;
  std::vector<double> sums_;
  std::vector<double> log_p_;
  double total_ = 0.0;
  double comp_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::size_t kChunk = 1 << 14;

}  // namespace

TailEstimate iid_sum_probability(const Pmf& px, const std::vector<std::vector<double>>& values,
                                 std::size_t n,
                                 const std::function<bool(std::span<const double>)>& pred,
                                 const TailOptions& options) {
  if (n < 1) throw ValidationError("tail: blocklength must be at least 1");
  if (values.empty()) throw ValidationError("tail: no value vectors");
  const MergedLaw law = merge_symbols(px, values);

  TailEstimate est;
  if (log_compositions(n, law.probs.size()) <= std::log(options.max_compositions)) {
    CompositionWalker walker(law, n, pred);
    est.probability = walker.run();
    est.ci_low = est.ci_high = est.probability;
    est.exact = true;
    return est;
  }

  if (options.mc_samples == 0) throw ValidationError("tail: Monte Carlo needs samples");
  std::vector<double> cdf(law.probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    acc += law.probs[i];
    cdf[i] = acc;
  }
  for (double& c : cdf) c /= acc;
  const std::size_t chunks = (options.mc_samples + kChunk - 1) / kChunk;
  std::vector<std::size_t> hits(chunks, 0);
  parallel_for(
      chunks,
      [&](std::size_t chunk) {
        std::mt19937_64 rng(splitmix64(options.seed ^ splitmix64(chunk)));
        const std::size_t begin = chunk * kChunk;
        const std::size_t end = std::min(options.mc_samples, begin + kChunk);
        std::vector<double> sums(law.values[0].size());
        std::size_t count = 0;
        for (std::size_t s = begin; s < end; ++s) {
          std::fill(sums.begin(), sums.end(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            const std::size_t sym = std::min<std::size_t>(
                static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
            for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += law.values[sym][j];
          }
          if (pred(sums)) ++count;
        }
        hits[chunk] = count;
      },
      options.threads);

  std::size_t total_hits = 0;
  for (std::size_t h : hits) total_hits += h;
  const double trials = static_cast<double>(options.mc_samples);
  const double k = static_cast<double>(total_hits);
  using boost::math::binomial_distribution;
  est.exact = false;
  est.samples = options.mc_samples;
  est.probability = k / trials;
  est.ci_low = binomial_distribution<>::find_lower_bound_on_p(trials, k, 0.005);
  est.ci_high = binomial_distribution<>::find_upper_bound_on_p(trials, k, 0.005);
  return est;
}

double BlockSpec::default_gamma(std::size_t n) {
  return n >= 2 ? std::log(static_cast<double>(n)) : 1.0;
}

void BlockSpec::validate() const {
  if (n < 1) throw ValidationError("bound: blocklength must be at least 1");
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw ValidationError("bound: gammas must be positive");
  if (!std::isfinite(log_m1) || !std::isfinite(log_m2) || log_m1 < 0.0 || log_m2 < 0.0) {
    throw ValidationError("bound: log code sizes must be finite and nonnegative");
  }
}

namespace {

BoundTerm make_term(const TailEstimate& est, double slack) {
  BoundTerm t;
  t.probability = est.probability;
  t.ci_low = est.ci_low;
  t.ci_high = est.ci_high;
  t.raw = est.probability - slack;
  const double conservative = (est.exact ? est.probability : est.ci_low) - slack;
  t.value = std::max(0.0, conservative);
  t.vacuous = conservative <= 0.0;
  return t;
}

BoundResult base_result(Corollary which, const BlockSpec& block) {
  BoundResult r;
  r.which = which;
  r.n = block.n;
  r.log_m1 = block.log_m1;
  r.log_m2 = block.log_m2;
  r.gamma1 = block.gamma1;
  r.gamma2 = block.gamma2;
  return r;
}

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

BoundResult corollary1(const Pmf& px, std::span<const double> tilted1,
                       std::span<const double> tilted2, const BlockSpec& block,
                       bool separate_second_stage) {
  block.validate();
  BoundResult r = base_result(Corollary::kSeparate, block);
  r.separate_second_stage = separate_second_stage;
  const double t1 = block.log_m1 + block.gamma1;
  const double t2 = block.log_m2 + block.gamma2;
  const TailEstimate e1 = iid_sum_probability(
      px, {to_vector(tilted1)}, block.n, [t1](std::span<const double> s) { return s[0] >= t1; },
      block.tail);
  const TailEstimate e2 = iid_sum_probability(
      px, {to_vector(tilted2)}, block.n, [t2](std::span<const double> s) { return s[0] >= t2; },
      block.tail);
  r.eps1 = make_term(e1, std::exp(-block.gamma1));
  r.eps2 = make_term(e2, std::exp(-block.gamma2));
  r.exact = e1.exact && e2.exact;
  return r;
}

BoundResult corollary1(const Pmf& px, const TiltedInfo& stage1, const TiltedInfo& stage2,
                       const BlockSpec& block, bool separate_second_stage) {
  return corollary1(px, stage1.values, stage2.values, block, separate_second_stage);
}

BoundResult corollary2(const SrProblem& problem, const Certificate& cert, double d1, double d2,
                       const BlockSpec& block) {
  block.validate();
  require_valid_certificate(problem, cert);
  const Pmf& px = problem.px();
  const LagrangeTriple& t = cert.triple;
  const double a = 1.0 / (1.0 + t.nu1);
  std::vector<double> f1(px.size(), 0.0);
  std::vector<double> f(px.size(), 0.0);  // nu1 F1 + F2 per letter
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] == 0.0) continue;
    const auto row = cert.betas.log_beta2.row(x);
    const double lb2 = row[0];
    for (double v : row) {
      if (std::abs(v - lb2) > 1e-12 * std::max(1.0, std::abs(lb2))) {
        throw F1NotSourceOnly("cor2: beta2(x | y1) depends on y1, so F1 is not a function of X");
      }
    }
    const double lb1 = cert.betas.log_beta1[x];
    f1[x] = a * lb2 - lb1 - a * t.lambda1 * d1;
    const double f2 = -t.nu1 * a * lb2 - lb1 - a * t.lambda1 * d1 - t.lambda2 * d2;
    f[x] = t.nu1 * f1[x] + f2;
  }

  BoundResult r = base_result(Corollary::kJoint, block);
  const double th_f = block.log_m2 + t.nu1 * block.gamma1 + block.gamma2 + t.nu1 * block.log_m1;
  const double th_1 = block.log_m1 + block.gamma1;
  const TailEstimate joint = iid_sum_probability(
      px, {f, f1}, block.n,
      [th_f, th_1](std::span<const double> s) { return s[0] >= th_f || s[1] >= th_1; },
      block.tail);
  const TailEstimate first = iid_sum_probability(
      px, {f1}, block.n, [th_1](std::span<const double> s) { return s[0] >= th_1; }, block.tail);
  r.eps1 = make_term(first, std::exp(-block.gamma1));
  r.eps2 = make_term(joint, std::exp(-block.gamma1) + std::exp(-block.gamma2));
  r.exact = joint.exact && first.exact;
  return r;
}

BoundResult corollary3(const SrProblem& problem, const Certificate& cert, double d1, double d2,
                       const BlockSpec& block) {
  block.validate();
  require_valid_certificate(problem, cert);
  const Pmf& px = problem.px();
  const LagrangeTriple& t = cert.triple;
  std::vector<double> per_letter(px.size(), 0.0);
  for (std::size_t x = 0; x < px.size(); ++x) {
    per_letter[x] =
        -(1.0 + t.nu1) * cert.betas.log_beta1[x] - t.lambda1 * d1 - t.lambda2 * d2;
  }
  BoundResult r = base_result(Corollary::kTilted, block);
  const double th = block.log_m2 + t.nu1 * block.gamma1 + block.gamma2 + t.nu1 * block.log_m1;
  const TailEstimate e = iid_sum_probability(
      px, {per_letter}, block.n, [th](std::span<const double> s) { return s[0] >= th; },
      block.tail);
  r.eps2 = make_term(e, std::exp(-block.gamma1) + std::exp(-block.gamma2));
  r.exact = e.exact;
  return r;
}

NormalApproximation normal_approximation(const Pmf& px, std::span<const double> tilted,
                                         std::size_t n, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw OutOfRange("normal approximation: epsilon not in (0, 1)");
  if (n < 1) throw ValidationError("normal approximation: blocklength must be at least 1");
  if (tilted.size() != px.size()) throw ValidationError("normal approximation: size mismatch");
  NormalApproximation out;
  for (std::size_t x = 0; x < px.size(); ++x) out.mean += px[x] * tilted[x];
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] > 0.0) out.variance += px[x] * (tilted[x] - out.mean) * (tilted[x] - out.mean);
  }
  if (out.variance <= 1e-14 * std::max(1.0, out.mean * out.mean)) {
    throw ZeroVariance("normal approximation: tilted information has zero variance");
  }
  const boost::math::normal_distribution<> standard;
  out.q_inverse = boost::math::quantile(boost::math::complement(standard, epsilon));
  const double nn = static_cast<double>(n);
  out.log_m = nn * out.mean + std::sqrt(nn * out.variance) * out.q_inverse;
  return out;
}

}  // namespace refine
