// SPDX-License-Identifier: Apache-2.0
#include "refine/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "refine/converse.hpp"
#include "refine/errors.hpp"
#include "refine/gaussian.hpp"
#include "refine/oracles.hpp"
#include "refine/parallel.hpp"

namespace refine::cli {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return std::to_string(line);
}

std::vector<double> number_array(const json& j, const std::string& field) {
  if (!j.is_array()) throw ParseError("field '" + field + "': expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw ParseError("field '" + field + "[" + std::to_string(i) + "]': expected a number");
    }
    out.push_back(j[i].get<double>());
  }
  return out;
}

Matrix number_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) {
    throw ParseError("field '" + field + "': expected a nonempty array of rows");
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < j.size(); ++r) {
    rows.push_back(number_array(j[r], field + "[" + std::to_string(r) + "]"));
  }
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ParseError("field '" + field + "': ragged rows");
  }
  return Matrix::from_rows(rows);
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

double info(double nats, Units u) { return u == Units::kBits ? nats_to_bits(nats) : nats; }

void emit(const RunConfig& config, const std::string& path, const std::string& body) {
  if (path.empty()) {
    std::cout << body;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open output file '" + path + "'");
  out << body;
  if (!out) throw IoError("failed writing output file '" + path + "'");
  (void)config;
}

BlahutOptions blahut_options(const RunConfig& c, bool keep_states = false) {
  BlahutOptions o;
  o.max_iters = c.max_iters;
  o.delta = c.delta;
  o.keep_states = keep_states;
  return o;
}

std::vector<double> required_slopes(const RunConfig& c) {
  if (!c.slopes) throw ValidationError("--slopes is required for this command");
  return c.slopes->values();
}

void run_rd(const RunConfig& c) {
  const ProblemFile pf = load_problem(c.problem_path);
  const RdProblem problem = pf.single_stage();
  const std::vector<double> slopes = required_slopes(c);
  std::vector<DualPoint> duals(slopes.size());
  const BlahutOptions opts = blahut_options(c);
  parallel_for(slopes.size(),
               [&](std::size_t i) { duals[i] = run_blahut(problem, slopes[i], opts).dual; });
  std::ostringstream out;
  out << "lambda,F,iterations,converged,d,R\n";
  for (const DualPoint& d : duals) {
    out << fmt(d.lambda) << ',' << fmt(info(d.f_value, c.units)) << ',' << d.iterations_used
        << ',' << (d.converged ? 1 : 0) << ',' << fmt(d.distortion) << ','
        << fmt(info(d.f_value - d.lambda * d.distortion, c.units)) << '\n';
  }
  emit(c, c.output_path, out.str());
}

void run_sr(const RunConfig& c) {
  const ProblemFile pf = load_problem(c.problem_path);
  const SrProblem problem = pf.successive();
  const std::vector<double> slopes = required_slopes(c);
  std::vector<SrRun> runs(slopes.size());
  const BlahutOptions opts = blahut_options(c);
  parallel_for(slopes.size(), [&](std::size_t i) {
    runs[i] = run_sr_blahut(problem, {c.nu1, c.lambda1, slopes[i]}, opts);
  });
  std::ostringstream out;
  std::ostringstream sig;
  out << "nu1,lambda1,lambda2,F,d1,d2,R1,R2\n";
  sig << "lambda2,y1,y2,sigma1,sigma2,passes\n";
  for (const SrRun& r : runs) {
    const SrDualPoint& d = r.dual;
    const LagrangeTriple& t = d.triple;
    const double r2 = d.f_value - t.nu1 * d.r1 - t.lambda1 * d.d1 - t.lambda2 * d.d2;
    out << fmt(t.nu1) << ',' << fmt(t.lambda1) << ',' << fmt(t.lambda2) << ','
        << fmt(info(d.f_value, c.units)) << ',' << fmt(d.d1) << ',' << fmt(d.d2) << ','
        << fmt(info(d.r1, c.units)) << ',' << fmt(info(r2, c.units)) << '\n';
    const SrOptimalityReport rep = verify_sr_optimality(problem, t, r.final_state, c.delta);
    for (std::size_t y1 = 0; y1 < problem.num_y1(); ++y1) {
      for (std::size_t y2 = 0; y2 < problem.num_y2(); ++y2) {
        sig << fmt(t.lambda2) << ',' << y1 << ',' << y2 << ',' << fmt(rep.sigma.sigma1[y1]) << ','
            << fmt(rep.sigma.sigma2(y1, y2)) << ',' << (rep.passes ? 1 : 0) << '\n';
      }
    }
  }
  emit(c, c.output_path, out.str());
  if (!c.output_path.empty()) emit(c, c.output_path + ".sigma.csv", sig.str());
}

void run_gauss_demo(const RunConfig& c) {
  const SlopeSpec spec = c.slopes.value_or(SlopeSpec{0.5, 6.0, 31, true});
  const std::size_t k = c.max_iters;
  std::vector<double> grid(50);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.1 + 0.8 * static_cast<double>(i) / 49.0;
  const Fig3Result res = reproduce_fig3(spec.values(), k, grid, c.nu1, c.lambda1);
  std::ostringstream out;
  out << "d2,R2_estimate,R2_analytic,abs_error\n";
  for (const Fig3Point& p : res.points) {
    out << fmt(p.d2) << ',' << fmt(info(p.estimate, c.units)) << ','
        << fmt(info(p.analytic, c.units)) << ',' << fmt(info(p.abs_error, c.units)) << '\n';
  }
  emit(c, c.output_path, out.str());
}

void run_converse(const RunConfig& c) {
  const ProblemFile pf = load_problem(c.problem_path);
  const SrProblem problem = pf.successive();
  if (!c.d1 || !c.d2) throw ValidationError("converse: --d1 and --d2 are required");
  if (!c.rates) throw ValidationError("converse: --rates is required");
  const BlahutOptions opts = blahut_options(c);
  const double gamma_default = BlockSpec::default_gamma(c.n);
  const double g1 = c.gamma1.value_or(gamma_default);
  const double g2 = c.gamma2.value_or(gamma_default);
  const double nn = static_cast<double>(c.n);

  std::optional<SingleStageSolution> s1;
  std::optional<SingleStageSolution> s2;
  std::optional<RefinableCertificate> cert;
  if (c.corollary == "cor1") {
    s1 = solve_at_distortion(problem.first_stage(), *c.d1, opts);
    s2 = solve_at_distortion(problem.second_stage(), *c.d2, opts);
  } else if (c.corollary == "cor3") {
    try {
      cert = refinable_construction(problem, *c.d1, *c.d2, c.nu1, opts);
    } catch (const ConstraintViolated& e) {
      cert = e.result();  // still a feasible certificate
    }
  } else {
    throw ValidationError("converse: --corollary must be cor1 or cor3");
  }

  std::ostringstream out;
  out << "n,M1,M2,gamma1,gamma2,eps1_lb,eps2_lb,method\n";
  for (double r2 : c.rates->values()) {
    BlockSpec block;
    block.n = c.n;
    block.log_m1 = nn * c.rate1;
    block.log_m2 = nn * r2;
    block.gamma1 = g1;
    block.gamma2 = g2;
    block.tail.seed = c.seed;
    block.tail.mc_samples = c.mc_samples;
    const BoundResult b =
        s1 ? corollary1(problem.px(), s1->tilted, s2->tilted, block)
           : corollary3(problem, cert->certificate, *c.d1, *c.d2, block);
    out << c.n << ',' << fmt(std::exp(block.log_m1)) << ',' << fmt(std::exp(block.log_m2)) << ','
        << fmt(g1) << ',' << fmt(g2) << ',' << (b.eps1 ? fmt(b.eps1->value) : std::string())
        << ',' << fmt(b.eps2.value) << ',' << (b.exact ? "exact" : "monte-carlo") << '\n';
  }
  emit(c, c.output_path, out.str());
}

void run_oracle(const RunConfig& c) {
  const ProblemFile pf = load_problem(c.problem_path);
  const std::vector<double> slopes = required_slopes(c);
  const BlahutOptions opts = blahut_options(c);
  std::ostringstream out;
  if (!pf.d2) {
    const RdProblem problem = pf.single_stage();
    const std::size_t steps = c.grid_steps.value_or(1000);
    std::vector<std::pair<double, OracleResult>> rows(slopes.size());
    parallel_for(slopes.size(), [&](std::size_t i) {
      rows[i] = {run_blahut(problem, slopes[i], opts).dual.f_value,
                 brute_force_dual(problem, slopes[i], steps)};
    });
    out << "lambda,F_iterative,F_oracle,abs_diff,resolution\n";
    for (std::size_t i = 0; i < slopes.size(); ++i) {
      const auto& [f, o] = rows[i];
      out << fmt(slopes[i]) << ',' << fmt(info(f, c.units)) << ',' << fmt(info(o.value, c.units))
          << ',' << fmt(info(std::abs(f - o.value), c.units)) << ',' << fmt(o.resolution) << '\n';
    }
  } else {
    const SrProblem problem = pf.successive();
    const std::size_t steps = c.grid_steps.value_or(60);
    std::vector<std::pair<double, OracleResult>> rows(slopes.size());
    parallel_for(slopes.size(), [&](std::size_t i) {
      const LagrangeTriple t{c.nu1, c.lambda1, slopes[i]};
      rows[i] = {run_sr_blahut(problem, t, opts).dual.f_value,
                 brute_force_sr_dual(problem, t, steps)};
    });
    out << "nu1,lambda1,lambda2,F_iterative,F_oracle,abs_diff,resolution\n";
    for (std::size_t i = 0; i < slopes.size(); ++i) {
      const auto& [f, o] = rows[i];
      out << fmt(c.nu1) << ',' << fmt(c.lambda1) << ',' << fmt(slopes[i]) << ','
          << fmt(info(f, c.units)) << ',' << fmt(info(o.value, c.units)) << ','
          << fmt(info(std::abs(f - o.value), c.units)) << ',' << fmt(o.resolution) << '\n';
    }
  }
  emit(c, c.output_path, out.str());
}

void print_error(const char* kind, const std::string& message, int code) {
  json rec{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << rec.dump() << '\n';
}

}  // namespace

SrProblem ProblemFile::successive() const {
  if (!d2) throw ValidationError("problem: field 'd2' is required for two-stage commands");
  return {pmf, d1, *d2};
}

ProblemFile parse_problem(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("problem file: syntax error at line " + line_of(text, e.byte) + ": " +
                     e.what());
  }
  if (!j.is_object()) throw ParseError("problem file: top level must be an object");
  for (const char* f : {"pmf", "d1"}) {
    if (!j.contains(f)) throw ParseError(std::string("field '") + f + "': missing");
  }
  ProblemFile p;
  p.pmf = Pmf(number_array(j["pmf"], "pmf"));
  p.d1 = number_matrix(j["d1"], "d1");
  if (j.contains("d2") && !j["d2"].is_null()) p.d2 = number_matrix(j["d2"], "d2");
  // Constructing the problems runs the shape and sign checks.
  (void)p.single_stage();
  if (p.d2) (void)p.successive();
  return p;
}

ProblemFile load_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open problem file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_problem(buf.str());
}

void save_problem(const std::string& path, const ProblemFile& problem) {
  json j;
  j["pmf"] = std::vector<double>(problem.pmf.probs().begin(), problem.pmf.probs().end());
  j["d1"] = matrix_json(problem.d1);
  if (problem.d2) j["d2"] = matrix_json(*problem.d2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

SlopeSpec SlopeSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3 && parts.size() != 4) {
    throw ValidationError("slope grid '" + text + "': expected lo:hi:count[:geom|:lin]");
  }
  SlopeSpec s;
  try {
    std::size_t used = 0;
    s.lo = std::stod(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument("lo");
    s.hi = std::stod(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument("hi");
    const long count = std::stol(parts[2], &used);
    if (used != parts[2].size() || count < 0) throw std::invalid_argument("count");
    s.count = static_cast<std::size_t>(count);
  } catch (const std::exception&) {
    throw ValidationError("slope grid '" + text + "': malformed number");
  }
  if (parts.size() == 4) {
    if (parts[3] == "geom") {
      s.geometric = true;
    } else if (parts[3] == "lin") {
      s.geometric = false;
    } else {
      throw ValidationError("slope grid '" + text + "': spacing must be geom or lin");
    }
  }
  if (s.count == 0) throw ValidationError("slope grid '" + text + "': empty grid");
  return s;
}

std::vector<double> SlopeSpec::values() const { return slope_grid(lo, hi, count, geometric); }

void run(const RunConfig& config) {
  if (config.max_iters < 1) throw ValidationError("--max-iters must be at least 1");
  if (!(config.delta > 0.0)) throw ValidationError("--delta must be positive");
  switch (config.command) {
    case Command::kRd:
      return run_rd(config);
    case Command::kSr:
      return run_sr(config);
    case Command::kGaussDemo:
      return run_gauss_demo(config);
    case Command::kConverse:
      return run_converse(config);
    case Command::kOracle:
      return run_oracle(config);
  }
}

int main_entry(int argc, const char* const* argv) {
  CLI::App app{"Rate-distortion and successive-refinement solver"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string slopes;
  std::string rates;
  std::string units = "nats";
  std::size_t grid = 0;
  double d1 = -1.0;
  double d2 = -1.0;
  double gamma1 = -1.0;
  double gamma2 = -1.0;

  auto common = [&](CLI::App* sub, bool needs_problem) {
    auto* p = sub->add_option("--problem", cfg.problem_path, "problem JSON file");
    if (needs_problem) p->required();
    sub->add_option("--slopes", slopes, "slope grid lo:hi:count[:geom|:lin]");
    sub->add_option("--nu1", cfg.nu1, "rate multiplier nu1");
    sub->add_option("--lambda1", cfg.lambda1, "first-stage slope");
    sub->add_option("--max-iters", cfg.max_iters, "iteration cap");
    sub->add_option("--delta", cfg.delta, "stopping tolerance in nats");
    sub->add_option("--units", units, "nats or bits")->check(CLI::IsMember({"nats", "bits"}));
    sub->add_option("--seed", cfg.seed, "Monte Carlo seed");
    sub->add_option("--out", cfg.output_path, "output CSV (stdout when omitted)");
  };

  auto* rd = app.add_subcommand("rd", "single-stage dual sweep");
  common(rd, true);
  auto* sr = app.add_subcommand("sr", "two-stage dual sweep over lambda2");
  common(sr, true);
  auto* gauss = app.add_subcommand("gauss-demo", "closed-form Gaussian two-stage slice");
  common(gauss, false);
  auto* conv = app.add_subcommand("converse", "finite-blocklength converse bounds");
  common(conv, true);
  conv->add_option("--n", cfg.n, "blocklength");
  conv->add_option("--d1", d1, "first-stage target distortion")->required();
  conv->add_option("--d2", d2, "second-stage target distortion")->required();
  conv->add_option("--rate1", cfg.rate1, "first-stage rate, nats per symbol");
  conv->add_option("--rates", rates, "total-rate sweep lo:hi:count[:lin]")->required();
  conv->add_option("--gamma1", gamma1, "slack for the first stage (default ln n)");
  conv->add_option("--gamma2", gamma2, "slack for the second stage (default ln n)");
  conv->add_option("--corollary", cfg.corollary, "cor1 or cor3");
  conv->add_option("--samples", cfg.mc_samples, "Monte Carlo samples");
  auto* orc = app.add_subcommand("oracle", "iterative vs grid-oracle comparison");
  common(orc, true);
  orc->add_option("--grid", grid, "grid steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("ParseError", e.what(), static_cast<int>(ExitCode::kValidation));
    return static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (rd->parsed()) cfg.command = Command::kRd;
    if (sr->parsed()) cfg.command = Command::kSr;
    if (gauss->parsed()) cfg.command = Command::kGaussDemo;
    if (conv->parsed()) cfg.command = Command::kConverse;
    if (orc->parsed()) cfg.command = Command::kOracle;
    if (gauss->parsed() && gauss->count("--max-iters") == 0) cfg.max_iters = 20;
    if (!slopes.empty() || app.get_subcommands().front()->count("--slopes") > 0) {
      cfg.slopes = SlopeSpec::parse(slopes);
    }
    if (!rates.empty()) {
      const auto colons = std::count(rates.begin(), rates.end(), ':');
      cfg.rates = SlopeSpec::parse(colons == 2 ? rates + ":lin" : rates);
    }
    cfg.units = units == "bits" ? Units::kBits : Units::kNats;
    if (d1 >= 0.0) cfg.d1 = d1;
    if (d2 >= 0.0) cfg.d2 = d2;
    if (gamma1 > 0.0) cfg.gamma1 = gamma1;
    if (gamma2 > 0.0) cfg.gamma2 = gamma2;
    if (grid > 0) cfg.grid_steps = grid;
    run(cfg);
  } catch (const Error& e) {
    print_error(e.kind(), e.what(), static_cast<int>(e.exit_code()));
    return static_cast<int>(e.exit_code());
  } catch (const std::bad_alloc&) {
    print_error("NumericalError", "out of memory", static_cast<int>(ExitCode::kNumerical));
    return static_cast<int>(ExitCode::kNumerical);
  }
  return 0;
}

}  // namespace refine::cli
