// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refine/prob.hpp"
#include "refine/single_stage.hpp"
#include "refine/successive.hpp"

namespace refine::cli {

/// Problem file contents: {"pmf": [...], "d1": [[...]], "d2": [[...]]}; d2 is optional.
struct ProblemFile {
  Pmf pmf;
  Matrix d1;
  std::optional<Matrix> d2;

  RdProblem single_stage() const { return {pmf, d1}; }
  SrProblem successive() const;

  friend bool operator==(const ProblemFile&, const ProblemFile&) = default;
};

/// Throws IoError, ParseError (with line or field) or ValidationError.
ProblemFile load_problem(const std::string& path);
ProblemFile parse_problem(const std::string& text);
void save_problem(const std::string& path, const ProblemFile& problem);

struct SlopeSpec {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  bool geometric = true;

  /// "lo:hi:count[:geom|:lin]".
  static SlopeSpec parse(const std::string& text);
  std::vector<double> values() const;
};

enum class Command { kRd, kSr, kGaussDemo, kConverse, kOracle };
enum class Units { kNats, kBits };

struct RunConfig {
  Command command = Command::kRd;
  std::string problem_path;
  std::optional<SlopeSpec> slopes;
  double nu1 = 1.0;
  double lambda1 = 5.0 / 9.0;
  std::size_t max_iters = 10000;
  double delta = 1e-9;
  std::string output_path;
  Units units = Units::kNats;
  std::uint64_t seed = 1;

  // converse
  std::size_t n = 1;
  std::optional<double> d1;
  std::optional<double> d2;
  double rate1 = 0.0;
  std::optional<SlopeSpec> rates;  // total-rate sweep, nats per symbol
  std::optional<double> gamma1;
  std::optional<double> gamma2;
  std::string corollary = "cor1";
  std::size_t mc_samples = 200000;

  // oracle
  std::optional<std::size_t> grid_steps;
};

/// Runs one command and writes its CSV (stdout when output_path is empty).
void run(const RunConfig& config);

/// Parses argv, runs, and maps errors to exit codes with a JSON record on stderr.
int main_entry(int argc, const char* const* argv);

}  // namespace refine::cli
