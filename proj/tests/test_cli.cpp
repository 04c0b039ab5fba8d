// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "refine/cli.hpp"
#include "refine/errors.hpp"

namespace refine::cli {
namespace {

namespace fs = std::filesystem;

const std::string kData = REFINE_TEST_DATA;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("refine_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  // CSV body rows split on commas, header dropped.
  static std::vector<std::vector<std::string>> rows(const std::string& text) {
    std::vector<std::vector<std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (!line.empty() && line.back() == ',') cells.emplace_back();
      out.push_back(cells);
    }
    return out;
  }

  static int invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "refine_rd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return main_entry(static_cast<int>(argv.size()), argv.data());
  }

  fs::path dir_;
};

TEST(ParseProblem, MinimalSingleStage) {
  const ProblemFile p = parse_problem(R"({"pmf": [0.2, 0.8], "d1": [[0, 1], [1, 0]]})");
  EXPECT_EQ(p.pmf.size(), 2u);
  EXPECT_FALSE(p.d2.has_value());
  EXPECT_EQ(p.single_stage().num_outputs(), 2u);
  EXPECT_THROW(p.successive(), ValidationError);
}

TEST(ParseProblem, RenormalizesTinyDrift) {
  const ProblemFile p = parse_problem(R"({"pmf": [0.499999999, 0.5], "d1": [[0, 1], [1, 0]]})");
  EXPECT_NEAR(p.pmf[0] + p.pmf[1], 1.0, 1e-15);
  EXPECT_THROW(parse_problem(R"({"pmf": [0.4, 0.5], "d1": [[0, 1], [1, 0]]})"), ValidationError);
}

TEST(ParseProblem, Errors) {
  EXPECT_THROW(parse_problem(R"({"pmf": [0.5, 0.5], "d1": [[0, -1], [1, 0]]})"), ValidationError);
  EXPECT_THROW(parse_problem(R"({"pmf": [0.5, 0.5], "d1": [[0, 1], [1, 0]], "d2": [[0, 1]]})"),
               ValidationError);
  try {
    parse_problem("{\n  \"pmf\": [0.5, 0.5],\n  \"d1\": [[0, 1] [1, 0]]\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  try {
    parse_problem(R"({"pmf": [0.5, 0.5]})");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("'d1'"), std::string::npos) << e.what();
  }
  try {
    parse_problem(R"({"pmf": [0.5, "x"], "d1": [[0, 1], [1, 0]]})");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("pmf[1]"), std::string::npos) << e.what();
  }
}

TEST(SlopeSpecTest, Parse) {
  const SlopeSpec g = SlopeSpec::parse("0.5:6:31");
  EXPECT_TRUE(g.geometric);
  const auto v = g.values();
  ASSERT_EQ(v.size(), 31u);
  EXPECT_DOUBLE_EQ(v.front(), 0.5);
  EXPECT_NEAR(v.back(), 6.0, 1e-12);
  const auto l = SlopeSpec::parse("0:1:3:lin").values();
  ASSERT_EQ(l.size(), 3u);
  EXPECT_DOUBLE_EQ(l[1], 0.5);
  EXPECT_THROW(SlopeSpec::parse("1:2:0"), ValidationError);
  EXPECT_THROW(SlopeSpec::parse("1:2"), ValidationError);
  EXPECT_THROW(SlopeSpec::parse("a:2:3"), ValidationError);
  EXPECT_THROW(SlopeSpec::parse("1:2:3:cubic"), ValidationError);
}

TEST_F(CliTest, RoundTrip) {
  const ProblemFile p = load_problem(kData + "/binary_sr.json");
  save_problem(path("copy.json"), p);
  EXPECT_EQ(load_problem(path("copy.json")), p);
  EXPECT_THROW(load_problem(path("missing.json")), IoError);
}

TEST_F(CliTest, RdIsDeterministicAndMonotone) {
  RunConfig c;
  c.command = Command::kRd;
  c.problem_path = kData + "/binary02.json";
  c.slopes = SlopeSpec::parse("0.2:8:31");
  c.output_path = path("a.csv");
  run(c);
  c.output_path = path("b.csv");
  run(c);
  const std::string a = slurp(path("a.csv"));
  EXPECT_EQ(a, slurp(path("b.csv")));
  EXPECT_EQ(a.substr(0, a.find('\n')), "lambda,F,iterations,converged,d,R");

  auto r = rows(a);
  ASSERT_EQ(r.size(), 31u);
  std::vector<std::pair<double, double>> dr;
  for (const auto& row : r) dr.emplace_back(std::stod(row[4]), std::stod(row[5]));
  std::sort(dr.begin(), dr.end());
  for (std::size_t i = 1; i < dr.size(); ++i) EXPECT_LE(dr[i].second, dr[i - 1].second + 1e-9);
}

TEST_F(CliTest, RdUnits) {
  RunConfig c;
  c.problem_path = kData + "/binary02.json";
  c.slopes = SlopeSpec::parse("1:2:2");
  c.output_path = path("nats.csv");
  run(c);
  c.units = Units::kBits;
  c.output_path = path("bits.csv");
  run(c);
  const auto n = rows(slurp(path("nats.csv")));
  const auto b = rows(slurp(path("bits.csv")));
  for (std::size_t i = 0; i < n.size(); ++i) {
    EXPECT_NEAR(std::stod(b[i][1]), std::stod(n[i][1]) / std::log(2.0), 1e-10);
    EXPECT_EQ(b[i][4], n[i][4]);  // distortion is not an information quantity
  }
}

TEST_F(CliTest, SrWritesSigmaDiagnostics) {
  EXPECT_EQ(invoke({"sr", "--problem", kData + "/binary_sr.json", "--slopes", "1.5:3:3", "--nu1",
                    "1", "--lambda1", "1", "--out", path("sr.csv")}),
            0);
  const auto r = rows(slurp(path("sr.csv")));
  EXPECT_EQ(r.size(), 3u);
  const auto s = rows(slurp(path("sr.csv") + ".sigma.csv"));
  EXPECT_EQ(s.size(), 3u * 4u);
  for (const auto& row : s) {
    EXPECT_LE(std::stod(row[3]), 1.0 + 1e-8);
    EXPECT_LE(std::stod(row[4]), 1.0 + 1e-8);
    EXPECT_EQ(row.back(), "1");
  }
}

// Default demo against the acceptance threshold of 5e-3 nats.
TEST_F(CliTest, GaussDemoDefault) {
  ASSERT_EQ(invoke({"gauss-demo", "--out", path("g.csv")}), 0);
  const auto r = rows(slurp(path("g.csv")));
  ASSERT_EQ(r.size(), 50u);
  double worst = 0.0;
  for (const auto& row : r) worst = std::max(worst, std::stod(row[3]));
  EXPECT_LE(worst, 5e-3);
}

TEST_F(CliTest, ConverseAndOracle) {
  ASSERT_EQ(invoke({"converse", "--problem", kData + "/binary_sr.json", "--n", "10", "--d1", "0.2",
                    "--d2", "0.1", "--rate1", "0.2", "--rates", "0.2:0.6:5", "--out",
                    path("c.csv")}),
            0);
  const auto c = rows(slurp(path("c.csv")));
  ASSERT_EQ(c.size(), 5u);
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_LE(std::stod(c[i][6]), std::stod(c[i - 1][6]));
    EXPECT_EQ(c[i][7], "exact");
  }
  ASSERT_EQ(invoke({"converse", "--problem", kData + "/binary_sr.json", "--n", "10", "--d1", "0.2",
                    "--d2", "0.1", "--rate1", "0.2", "--rates", "0.2:0.6:5", "--corollary", "cor3",
                    "--out", path("c3.csv")}),
            0);
  EXPECT_EQ(rows(slurp(path("c3.csv"))).size(), 5u);

  ASSERT_EQ(invoke({"oracle", "--problem", kData + "/binary02.json", "--slopes", "0.5:3:4",
                    "--grid", "400", "--out", path("o.csv")}),
            0);
  for (const auto& row : rows(slurp(path("o.csv")))) EXPECT_LT(std::stod(row[3]), 1e-3);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(invoke({"rd", "--problem", kData + "/binary02.json", "--slopes", "1:2:0"}), 2);
  EXPECT_EQ(invoke({"rd", "--problem", path("missing.json"), "--slopes", "1:2:3"}), 4);
  EXPECT_EQ(invoke({"rd", "--bogus"}), 2);
  EXPECT_EQ(invoke({"sr", "--problem", kData + "/binary02.json", "--slopes", "1:2:3"}), 2);
  EXPECT_EQ(invoke({"rd", "--problem", kData + "/binary02.json", "--slopes", "1:2:3", "--out",
                    path("no/such/dir/x.csv")}),
            4);
  EXPECT_EQ(invoke({"rd", "--problem", kData + "/binary02.json", "--slopes", "1:2:3", "--out",
                    path("ok.csv")}),
            0);
}

}  // namespace
}  // namespace refine::cli
