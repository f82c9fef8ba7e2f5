#include <gtest/gtest.h>

#include "qbsde/errors.hpp"
#include "qbsde/report.hpp"

#include <cmath>
#include <sstream>

using namespace qbsde;

namespace {

const char* kMinimal = R"(
terminal:
  family: tanh
  scale: 0.01
grid:
  T: 1
  n_steps: 8
  n_paths: 500
)";

std::string config_error(const std::string& yaml)
{
    try {
        parse_config(yaml);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, MinimalUsesDefaults)
{
    const auto c = parse_config(kMinimal);
    EXPECT_EQ(c.family, GeneratorFamily::general);
    EXPECT_EQ(c.generator.terminal, TerminalCondition::tanh_of(0.01));
    EXPECT_EQ(c.grid.n_steps, 8u);
    EXPECT_EQ(c.solve, SolveOptions{});
    EXPECT_EQ(c.basis, BasisSpec{});
    EXPECT_EQ(c.output, OutputConfig{});
}

TEST(Config, RoundTripIsIdentity)
{
    for (const char* file : {"zero", "quadratic_small", "quadratic_large", "linear", "orthogonal", "general",
                             "compare_high", "compare_low"}) {
        const auto c = load_config(std::string(QBSDE_CONFIG_DIR) + "/" + file + ".yaml");
        const std::string text = emit_config(c);
        const auto back = parse_config(text);
        EXPECT_EQ(back, c) << file;
        EXPECT_EQ(emit_config(back), text) << file;
    }
}

TEST(Config, RoundTripKeepsAwkwardDoubles)
{
    auto c = parse_config(kMinimal);
    c.generator.a = TimeFunction(0.1, 1.0 / 3.0, 2.0 / 7.0);
    c.generator.terminal.scale = 0.1 + 0.2;
    c.solve.tol = 1e-13;
    c.generator.terminal.kind = TerminalKind::clipped_poly;
    c.generator.terminal.coefficients = {0.0, 1.0 / 3.0, -2.5e-7};
    EXPECT_EQ(parse_config(emit_config(c)), c);
}

TEST(Config, MissingHorizonNamesKey)
{
    const std::string msg = config_error(R"(
terminal: {family: constant}
grid: {n_steps: 8, n_paths: 100}
)");
    EXPECT_NE(msg.find("grid.T"), std::string::npos) << msg;
    EXPECT_NE(config_error("terminal: {family: constant}\n").find("grid.T"), std::string::npos);
}

TEST(Config, UnknownKeysRejected)
{
    EXPECT_NE(config_error(std::string(kMinimal) + "extra: 1\n").find("extra"), std::string::npos);
    EXPECT_NE(config_error(std::string(kMinimal) + "solver: {tolerance: 1}\n").find("solver.tolerance"),
              std::string::npos);
    EXPECT_NE(config_error(std::string(kMinimal) + "generator: {a: {level: 1, phase: 2}}\n").find("phase"),
              std::string::npos);
}

TEST(Config, IllTypedValuesRejected)
{
    EXPECT_NE(config_error(std::string(kMinimal) + "solver: {tol: fast}\n").find("solver.tol"), std::string::npos);
    EXPECT_NE(config_error(std::string(kMinimal) + "generator: {phi: cosh}\n").find("generator.phi"),
              std::string::npos);
    EXPECT_FALSE(config_error(std::string(kMinimal) + "solver: {degree: 9}\n").empty());
    EXPECT_FALSE(config_error("grid: [1, 2]\n").empty());
    EXPECT_FALSE(config_error("{unbalanced").empty());
}

TEST(Config, FamilyConstraints)
{
    EXPECT_FALSE(config_error(std::string(kMinimal) + "generator: {family: quadratic}\n").empty());
    EXPECT_FALSE(config_error(std::string(kMinimal) + "generator: {family: linear, gamma_q: 1}\n").empty());
    EXPECT_FALSE(config_error(std::string(kMinimal) + "generator: {family: orthogonal, g: 0.5}\n").empty());
    EXPECT_TRUE(config_error(std::string(kMinimal) + "generator: {family: linear, a: 0.1, b: 0.5}\n").empty());
}

TEST(Report, FieldsCsvLayoutAndDeterminism)
{
    const auto c = parse_config(kMinimal);
    const auto run = run_solve(c);
    std::ostringstream a, b;
    write_fields_csv(a, run.result.solution, 3);
    write_fields_csv(b, run_solve(c).result.solution, 3);
    EXPECT_EQ(a.str(), b.str());
    std::istringstream in(a.str());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "path_id,time_index,y,z,zeta");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    EXPECT_EQ(rows, 3u * 9u);
}

TEST(Report, SummaryCarriesOracle)
{
    auto c = parse_config(std::string(kMinimal) + "generator: {family: quadratic, gamma_q: 1}\n");
    const auto run = run_solve(c);
    const auto j = summary_json(c, run);
    for (const char* key : {"y0", "y0_se", "norms", "trace", "certificate", "oracle", "residual"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_DOUBLE_EQ(j["oracle"]["y0"].get<double>(), run.oracle->y0());
    EXPECT_LE(j["oracle"]["abs_error"].get<double>(), 3.0 * std::hypot(run.result.solution.y0_se, run.oracle->y0_se()));
    EXPECT_TRUE(j["certificate"]["pass"].get<bool>());
}

TEST(Report, ZeroGeneratorSummary)
{
    const auto c = load_config(std::string(QBSDE_CONFIG_DIR) + "/zero.yaml");
    const auto run = run_solve(c);
    const auto j = summary_json(c, run);
    EXPECT_EQ(j["y0"].get<double>(), 0.0);
    EXPECT_TRUE(j["oracle"].is_null());
    // No quadratic part: the certificate bound is unbounded and serialized as null.
    EXPECT_TRUE(j["certificate"]["bound"].is_null());
}

TEST(Report, ComparisonJson)
{
    ComparisonReport rep;
    rep.pass = true;
    rep.min_gap = 0.05;
    const auto j = to_json(rep);
    EXPECT_EQ(j["verdict"], "pass");
    EXPECT_EQ(j["min_gap"].get<double>(), 0.05);
}
