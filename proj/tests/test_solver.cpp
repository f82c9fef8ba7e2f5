#include <gtest/gtest.h>

#include "qbsde/analysis.hpp"
#include "qbsde/errors.hpp"
#include "qbsde/solver.hpp"

#include <cmath>
#include <limits>
#include <numeric>

using namespace qbsde;

namespace {

GridSpec grid(std::size_t steps, std::size_t paths, std::uint64_t seed)
{
    GridSpec g;
    g.n_steps = steps;
    g.n_paths = paths;
    g.seed = seed;
    return g;
}

GeneratorSpec quadratic(double xi_scale)
{
    GeneratorSpec gen;
    gen.gamma_q = 1.0;
    gen.terminal = TerminalCondition::tanh_of(xi_scale);
    return gen;
}

double mean(std::span<const double> v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v)
{
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

TEST(Shift, ZeroForCenteredGenerator)
{
    const auto s = solve_shift(quadratic(0.1), grid(16, 10, 0));
    EXPECT_TRUE(s.is_zero());
}

// G' = f(t, -G, 0) for f = 0.5 y + 0.1 gives G = 0.2 (1 - e^{-t/2}).
TEST(Shift, LinearGeneratorMatchesClosedForm)
{
    GeneratorSpec gen;
    gen.a = 0.1;
    gen.b = 0.5;
    const auto g = grid(32, 10, 0);
    const auto s = solve_shift(gen, g);
    for (std::size_t i = 0; i <= 32; ++i) {
        const double t = g.time(i);
        EXPECT_NEAR(s.level[i], 0.2 * (1.0 - std::exp(-0.5 * t)), 1e-12);
        EXPECT_EQ(s.rate[i], gen.f(t, -s.level[i], 0.0));
    }
}

TEST(ShiftedDriver, VanishesAtOrigin)
{
    GeneratorSpec gen;
    gen.a = TimeFunction(0.1, 0.05, 3.0);
    gen.b = 0.5;
    gen.mu = 0.2;
    gen.phi = Nonlinearity::tanh;
    const auto g = grid(16, 4, 0);
    const GeneratorDriver d(gen, g, solve_shift(gen, g));
    const std::vector<double> zeros(4, 0.0);
    std::vector<double> out(4);
    for (std::size_t i = 0; i < 16; ++i) {
        d.f(i, zeros, zeros, out);
        for (double v : out) EXPECT_EQ(v, 0.0);
    }
}

TEST(ApplyF, ZeroDataGivesZeroTriple)
{
    GeneratorSpec gen;
    gen.terminal = TerminalCondition::constant(0.0);
    const auto g = grid(8, 1000, 1);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    auto frozen = SolutionTriple::zero(g);
    for (double& v : frozen.y.values()) v = 0.3;
    for (double& v : frozen.z.values()) v = -0.2;
    const auto out = apply_F(frozen, d, ens, nullptr, BasisSpec{});
    for (double v : out.y.values()) EXPECT_EQ(v, 0.0);
    for (double v : out.z.values()) EXPECT_EQ(v, 0.0);
    for (double v : out.zeta.values()) EXPECT_EQ(v, 0.0);
}

// xi = W1_T (clipping far outside the reachable range): Y = W1, Z = 1, zeta = 0.
TEST(ApplyF, MartingaleRepresentationOfTerminalLevel)
{
    GeneratorSpec gen;
    gen.terminal.kind = TerminalKind::clipped_poly;
    gen.terminal.scale = 1.0;
    gen.terminal.coefficients = {0.0, 1.0};
    gen.terminal.clip = 100.0;
    const auto g = grid(16, 20000, 2);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto out = apply_F(SolutionTriple::zero(g), d, ens, nullptr, BasisSpec{});
    for (std::size_t i = 0; i < 16; ++i) {
        double ey = 0.0, ez = 0.0, ezeta = 0.0;
        for (std::size_t p = 0; p < 20000; ++p) {
            ey += std::pow(out.y(i, p) - ens.w1_levels(i, p), 2);
            ez += std::pow(out.z(i, p) - 1.0, 2);
            ezeta += std::pow(out.zeta(i, p), 2);
        }
        // Projection noise accumulates backward: about sqrt(p (T - t) / n), p = 10.
        EXPECT_LE(std::sqrt(ey / 20000.0), 2.0 * std::sqrt(10.0 * (1.0 - g.time(i)) / 20000.0) + 0.01)
            << "slice " << i;
        EXPECT_LE(std::sqrt(ez / 20000.0), 0.05) << "slice " << i;
        EXPECT_LE(std::sqrt(ezeta / 20000.0), 0.05) << "slice " << i;
    }
}

// From the zero triple the first iterate is the conditional mean of xi.
TEST(ApplyF, FirstIterateIsMonteCarloMean)
{
    const auto gen = quadratic(0.001);
    const auto g = grid(32, 20000, 3);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto out = apply_F(SolutionTriple::zero(g), d, ens, nullptr, BasisSpec{});
    const auto xi = terminal_values(ens, gen.terminal);
    const double se = sample_sd(xi) / std::sqrt(20000.0);
    EXPECT_NEAR(out.y(0, 0), mean(xi), 3.0 * se);
}

TEST(ApplyF, NaNStateIsReported)
{
    const auto g = grid(4, 100, 4);
    const auto ens = generate(g);
    // A valid generator evaluated at a NaN state.
    const GeneratorDriver d(quadratic(0.01), g);
    auto frozen = SolutionTriple::zero(g);
    frozen.y(1, 5) = std::numeric_limits<double>::quiet_NaN();
    frozen.z(1, 5) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(apply_F(frozen, d, ens, nullptr, BasisSpec{}), GeneratorEvaluationError);
}

TEST(SolveSmall, ZeroTerminalConvergesInOneIteration)
{
    const auto gen = quadratic(0.0);
    const auto g = grid(8, 500, 5);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto r = solve_small(d, ens, BasisSpec{}, derive_bounds(gen, 1.0));
    EXPECT_EQ(r.trace.iterations, 1u);
    EXPECT_TRUE(r.trace.ratios.empty());
    for (double v : r.solution.y.values()) EXPECT_EQ(v, 0.0);
}

TEST(SolveSmall, RejectsLargeTerminal)
{
    const auto gen = quadratic(0.5);
    const auto g = grid(8, 500, 6);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    EXPECT_THROW(solve_small(d, ens, BasisSpec{}, derive_bounds(gen, 1.0)), SmallnessViolated);
}

TEST(SolveSmall, ReportsNoConvergence)
{
    const auto gen = quadratic(0.003);
    const auto g = grid(8, 2000, 7);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    SolveOptions o;
    o.tol = 0.0;
    o.max_iter = 2;
    try {
        solve_small(d, ens, BasisSpec{}, derive_bounds(gen, 1.0), o);
        FAIL() << "expected NoConvergence";
    } catch (const NoConvergence& e) {
        EXPECT_EQ(e.iterations(), 2u);
        EXPECT_GT(e.last_distance(), 0.0);
    }
}

// Small quadratic problem: contraction, ball invariance, residual, terminal
// exactness and agreement with the Cole-Hopf oracle.
TEST(SolveSmall, QuadraticSmallRegime)
{
    const auto gen = quadratic(0.003);
    const auto g = grid(32, 20000, 8);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto bounds = derive_bounds(gen, 1.0);
    SolveOptions o;
    o.tol = 0.0;
    const auto r = solve_small(d, ens, BasisSpec{}, bounds, o);

    EXPECT_GE(r.trace.iterations, 3u);
    EXPECT_EQ(r.trace.ball_violations, 0u);
    for (double q : r.trace.ratios) EXPECT_LT(q, 1.0);
    EXPECT_LE(r.trace.fitted_rate, 2.0 * contraction_factor(8.0, ball_radius(0.003)));
    EXPECT_LE(r.solution.residual, 1e-4);

    const auto xi = terminal_values(ens, gen.terminal);
    for (std::size_t p = 0; p < xi.size(); ++p) ASSERT_EQ(r.solution.y(32, p), xi[p]);

    const auto oracle = oracle_cole_hopf(1.0, ens, gen.terminal, BasisSpec{});
    EXPECT_NEAR(r.solution.y0, oracle.y0(), std::max(0.01 * std::abs(oracle.y0()), 1e-5));
}

TEST(SolveSmall, FixedPointIndependentOfStart)
{
    const auto gen = quadratic(0.003);
    const auto g = grid(16, 10000, 9);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto bounds = derive_bounds(gen, 1.0);
    SolveOptions o;
    const auto a = solve_small(d, ens, BasisSpec{}, bounds, o);

    auto start = SolutionTriple::zero(g);
    for (std::size_t i = 0; i <= 16; ++i)
        for (std::size_t p = 0; p < 10000; ++p) {
            start.y(i, p) = 0.002 * std::sin(ens.w1_levels(i, p));
            start.z(i, p) = 0.001;
        }
    const auto b = solve_small(d, ens, BasisSpec{}, bounds, o, nullptr, &start);
    const auto n = estimate_norms(
        [&] { Field f = a.solution.y; for (std::size_t k = 0; k < f.values().size(); ++k) f.values()[k] -= b.solution.y.values()[k]; return f; }(),
        [&] { Field f = a.solution.z; for (std::size_t k = 0; k < f.values().size(); ++k) f.values()[k] -= b.solution.z.values()[k]; return f; }(),
        [&] { Field f = a.solution.zeta; for (std::size_t k = 0; k < f.values().size(); ++k) f.values()[k] -= b.solution.zeta.values()[k]; return f; }(),
        ens, 1.0, BasisSpec{});
    EXPECT_LE(std::sqrt(n.triple_sq), 3.0 * o.tol);
}

TEST(SplitTerminal, Arithmetic)
{
    const auto tc = TerminalCondition::tanh_of(0.1);
    const auto pieces = split_terminal(tc, 0.03125);
    ASSERT_EQ(pieces.size(), 4u);
    for (const auto& p : pieces) {
        EXPECT_EQ(p, tc.scaled(0.25));
        EXPECT_LE(p.sup_norm(), 0.025 + 1e-15);
    }
    EXPECT_EQ(split_terminal(TerminalCondition::constant(0.0), 0.01).size(), 1u);
    EXPECT_EQ(split_terminal(TerminalCondition::tanh_of(1.0), 1.0 / 256.0).size(), 320u);
    EXPECT_EQ(split_terminal(TerminalCondition::tanh_of(0.001), 1.0 / 256.0).size(), 1u);
    EXPECT_THROW(split_terminal(tc, 0.0), InvalidArgument);
}

TEST(Transform, IdentityParamsLeaveSolutionUnchanged)
{
    const auto g = grid(8, 300, 10);
    const auto ens = generate(g);
    const GeneratorDriver d(quadratic(0.01), g);
    const auto params = linearize(d, ens, 0.0);
    EXPECT_TRUE(params.is_identity());
    auto sol = SolutionTriple::zero(g);
    for (std::size_t k = 0; k < sol.y.values().size(); ++k) {
        sol.y.values()[k] = 0.1 * static_cast<double>(k % 7) - 0.3;
        sol.z.values()[k] = 0.01 * static_cast<double>(k % 5);
    }
    const auto out = untransform_solution(sol, params);
    EXPECT_EQ(out.y, sol.y);
    EXPECT_EQ(out.z, sol.z);
    EXPECT_EQ(out.zeta, sol.zeta);
}

// alpha == a, gamma == 0, xi == c: xibar = c e^{aT}, gbar = g e^{-a t}.
TEST(Transform, ConstantAlphaSubstitution)
{
    GeneratorSpec gen;
    gen.b = 0.4;
    gen.g = 0.3;
    gen.terminal = TerminalCondition::constant(0.2);
    const auto g = grid(16, 50, 11);
    const auto ens = generate(g);
    auto base = std::make_shared<const GeneratorDriver>(gen, g);
    auto params = std::make_shared<const TransformParams>(linearize(*base, ens, 0.4));
    const auto tf = transform_generator(base, params, ens);
    const auto xi = tf.driver->terminal(ens);
    for (double v : xi) EXPECT_NEAR(v, 0.2 * std::exp(0.4), 1e-12);
    std::vector<double> gv(50);
    for (std::size_t i = 0; i < 16; ++i) {
        tf.driver->g(i, gv);
        for (double v : gv) EXPECT_NEAR(v, 0.3 * std::exp(-0.4 * g.time(i)), 1e-12);
    }
    for (double w : tf.weights.at(16)) EXPECT_EQ(w, 1.0);

    // Ybar == c untransforms to c e^{-a t}.
    auto sol = SolutionTriple::zero(g);
    sol.y.fill(0.7);
    const auto out = untransform_solution(sol, *params);
    for (std::size_t i = 0; i <= 16; ++i) EXPECT_NEAR(out.y(i, 3), 0.7 * std::exp(-0.4 * g.time(i)), 1e-12);
}

TEST(Transform, RemovesLinearization)
{
    GeneratorSpec gen;
    gen.b = 0.3;
    gen.c = 0.2;
    gen.gamma_q = 1.0;
    const auto g = grid(8, 20, 12);
    const auto ens = generate(g);
    auto base = std::make_shared<const GeneratorDriver>(gen, g);
    auto params = std::make_shared<const TransformParams>(linearize(*base, ens, 0.3));
    const auto tf = transform_generator(base, params, ens);
    const std::vector<double> zeros(20, 0.0);
    std::vector<double> fy(20), fu(20), f0(20);
    for (std::size_t i = 0; i < 8; ++i) {
        tf.driver->grad(i, zeros, zeros, fy, fu);
        tf.driver->f(i, zeros, zeros, f0);
        for (std::size_t p = 0; p < 20; ++p) {
            EXPECT_NEAR(fy[p], 0.0, 1e-15);
            EXPECT_NEAR(fu[p], 0.0, 1e-15);
            EXPECT_EQ(f0[p], 0.0);
        }
    }
}

TEST(TransformedBounds, GrowByExponentialOfIntegratedR)
{
    CoefficientBounds b;
    b.theta = 1.0;
    b.r2_int_inf = 0.09;
    b.r_int_inf = 0.3;
    b.beta = 8.0;
    const auto t = transformed_bounds(b);
    EXPECT_NEAR(t.beta, 8.0 * std::exp(0.3), 1e-12);
    EXPECT_NEAR(t.theta, std::exp(0.15), 1e-12);
    EXPECT_NEAR(t.beta, contraction_scale(t.r2_int_inf, t.theta), 1e-12);
}

// Below the threshold with f(t, 0, 0) = 0 the chain is a single solve_small.
TEST(SolveChain, SinglePieceIsBitwiseSolveSmall)
{
    const auto gen = quadratic(0.002);
    const auto g = grid(16, 5000, 13);
    const auto ens = generate(g);
    const GeneratorDriver d(gen, g);
    const auto small = solve_small(d, ens, BasisSpec{}, derive_bounds(gen, 1.0));
    const auto chain = solve_chain(gen, ens, BasisSpec{});
    EXPECT_EQ(chain.trace.pieces, 1u);
    EXPECT_EQ(chain.solution.y, small.solution.y);
    EXPECT_EQ(chain.solution.z, small.solution.z);
    EXPECT_EQ(chain.solution.zeta, small.solution.zeta);
}

TEST(SolveChain, ConstantGeneratorIntegratesDeterministically)
{
    GeneratorSpec gen;
    gen.a = 0.3;
    gen.terminal = TerminalCondition::tanh_of(0.4);
    const auto g = grid(16, 20000, 14);
    const auto ens = generate(g);
    const auto r = solve_chain(gen, ens, BasisSpec{});
    const auto xi = terminal_values(ens, gen.terminal);
    EXPECT_NEAR(r.solution.y0, mean(xi) + 0.3, 1e-12);
    EXPECT_NEAR(r.solution.y0_se, sample_sd(xi) / std::sqrt(20000.0), 1e-6);
}

TEST(SolveChain, TerminalSliceIsExact)
{
    GeneratorSpec gen = quadratic(0.05);
    gen.a = 0.1;
    const auto g = grid(16, 4000, 15);
    const auto ens = generate(g);
    const auto r = solve_chain(gen, ens, BasisSpec{});
    EXPECT_GT(r.trace.pieces, 1u);
    const auto xi = terminal_values(ens, gen.terminal);
    for (std::size_t p = 0; p < xi.size(); ++p) ASSERT_EQ(r.solution.y(16, p), xi[p]);
}

TEST(SolveChain, SplittingCapIsEnforced)
{
    const auto gen = quadratic(0.5);
    const auto g = grid(8, 500, 16);
    const auto ens = generate(g);
    SolveOptions o;
    o.splitting_cap = 64;
    EXPECT_THROW(solve_chain(gen, ens, BasisSpec{}, o), SplittingCapExceeded);
}

TEST(SolveChain, WeightDegeneracyNamesStage)
{
    const auto gen = quadratic(0.05);
    const auto g = grid(8, 2000, 17);
    const auto ens = generate(g);
    SolveOptions o;
    o.weights.ess_floor = 0.99999999;
    try {
        solve_chain(gen, ens, BasisSpec{}, o);
        FAIL() << "expected WeightDegeneracy";
    } catch (const WeightDegeneracy& e) {
        EXPECT_NE(std::string(e.what()).find("stage 2"), std::string::npos) << e.what();
    }
}

// Two-piece split agrees with a direct solve when the full terminal is small.
TEST(SolveChain, TwoPieceAdditivity)
{
    const auto gen = quadratic(0.0035);
    const auto g = grid(16, 10000, 18);
    const auto ens = generate(g);
    const auto bounds = derive_bounds(gen, 1.0);
    ASSERT_LE(0.0035, contraction_threshold(bounds));
    const GeneratorDriver d(gen, g);
    const auto direct = solve_small(d, ens, BasisSpec{}, bounds);
    const auto chain = solve_chain(gen, ens, BasisSpec{});
    ASSERT_EQ(chain.trace.pieces, 2u);
    const double tol = 3.0 * std::hypot(direct.solution.y0_se, chain.solution.y0_se);
    EXPECT_NEAR(chain.solution.y0, direct.solution.y0, tol);
    for (std::size_t i = 0; i <= 16; i += 4) {
        double worst = 0.0;
        for (std::size_t p = 0; p < 10000; ++p)
            worst = std::max(worst, std::abs(chain.solution.y(i, p) - direct.solution.y(i, p)));
        EXPECT_LE(worst, 3.0 * std::hypot(direct.solution.y_se[i], chain.solution.y_se[i])) << "slice " << i;
    }
}

TEST(Solve, ZeroProblemGivesZeroTriple)
{
    GeneratorSpec gen;
    const auto r = solve(gen, grid(8, 500, 19), BasisSpec{});
    for (double v : r.solution.y.values()) EXPECT_EQ(v, 0.0);
    for (double v : r.solution.z.values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.solution.norms.triple_sq, 0.0);
}

TEST(Solve, DeterministicForFixedSeed)
{
    const auto gen = quadratic(0.02);
    const auto a = solve(gen, grid(8, 2000, 20), BasisSpec{});
    const auto b = solve(gen, grid(8, 2000, 20), BasisSpec{});
    EXPECT_EQ(a.solution.y, b.solution.y);
    EXPECT_EQ(a.solution.z, b.solution.z);
    EXPECT_EQ(a.trace.total_iterations, b.trace.total_iterations);
}

TEST(Solve, LinearGeneratorMatchesOracle)
{
    GeneratorSpec gen;
    gen.a = 0.1;
    gen.b = 0.5;
    gen.terminal = TerminalCondition::tanh_of(0.2);
    const auto g = grid(16, 20000, 21);
    const auto ens = generate(g);
    const auto r = solve_chain(gen, ens, BasisSpec{});
    const auto o = oracle_linear(0.5, 0.1, ens, gen.terminal, BasisSpec{});
    EXPECT_NEAR(r.solution.y0, o.y0(), 3.0 * std::hypot(r.solution.y0_se, o.y0_se()));
}

TEST(Solve, OrthogonalBracketMatchesOracle)
{
    GeneratorSpec gen;
    gen.g = 0.5;
    gen.terminal = TerminalCondition::tanh_of(0.01, 0.0, 1.0);
    BasisSpec b;
    b.degree = 6;
    b.use_w1 = false;
    const auto g = grid(32, 20000, 22);
    const auto ens = generate(g);
    const auto r = solve_chain(gen, ens, b);
    const auto o = oracle_orthogonal(0.5, ens, gen.terminal, b);
    // Paired comparison: the bracket contribution is what differs.
    const auto xi = terminal_values(ens, gen.terminal);
    const double m = mean(xi);
    EXPECT_NEAR(r.solution.y0 - m, o.y0() - m, 0.02 * (o.y0() - m));
}
