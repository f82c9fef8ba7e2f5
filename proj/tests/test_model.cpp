#include <gtest/gtest.h>

#include "qbsde/errors.hpp"
#include "qbsde/model.hpp"

#include <cmath>
#include <random>

using namespace qbsde;

namespace {

GeneratorSpec pure_quadratic(double gamma_q)
{
    GeneratorSpec g;
    g.gamma_q = gamma_q;
    return g;
}

} // namespace

TEST(GridSpec, RejectsInvalidGrids)
{
    GridSpec g;
    g.n_steps = 0;
    EXPECT_THROW(g.validate(), InvalidArgument);
    g = GridSpec{};
    g.n_paths = 1;
    EXPECT_THROW(g.validate(), InvalidArgument);
    g = GridSpec{};
    g.horizon = 0.0;
    EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(GridSpec, TimesIncreaseFromZeroToHorizon)
{
    GridSpec g;
    g.horizon = 0.7;
    g.n_steps = 13;
    EXPECT_EQ(g.time(0), 0.0);
    EXPECT_EQ(g.time(g.n_steps), 0.7);
    for (std::size_t i = 0; i < g.n_steps; ++i) EXPECT_LT(g.time(i), g.time(i + 1));
}

TEST(DeriveBounds, PureQuadratic)
{
    const auto b = derive_bounds(pure_quadratic(1.0), 1.0);
    EXPECT_DOUBLE_EQ(b.theta, 1.0);
    EXPECT_DOUBLE_EQ(b.r_fn(0.3), 0.0);
    EXPECT_DOUBLE_EQ(b.beta, 8.0);
}

TEST(DeriveBounds, AffineInY)
{
    GeneratorSpec g;
    g.a = 0.1;
    g.b = 0.5;
    const auto b = derive_bounds(g, 1.0);
    EXPECT_DOUBLE_EQ(b.theta, 0.0);
    EXPECT_DOUBLE_EQ(b.r_fn(0.5), 0.5);
    EXPECT_DOUBLE_EQ(b.r2_int_inf, 0.25);
    EXPECT_DOUBLE_EQ(b.beta, 2.0);
}

TEST(DeriveBounds, QuadraticCoefficientFour)
{
    const auto b = derive_bounds(pure_quadratic(4.0), 1.0);
    EXPECT_DOUBLE_EQ(b.theta, 2.0);
    EXPECT_DOUBLE_EQ(b.beta, 32.0);
}

TEST(DeriveBounds, ThetaCoversBracketCoefficient)
{
    GeneratorSpec g;
    g.g = 0.5;
    const auto b = derive_bounds(g, 1.0);
    EXPECT_GE(b.theta * b.theta, 0.5);
}

TEST(DeriveBounds, NonFiniteCoefficientIsUnbounded)
{
    GeneratorSpec g;
    g.b = std::numeric_limits<double>::infinity();
    EXPECT_THROW(derive_bounds(g, 1.0), UnboundedGenerator);
}

TEST(DeriveBounds, TimeVaryingIntegralsMatchQuadrature)
{
    GeneratorSpec g;
    g.b = TimeFunction(0.2, 0.3, 2.0);
    const auto b = derive_bounds(g, 1.5);
    // |0.2 + 0.3 cos 2t| integrated by a fine midpoint rule.
    const int n = 200000;
    double i1 = 0.0, i2 = 0.0;
    for (int k = 0; k < n; ++k) {
        const double t = (k + 0.5) * 1.5 / n;
        const double r = std::abs(0.2 + 0.3 * std::cos(2.0 * t));
        i1 += r * 1.5 / n;
        i2 += r * r * 1.5 / n;
    }
    EXPECT_NEAR(b.r_int_inf, i1, 1e-8);
    EXPECT_NEAR(b.r2_int_inf, i2, 1e-8);
}

// Sampled derivatives never exceed the reported bounds.
TEST(DeriveBounds, BoundsDominateSampledDerivatives)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    std::uniform_real_distribution<double> box(-3.0, 3.0);
    for (int family = 0; family < 40; ++family) {
        GeneratorSpec g;
        g.a = TimeFunction(coef(rng), coef(rng), 3.0 * std::abs(coef(rng)));
        g.b = TimeFunction(coef(rng), coef(rng), 3.0 * std::abs(coef(rng)));
        g.c = TimeFunction(coef(rng), 0.0, 0.0);
        g.gamma_q = 2.0 * coef(rng);
        g.mu = coef(rng);
        g.phi = family % 2 ? Nonlinearity::tanh : Nonlinearity::sin;
        g.g = TimeFunction(coef(rng), coef(rng), 1.0);
        const auto b = derive_bounds(g, 1.0);
        for (int k = 0; k < 1000; ++k) {
            const double t = 0.5 * (box(rng) + 3.0) / 3.0;
            const double y = box(rng);
            const double u = box(rng);
            const double r = b.r_fn(t);
            EXPECT_LE(std::abs(g.f_y(t, y, u)), r + 1e-12);
            EXPECT_LE(std::abs(g.f_yy(t, y, u)), r * r + 1e-12);
            EXPECT_LE(std::abs(g.f_yu(t, y, u)), b.theta * r + 1e-12);
            EXPECT_LE(std::abs(g.f_uu(t, y, u)), b.theta * b.theta + 1e-12);
            EXPECT_LE(std::abs(g.g(t)), b.theta * b.theta + 1e-12);
        }
    }
}

TEST(DeriveBounds, BetaMonotoneInThetaAndR)
{
    double last = 0.0;
    for (double theta = 0.0; theta < 3.0; theta += 0.25) {
        const double b = contraction_scale(0.5, theta);
        EXPECT_GE(b, last);
        last = b;
    }
    last = 0.0;
    for (double r2 = 0.0; r2 < 3.0; r2 += 0.25) {
        const double b = contraction_scale(r2, 0.7);
        EXPECT_GE(b, last);
        last = b;
    }
}

TEST(Thresholds, SmallnessThresholdValues)
{
    CoefficientBounds b;
    b.beta = 8.0;
    EXPECT_DOUBLE_EQ(smallness_threshold(b), 0.00390625);
    b.beta = 2.0;
    b.r_int_inf = 0.5;
    EXPECT_NEAR(smallness_threshold(b), std::exp(-1.0) / 64.0, 1e-15);
    EXPECT_NEAR(smallness_threshold(b), 0.005748, 5e-7);
    b.beta = 32.0;
    b.r_int_inf = 0.0;
    EXPECT_DOUBLE_EQ(smallness_threshold(b), 1.0 / 1024.0);
}

TEST(Thresholds, ZeroBetaIsDegenerateOrUnrestricted)
{
    CoefficientBounds b;
    EXPECT_THROW(smallness_threshold(b), DegenerateBounds);
    EXPECT_TRUE(std::isinf(splitting_threshold(b)));
    EXPECT_TRUE(std::isinf(contraction_threshold(b)));
}

TEST(BallRadius, Values)
{
    EXPECT_EQ(ball_radius(0.0), 0.0);
    EXPECT_NEAR(ball_radius(0.001), 0.0028284271247461905, 1e-18);
    EXPECT_THROW(ball_radius(-1.0), InvalidArgument);
}

TEST(BallRadius, InequalityAtThreshold)
{
    const double xi = 1.0 / 256.0;
    const double r = ball_radius(xi);
    EXPECT_NEAR(r, std::sqrt(2.0) / 128.0, 1e-17);
    EXPECT_LE(4.0 * xi * xi + 64.0 * std::pow(r, 4), r * r);
    EXPECT_TRUE(ball_inequality_holds(xi, 8.0, r));
    // Below the threshold the inequality keeps holding.
    for (double x = 1e-6; x <= xi; x *= 1.7) EXPECT_TRUE(ball_inequality_holds(x, 8.0, ball_radius(x)));
}

TEST(BallRadius, PositivelyHomogeneous)
{
    for (double c : {0.0, 0.5, 1.0, 3.0, 1e3})
        for (double x : {0.0, 1e-3, 0.25, 7.0}) EXPECT_NEAR(ball_radius(c * x), c * ball_radius(x), 1e-15 * (1 + c * x));
}

TEST(TerminalCondition, SupNormBoundsSampledValues)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> w(0.0, 2.0);
    std::vector<TerminalCondition> family = {
        TerminalCondition::constant(-0.3),
        TerminalCondition::tanh_of(0.5, 1.0, -0.4),
        TerminalCondition::sin_of(-0.2, 0.3, 2.0),
    };
    TerminalCondition poly;
    poly.kind = TerminalKind::clipped_poly;
    poly.scale = 0.7;
    poly.offset = 0.1;
    poly.coefficients = {0.1, -1.0, 0.5, 0.25};
    poly.clip = 1.5;
    family.push_back(poly);
    for (const auto& tc : family)
        for (int k = 0; k < 20000; ++k) EXPECT_LE(std::abs(tc(w(rng), w(rng))), tc.sup_norm() + 1e-15);
}

TEST(TerminalCondition, ScaledPiecesSumBack)
{
    const auto tc = TerminalCondition::tanh_of(0.5).shifted(0.1);
    const auto piece = tc.scaled(0.25);
    EXPECT_NEAR(4.0 * piece(0.3, 0.0), tc(0.3, 0.0), 1e-15);
    EXPECT_NEAR(piece.sup_norm(), tc.sup_norm() / 4.0, 1e-16);
}

TEST(TerminalCondition, FamilyNamesRoundTrip)
{
    for (auto k : {TerminalKind::constant, TerminalKind::tanh, TerminalKind::sin, TerminalKind::clipped_poly})
        EXPECT_EQ(parse_terminal_kind(to_string(k)), k);
    for (auto p : {Nonlinearity::none, Nonlinearity::tanh, Nonlinearity::sin})
        EXPECT_EQ(parse_nonlinearity(to_string(p)), p);
    EXPECT_THROW(parse_terminal_kind("cubic"), InvalidArgument);
}

TEST(GeneratorSpec, SigmaMustStayAwayFromZero)
{
    GeneratorSpec g;
    g.sigma = TimeFunction(0.5, 0.5, 1.0);
    EXPECT_THROW(g.validate(), InvalidArgument);
    g.sigma = TimeFunction(1.0, 0.5, 1.0);
    EXPECT_NO_THROW(g.validate());
}

TEST(GeneratorSpec, DerivativesMatchFiniteDifferences)
{
    GeneratorSpec g;
    g.a = 0.1;
    g.b = TimeFunction(0.2, 0.1, 1.0);
    g.c = -0.3;
    g.gamma_q = 1.3;
    g.mu = 0.4;
    g.phi = Nonlinearity::tanh;
    const double h = 1e-5;
    for (double y : {-1.0, 0.0, 0.7})
        for (double u : {-0.5, 0.2}) {
            const double t = 0.4;
            EXPECT_NEAR(g.f_y(t, y, u), (g.f(t, y + h, u) - g.f(t, y - h, u)) / (2 * h), 1e-8);
            EXPECT_NEAR(g.f_u(t, y, u), (g.f(t, y, u + h) - g.f(t, y, u - h)) / (2 * h), 1e-8);
            EXPECT_NEAR(g.f_yy(t, y, u), (g.f_y(t, y + h, u) - g.f_y(t, y - h, u)) / (2 * h), 1e-7);
        }
}
