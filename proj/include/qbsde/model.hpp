#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace qbsde {

/// Uniform time grid t_i = i*T/n_steps together with the ensemble size and seed.
struct GridSpec {
    double horizon = 1.0;
    std::size_t n_steps = 64;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 0;

    double dt() const { return horizon / static_cast<double>(n_steps); }
    double time(std::size_t i) const;

    /// Throws InvalidArgument when T <= 0, n_steps < 1 or n_paths < 2.
    void validate() const;

    bool operator==(const GridSpec&) const = default;
};

/// Deterministic coefficient c(t) = level + amplitude * cos(frequency * t).
struct TimeFunction {
    double level = 0.0;
    double amplitude = 0.0;
    double frequency = 0.0;

    constexpr TimeFunction() = default;
    constexpr TimeFunction(double constant) : level(constant) {}
    constexpr TimeFunction(double lvl, double amp, double freq)
        : level(lvl), amplitude(amp), frequency(freq) {}

    double operator()(double t) const;
    double sup_abs() const;
    /// Lower bound of |c(t)| over all t (0 if the cosine can cross zero).
    double inf_abs() const;
    /// Closed-form integral over [0, t].
    double integral(double t) const;
    bool is_constant() const { return amplitude == 0.0 || frequency == 0.0; }
    bool is_zero() const { return level == 0.0 && amplitude == 0.0; }
    bool finite() const;

    bool operator==(const TimeFunction&) const = default;
};

enum class Nonlinearity { none, tanh, sin };

std::string_view to_string(Nonlinearity phi);
Nonlinearity parse_nonlinearity(std::string_view name);

enum class TerminalKind { constant, tanh, sin, clipped_poly };

std::string_view to_string(TerminalKind kind);
TerminalKind parse_terminal_kind(std::string_view name);

/// Bounded terminal functional xi = h(W1_T, W2_T).
///
/// With x = load_w1 * w1 + load_w2 * w2 the families are
///   constant:      h = offset
///   tanh, sin:     h = offset + scale * phi(x)
///   clipped_poly:  h = offset + scale * clamp(sum_k coeffs[k] x^k, -clip, clip)
struct TerminalCondition {
    TerminalKind kind = TerminalKind::constant;
    double scale = 0.0;
    double offset = 0.0;
    double load_w1 = 1.0;
    double load_w2 = 0.0;
    std::vector<double> coefficients;
    double clip = 1.0;

    double operator()(double w1, double w2) const;

    /// Analytic sup |h|; a true upper bound for every argument.
    double sup_norm() const;

    /// h -> c * h (used by the splitting chain).
    TerminalCondition scaled(double c) const;

    /// h -> h + c.
    TerminalCondition shifted(double c) const;

    bool depends_on_w1() const;
    bool depends_on_w2() const;

    void validate() const;

    bool operator==(const TerminalCondition&) const = default;

    static TerminalCondition constant(double value);
    static TerminalCondition tanh_of(double scale, double load_w1 = 1.0, double load_w2 = 0.0);
    static TerminalCondition sin_of(double scale, double load_w1 = 1.0, double load_w2 = 0.0);
};

/// The generator (f, g, xi) restricted to the closed parametric family
///
///   f(t, y, u) = a(t) + b(t) y + c(t) u + (gamma_q / 2) u^2 + mu * phi(y)
///
/// where u = sigma(t) * z is the integrand seen through the driving martingale.
struct GeneratorSpec {
    TimeFunction a;
    TimeFunction b;
    TimeFunction c;
    double gamma_q = 0.0;
    double mu = 0.0;
    Nonlinearity phi = Nonlinearity::none;
    TimeFunction g;
    TimeFunction sigma{1.0};
    TerminalCondition terminal;

    double f(double t, double y, double u) const;
    double f_y(double t, double y, double u) const;
    double f_u(double t, double y, double u) const;
    double f_yy(double t, double y, double u) const;
    double f_yu(double t, double y, double u) const;
    double f_uu(double t, double y, double u) const;

    /// Throws InvalidArgument for sigma that is not bounded away from zero.
    void validate() const;

    bool operator==(const GeneratorSpec&) const = default;
};

/// Growth constants (theta, r) of a generator plus the contraction scale beta.
struct CoefficientBounds {
    double theta = 0.0;
    std::function<double(double)> r_fn;
    double r2_int_inf = 0.0;  // ||int_0^T r_s^2 ds||
    double r_int_inf = 0.0;   // ||int_0^T r_s ds||
    double beta = 0.0;        // 8 * max(r2_int_inf, theta^2)
    std::function<double(double)> alpha_fn;
    std::function<double(double)> gamma_fn;
};

double contraction_scale(double r2_int_inf, double theta);

/// Analytic growth bounds of a family member over [0, horizon].
CoefficientBounds derive_bounds(const GeneratorSpec& gen, double horizon);

/// (1 / (32 beta)) * exp(-2 * r_int_inf). Throws DegenerateBounds when beta == 0.
double smallness_threshold(const CoefficientBounds& bounds);

/// Like smallness_threshold but returns +infinity for beta == 0 (globally
/// Lipschitz, no quadratic part): no splitting is required.
double splitting_threshold(const CoefficientBounds& bounds);

/// Strict size limit for the contraction on the ball when alpha = gamma = 0:
/// 1 / (32 beta), +infinity for beta == 0.
double contraction_threshold(const CoefficientBounds& bounds);

/// R = 2 sqrt(2) * xi_sup.
double ball_radius(double xi_sup);

/// 4 xi^2 + beta^2 R^4 <= R^2.
bool ball_inequality_holds(double xi_sup, double beta, double radius);

/// Contraction factor 128 beta^2 R^2 of the Picard map on the ball.
double contraction_factor(double beta, double radius);

} // namespace qbsde
