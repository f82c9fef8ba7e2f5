#include "qbsde/model.hpp"

#include "qbsde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace qbsde {

namespace {

double phi_value(Nonlinearity phi, double y)
{
    switch (phi) {
    case Nonlinearity::tanh: return std::tanh(y);
    case Nonlinearity::sin: return std::sin(y);
    case Nonlinearity::none: break;
    }
    return 0.0;
}

double phi_d1(Nonlinearity phi, double y)
{
    switch (phi) {
    case Nonlinearity::tanh: {
        const double th = std::tanh(y);
        return 1.0 - th * th;
    }
    case Nonlinearity::sin: return std::cos(y);
    case Nonlinearity::none: break;
    }
    return 0.0;
}

double phi_d2(Nonlinearity phi, double y)
{
    switch (phi) {
    case Nonlinearity::tanh: {
        const double th = std::tanh(y);
        return -2.0 * th * (1.0 - th * th);
    }
    case Nonlinearity::sin: return -std::sin(y);
    case Nonlinearity::none: break;
    }
    return 0.0;
}

// sup |phi'| and sup |phi''| over the real line.
double phi_d1_sup(Nonlinearity phi) { return phi == Nonlinearity::none ? 0.0 : 1.0; }

double phi_d2_sup(Nonlinearity phi)
{
    switch (phi) {
    case Nonlinearity::tanh: return 4.0 / (3.0 * std::sqrt(3.0));
    case Nonlinearity::sin: return 1.0;
    case Nonlinearity::none: break;
    }
    return 0.0;
}

double integrate(const std::function<double(double)>& fn, double horizon)
{
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 31>::integrate(fn, 0.0, horizon, 20, 1e-13);
}

} // namespace

double GridSpec::time(std::size_t i) const
{
    if (i == n_steps) return horizon;
    return horizon * static_cast<double>(i) / static_cast<double>(n_steps);
}

void GridSpec::validate() const
{
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw InvalidArgument("grid: horizon T must be a positive finite number");
    if (n_steps < 1) throw InvalidArgument("grid: n_steps must be >= 1");
    if (n_paths < 2) throw InvalidArgument("grid: n_paths must be >= 2");
}

double TimeFunction::operator()(double t) const
{
    if (frequency == 0.0) return level + amplitude;
    return level + amplitude * std::cos(frequency * t);
}

double TimeFunction::sup_abs() const
{
    if (frequency == 0.0) return std::abs(level + amplitude);
    return std::abs(level) + std::abs(amplitude);
}

double TimeFunction::inf_abs() const
{
    if (frequency == 0.0) return std::abs(level + amplitude);
    return std::max(0.0, std::abs(level) - std::abs(amplitude));
}

double TimeFunction::integral(double t) const
{
    if (frequency == 0.0) return (level + amplitude) * t;
    return level * t + amplitude * std::sin(frequency * t) / frequency;
}

bool TimeFunction::finite() const
{
    return std::isfinite(level) && std::isfinite(amplitude) && std::isfinite(frequency);
}

std::string_view to_string(Nonlinearity phi)
{
    switch (phi) {
    case Nonlinearity::none: return "none";
    case Nonlinearity::tanh: return "tanh";
    case Nonlinearity::sin: return "sin";
    }
    return "none";
}

Nonlinearity parse_nonlinearity(std::string_view name)
{
    if (name == "none") return Nonlinearity::none;
    if (name == "tanh") return Nonlinearity::tanh;
    if (name == "sin") return Nonlinearity::sin;
    throw InvalidArgument("unknown nonlinearity '" + std::string(name) + "'");
}

std::string_view to_string(TerminalKind kind)
{
    switch (kind) {
    case TerminalKind::constant: return "constant";
    case TerminalKind::tanh: return "tanh";
    case TerminalKind::sin: return "sin";
    case TerminalKind::clipped_poly: return "clipped_poly";
    }
    return "constant";
}

TerminalKind parse_terminal_kind(std::string_view name)
{
    if (name == "constant") return TerminalKind::constant;
    if (name == "tanh") return TerminalKind::tanh;
    if (name == "sin") return TerminalKind::sin;
    if (name == "clipped_poly") return TerminalKind::clipped_poly;
    throw InvalidArgument("unknown terminal family '" + std::string(name) + "'");
}

double TerminalCondition::operator()(double w1, double w2) const
{
    if (kind == TerminalKind::constant) return offset;
    const double x = load_w1 * w1 + load_w2 * w2;
    switch (kind) {
    case TerminalKind::tanh: return offset + scale * std::tanh(x);
    case TerminalKind::sin: return offset + scale * std::sin(x);
    case TerminalKind::clipped_poly: {
        double acc = 0.0;
        for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it)
            acc = acc * x + *it;
        return offset + scale * std::clamp(acc, -clip, clip);
    }
    case TerminalKind::constant: break;
    }
    return offset;
}

double TerminalCondition::sup_norm() const
{
    switch (kind) {
    case TerminalKind::constant: return std::abs(offset);
    case TerminalKind::tanh:
    case TerminalKind::sin: return std::abs(offset) + std::abs(scale);
    case TerminalKind::clipped_poly: return std::abs(offset) + std::abs(scale) * clip;
    }
    return std::abs(offset);
}

TerminalCondition TerminalCondition::scaled(double c) const
{
    TerminalCondition out = *this;
    out.scale *= c;
    out.offset *= c;
    return out;
}

TerminalCondition TerminalCondition::shifted(double c) const
{
    TerminalCondition out = *this;
    out.offset += c;
    return out;
}

bool TerminalCondition::depends_on_w1() const
{
    return kind != TerminalKind::constant && scale != 0.0 && load_w1 != 0.0;
}

bool TerminalCondition::depends_on_w2() const
{
    return kind != TerminalKind::constant && scale != 0.0 && load_w2 != 0.0;
}

void TerminalCondition::validate() const
{
    if (!std::isfinite(scale) || !std::isfinite(offset) || !std::isfinite(load_w1) ||
        !std::isfinite(load_w2))
        throw InvalidArgument("terminal: coefficients must be finite");
    if (kind == TerminalKind::clipped_poly) {
        if (!(clip > 0.0) || !std::isfinite(clip))
            throw InvalidArgument("terminal: clipped_poly needs a positive finite clip");
        if (coefficients.empty())
            throw InvalidArgument("terminal: clipped_poly needs at least one coefficient");
        for (double c : coefficients)
            if (!std::isfinite(c)) throw InvalidArgument("terminal: non-finite coefficient");
    }
}

TerminalCondition TerminalCondition::constant(double value)
{
    TerminalCondition tc;
    tc.kind = TerminalKind::constant;
    tc.offset = value;
    return tc;
}

TerminalCondition TerminalCondition::tanh_of(double scale, double load_w1, double load_w2)
{
    TerminalCondition tc;
    tc.kind = TerminalKind::tanh;
    tc.scale = scale;
    tc.load_w1 = load_w1;
    tc.load_w2 = load_w2;
    return tc;
}

TerminalCondition TerminalCondition::sin_of(double scale, double load_w1, double load_w2)
{
    TerminalCondition tc = tanh_of(scale, load_w1, load_w2);
    tc.kind = TerminalKind::sin;
    return tc;
}

double GeneratorSpec::f(double t, double y, double u) const
{
    return a(t) + b(t) * y + c(t) * u + 0.5 * gamma_q * u * u + mu * phi_value(phi, y);
}

double GeneratorSpec::f_y(double t, double y, double) const
{
    return b(t) + mu * phi_d1(phi, y);
}

double GeneratorSpec::f_u(double t, double, double u) const { return c(t) + gamma_q * u; }

double GeneratorSpec::f_yy(double, double y, double) const { return mu * phi_d2(phi, y); }

double GeneratorSpec::f_yu(double, double, double) const { return 0.0; }

double GeneratorSpec::f_uu(double, double, double) const { return gamma_q; }

void GeneratorSpec::validate() const
{
    if (!(sigma.inf_abs() > 0.0))
        throw InvalidArgument("generator: sigma must be bounded away from zero");
    if (!sigma.finite()) throw InvalidArgument("generator: sigma must be finite");
    terminal.validate();
}

double contraction_scale(double r2_int_inf, double theta)
{
    return 8.0 * std::max(r2_int_inf, theta * theta);
}

CoefficientBounds derive_bounds(const GeneratorSpec& gen, double horizon)
{
    const bool finite = gen.a.finite() && gen.b.finite() && gen.c.finite() && gen.g.finite() &&
                        std::isfinite(gen.gamma_q) && std::isfinite(gen.mu);
    if (!finite) throw UnboundedGenerator("generator coefficients must be finite");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw InvalidArgument("derive_bounds: horizon must be positive and finite");

    CoefficientBounds out;
    out.theta = std::sqrt(std::max(std::abs(gen.gamma_q), gen.g.sup_abs()));

    const double mu_abs = std::abs(gen.mu);
    const double d1 = mu_abs * phi_d1_sup(gen.phi);
    const double d2 = std::sqrt(mu_abs * phi_d2_sup(gen.phi));
    const TimeFunction b = gen.b;
    out.r_fn = [b, d1, d2](double t) { return std::max(std::abs(b(t)) + d1, d2); };

    if (b.is_constant()) {
        const double r = out.r_fn(0.0);
        out.r_int_inf = r * horizon;
        out.r2_int_inf = r * r * horizon;
    } else {
        auto r = out.r_fn;
        out.r_int_inf = integrate(r, horizon);
        out.r2_int_inf = integrate([r](double t) { return r(t) * r(t); }, horizon);
    }
    if (!std::isfinite(out.r_int_inf) || !std::isfinite(out.r2_int_inf))
        throw UnboundedGenerator("r is not integrable on [0, T]");

    out.beta = contraction_scale(out.r2_int_inf, out.theta);

    const GeneratorSpec copy = gen;
    out.alpha_fn = [copy](double t) { return copy.f_y(t, 0.0, 0.0); };
    out.gamma_fn = [copy](double t) { return copy.f_u(t, 0.0, 0.0); };
    return out;
}

double smallness_threshold(const CoefficientBounds& bounds)
{
    if (!(bounds.beta > 0.0))
        throw DegenerateBounds("smallness threshold undefined for beta = 0 (Lipschitz generator)");
    return std::exp(-2.0 * bounds.r_int_inf) / (32.0 * bounds.beta);
}

double splitting_threshold(const CoefficientBounds& bounds)
{
    if (!(bounds.beta > 0.0)) return std::numeric_limits<double>::infinity();
    return smallness_threshold(bounds);
}

double contraction_threshold(const CoefficientBounds& bounds)
{
    if (!(bounds.beta > 0.0)) return std::numeric_limits<double>::infinity();
    return 1.0 / (32.0 * bounds.beta);
}

double ball_radius(double xi_sup)
{
    if (!(xi_sup >= 0.0)) throw InvalidArgument("ball_radius: xi_sup must be nonnegative");
    return 2.0 * std::numbers::sqrt2 * xi_sup;
}

bool ball_inequality_holds(double xi_sup, double beta, double radius)
{
    const double r2 = radius * radius;
    return 4.0 * xi_sup * xi_sup + beta * beta * r2 * r2 <= r2;
}

double contraction_factor(double beta, double radius)
{
    return 128.0 * beta * beta * radius * radius;
}

} // namespace qbsde
