#include "qbsde/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "qbsde/errors.hpp"

namespace qbsde {

namespace {

// Y_t = s + log E[e^{k (xi - s)} | F_t] / k with s = mean(xi) to keep the
// exponentials near 1. Fitted values are clamped to the range of the targets,
// which contains every conditional expectation.
OracleField log_mean_exp(double k, const PathEnsemble& ens, const std::vector<double>& xi, const BasisSpec& basis)
{
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    double s = 0.0;
    for (double v : xi) s += v;
    s /= static_cast<double>(n);

    std::vector<double> target(n);
    for (std::size_t p = 0; p < n; ++p) target[p] = std::exp(k * (xi[p] - s));
    const auto [lo, hi] = std::minmax_element(target.begin(), target.end());

    auto design = std::make_shared<const Design>(ens, basis);
    const RegressionEngine engine(design);
    OracleField out{Field(m + 1, n), std::vector<double>(m + 1, 0.0)};
    std::copy(xi.begin(), xi.end(), out.y.slice(m).begin());
    for (std::size_t i = 0; i < m; ++i) {
        const FitResult fit = engine.fit(i, target);
        auto y = out.y.slice(i);
        double mean_fit = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const double F = std::clamp(fit.fitted[p], *lo, *hi);
            y[p] = s + std::log(F) / k;
            mean_fit += F;
        }
        mean_fit /= static_cast<double>(n);
        out.se[i] = fit.fitted_se / (std::abs(k) * mean_fit);
    }
    return out;
}

template <class F>
auto tagged(const char* side, F&& run)
{
    try {
        return run();
    } catch (const NoConvergence& e) {
        throw NoConvergence(std::string(side) + ": " + e.what(), e.iterations(), e.last_distance());
    } catch (const WeightDegeneracy& e) {
        throw WeightDegeneracy(std::string(side) + ": " + e.what(), e.ess_fraction());
    } catch (const SmallnessViolated& e) {
        throw SmallnessViolated(std::string(side) + ": " + e.what());
    } catch (const SplittingCapExceeded& e) {
        throw SplittingCapExceeded(std::string(side) + ": " + e.what());
    }
}

} // namespace

OracleField oracle_cole_hopf(double gamma_q, const PathEnsemble& ens, const TerminalCondition& tc,
                             const BasisSpec& basis)
{
    if (gamma_q == 0.0) throw InvalidArgument("oracle_cole_hopf: gamma_q must be nonzero");
    return log_mean_exp(gamma_q, ens, terminal_values(ens, tc), basis);
}

OracleField oracle_orthogonal(double g, const PathEnsemble& ens, const TerminalCondition& tc, const BasisSpec& basis)
{
    if (g == 0.0) throw InvalidArgument("oracle_orthogonal: g must be nonzero");
    if (tc.depends_on_w1()) throw InvalidArgument("oracle_orthogonal: terminal condition must depend on W2 only");
    return log_mean_exp(2.0 * g, ens, terminal_values(ens, tc), basis);
}

OracleField oracle_linear(double a, double c, const PathEnsemble& ens, const TerminalCondition& tc,
                          const BasisSpec& basis)
{
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    const std::vector<double> xi = terminal_values(ens, tc);
    auto design = std::make_shared<const Design>(ens, basis);
    const RegressionEngine engine(design);

    OracleField out{Field(m + 1, n), std::vector<double>(m + 1, 0.0)};
    std::copy(xi.begin(), xi.end(), out.y.slice(m).begin());
    for (std::size_t i = 0; i < m; ++i) {
        const double tau = ens.grid.horizon - ens.grid.time(i);
        const double growth = std::exp(a * tau);
        const double drift = a == 0.0 ? c * tau : c * std::expm1(a * tau) / a;
        const FitResult fit = engine.fit(i, xi);
        auto y = out.y.slice(i);
        for (std::size_t p = 0; p < n; ++p) y[p] = growth * fit.fitted[p] + drift;
        out.se[i] = growth * fit.fitted_se;
    }
    return out;
}

double lipschitz_screen(const GeneratorSpec& gen, double horizon, const ComparisonOptions& opts)
{
    std::mt19937_64 rng(opts.sample_seed);
    std::uniform_real_distribution<double> ut(0.0, horizon), uy(-opts.y_box, opts.y_box), uz(-opts.z_box, opts.z_box);
    double worst = 0.0;
    for (std::size_t k = 0; k < opts.samples; ++k) {
        const double t = ut(rng);
        const double y1 = uy(rng), y2 = uy(rng);
        const double s = gen.sigma(t);
        const double u1 = s * uz(rng), u2 = s * uz(rng);
        const double dy = std::abs(y1 - y2);
        const double du = std::abs(u1 - u2);
        const double den = dy + du * (1.0 + std::abs(u1) + std::abs(u2));
        if (den == 0.0) continue;
        const double q = std::abs(gen.f(t, y1, u1) - gen.f(t, y2, u2)) / den;
        if (!std::isfinite(q)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, q);
    }
    return worst;
}

void check_dominance(const GeneratorSpec& a, const GeneratorSpec& b, const PathEnsemble& ens,
                     const ComparisonOptions& opts)
{
    if (!(a.sigma == b.sigma)) throw InvalidArgument("check_comparison: both generators must share sigma");
    const double T = ens.grid.horizon;
    std::mt19937_64 rng(opts.sample_seed ^ 0x5bd1e995ULL);
    std::uniform_real_distribution<double> ut(0.0, T), uy(-opts.y_box, opts.y_box), uz(-opts.z_box, opts.z_box);
    const auto slack = [](double v) { return 1e-12 * (1.0 + std::abs(v)); };
    for (std::size_t k = 0; k < opts.samples; ++k) {
        const double t = ut(rng), y = uy(rng), u = a.sigma(t) * uz(rng);
        const double fa = a.f(t, y, u), fb = b.f(t, y, u);
        if (fa < fb - slack(fb))
            throw DominanceViolated("f_a < f_b at t=" + std::to_string(t) + " y=" + std::to_string(y) +
                                    " u=" + std::to_string(u));
        const double ga = a.g(t), gb = b.g(t);
        if (ga < gb - slack(gb)) throw DominanceViolated("g_a < g_b at t=" + std::to_string(t));
    }
    const auto xa = terminal_values(ens, a.terminal);
    const auto xb = terminal_values(ens, b.terminal);
    for (std::size_t p = 0; p < xa.size(); ++p)
        if (xa[p] < xb[p] - slack(xb[p]))
            throw DominanceViolated("xi_a < xi_b on path " + std::to_string(p));
}

ComparisonReport check_comparison(const GeneratorSpec& a, const GeneratorSpec& b, const GridSpec& grid,
                                  const BasisSpec& basis, const ComparisonOptions& opts)
{
    grid.validate();
    const PathEnsemble ens = generate(grid);
    if (opts.check_dominance) check_dominance(a, b, ens, opts);

    ComparisonReport rep;
    rep.lipschitz_a = lipschitz_screen(a, grid.horizon, opts);
    rep.lipschitz_b = lipschitz_screen(b, grid.horizon, opts);
    const bool screened = rep.lipschitz_a <= opts.lipschitz_limit && rep.lipschitz_b <= opts.lipschitz_limit;

    auto design = std::make_shared<const Design>(ens, basis);
    const ChainResult ra = tagged("generator A", [&] { return solve_chain(a, design, opts.solve); });
    const ChainResult rb = tagged("generator B", [&] { return solve_chain(b, design, opts.solve); });
    const SolutionTriple& sa = ra.solution;
    const SolutionTriple& sb = rb.solution;
    rep.y0_a = sa.y0;
    rep.y0_b = sb.y0;

    const std::size_t m = grid.n_steps;
    const std::size_t n = grid.n_paths;
    std::vector<double> tol(m + 1);
    for (std::size_t i = 0; i <= m; ++i)
        tol[i] = opts.se_multiplier * std::sqrt(sa.y_se[i] * sa.y_se[i] + sb.y_se[i] * sb.y_se[i]);
    rep.tol_mc = *std::max_element(tol.begin(), tol.end());

    rep.min_gap = std::numeric_limits<double>::infinity();
    std::size_t ordered = 0;
    for (std::size_t i = 0; i <= m; ++i) {
        auto ya = sa.y.slice(i);
        auto yb = sb.y.slice(i);
        for (std::size_t p = 0; p < n; ++p) {
            const double gap = ya[p] - yb[p];
            rep.min_gap = std::min(rep.min_gap, gap);
            if (gap >= -rep.tol_mc) ++ordered;
        }
    }
    rep.ordered_fraction = static_cast<double>(ordered) / static_cast<double>((m + 1) * n);
    rep.pass = screened && rep.min_gap >= -rep.tol_mc;
    return rep;
}

} // namespace qbsde
