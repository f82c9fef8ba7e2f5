#include "qbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/numeric/odeint.hpp>

#include "qbsde/errors.hpp"

namespace qbsde {

namespace {

// Relative round-off level of a sweep: distances below this fraction of the
// solution scale carry no information about the contraction.
constexpr double kNoiseFloor = 1e-12;

void require_finite(std::span<const double> v, const char* what)
{
    for (double x : v)
        if (!std::isfinite(x)) throw GeneratorEvaluationError(std::string(what) + " is not finite");
}

std::vector<double> sigma_per_slice(const Driver& driver, std::size_t n_steps)
{
    std::vector<double> s(n_steps + 1);
    for (std::size_t i = 0; i <= n_steps; ++i) s[i] = driver.sigma(i);
    return s;
}

Field difference(const Field& a, const Field& b)
{
    Field out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= src[k];
    return out;
}

void add_into(Field& acc, const Field& inc)
{
    auto dst = acc.values();
    auto src = inc.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

// One backward sweep of the frozen map with a prepared engine.
SolutionTriple sweep(const SolutionTriple& frozen, const Driver& driver, const RegressionEngine& engine,
                     std::span<const double> terminal)
{
    const PathEnsemble& ens = engine.design().ensemble();
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    const double dt = ens.grid.dt();

    SolutionTriple out = SolutionTriple::zero(ens.grid);
    std::copy(terminal.begin(), terminal.end(), out.y.slice(m).begin());

    const std::vector<double> zeros(n, 0.0);
    std::vector<double> u(n), fv(n), f0(n), gv(n), target(n), c1(n), c2(n);

    for (std::size_t k = m; k-- > 0;) {
        const double sig = driver.sigma(k);
        auto yf = frozen.y.slice(k);
        auto zf = frozen.z.slice(k);
        auto zetaf = frozen.zeta.slice(k);
        for (std::size_t p = 0; p < n; ++p) u[p] = sig * zf[p];
        driver.f(k, yf, u, fv);
        driver.f(k, zeros, zeros, f0);
        driver.g(k, gv);

        auto y_next = out.y.slice(k + 1);
        for (std::size_t p = 0; p < n; ++p)
            target[p] = y_next[p] + (fv[p] - f0[p]) * dt + gv[p] * zetaf[p] * zetaf[p] * dt;
        require_finite(target, "generator evaluation");

        const std::span<const double> mean_targets[] = {target, y_next};
        const auto means = engine.fit_many(k, mean_targets);

        auto dw1 = ens.w1_increments.slice(k);
        auto dw2 = ens.w2_increments.slice(k);
        const auto& centre = means[1].fitted;
        for (std::size_t p = 0; p < n; ++p) {
            const double c = y_next[p] - centre[p];
            c1[p] = c * dw1[p] / dt;
            c2[p] = c * dw2[p] / dt;
        }
        const std::span<const double> load_targets[] = {c1, c2};
        const auto loads = engine.fit_many(k, load_targets);

        std::copy(means[0].fitted.begin(), means[0].fitted.end(), out.y.slice(k).begin());
        auto z = out.z.slice(k);
        auto zeta = out.zeta.slice(k);
        for (std::size_t p = 0; p < n; ++p) {
            z[p] = loads[0].fitted[p] / sig;
            zeta[p] = loads[1].fitted[p];
        }
    }
    return out;
}

double fitted_geometric_rate(const std::vector<double>& d, double floor)
{
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < d.size(); ++k)
        if (d[k] > floor) {
            xs.push_back(static_cast<double>(k));
            ys.push_back(std::log(d[k]));
        }
    if (xs.size() < 2) return 0.0;
    const double nx = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= nx;
    my /= nx;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxy += (xs[k] - mx) * (ys[k] - my);
        sxx += (xs[k] - mx) * (xs[k] - mx);
    }
    return std::exp(sxy / sxx);
}

SmallResult solve_small_impl(const Driver& driver, std::shared_ptr<const Design> design,
                             const CoefficientBounds& bounds, const SolveOptions& opts,
                             const GirsanovWeights* weights, const SolutionTriple* initial, bool with_finalize)
{
    const PathEnsemble& ens = design->ensemble();
    const double xi_sup = driver.terminal_sup();
    const double limit = contraction_threshold(bounds);
    if (!(xi_sup <= limit))
        throw SmallnessViolated("solve_small: terminal sup " + std::to_string(xi_sup) +
                                " exceeds the contraction threshold " + std::to_string(limit));
    if (opts.max_iter == 0) throw InvalidArgument("solve_small: max_iter must be positive");

    const RegressionEngine engine(design, weights, WeightSpan::one_step);
    const NormEstimator norms(design, sigma_per_slice(driver, ens.n_steps()), weights, opts.norms);
    const std::vector<double> terminal = driver.terminal(ens);
    require_finite(terminal, "terminal value");

    SmallResult res;
    ConvergenceTrace& tr = res.trace;
    tr.ball_radius = ball_radius(xi_sup);
    tr.contraction_bound = contraction_factor(bounds.beta, tr.ball_radius);
    const double ball_sq = opts.ball_slack * tr.ball_radius * tr.ball_radius;

    SolutionTriple cur = initial ? *initial : SolutionTriple::zero(ens.grid);
    if (cur.y.n_slices() != ens.n_steps() + 1 || cur.y.n_paths() != ens.n_paths())
        throw InvalidArgument("solve_small: initial triple does not match the ensemble");

    for (std::size_t k = 1; k <= opts.max_iter; ++k) {
        SolutionTriple next = sweep(cur, driver, engine, terminal);
        const NormReport diff = norms.report(difference(next.y, cur.y), difference(next.z, cur.z),
                                             difference(next.zeta, cur.zeta));
        const NormReport size = norms.report(next.y, next.z, next.zeta);
        const double d = std::sqrt(diff.triple_sq);

        tr.noise_floor = kNoiseFloor * std::max(xi_sup, size.y_sup);
        if (!tr.distances.empty() && tr.distances.back() > tr.noise_floor)
            tr.ratios.push_back(d / tr.distances.back());
        tr.distances.push_back(d);
        tr.iterate_triple_sq.push_back(size.triple_sq);
        if (size.y_sup * size.y_sup + size.zm_n_bmo * size.zm_n_bmo > ball_sq) ++tr.ball_violations;
        tr.iterations = k;

        next.norms = size;
        cur = std::move(next);
        if (d < opts.tol || d <= tr.noise_floor) {
            tr.converged = true;
            break;
        }
    }
    tr.fitted_rate = fitted_geometric_rate(tr.distances, tr.noise_floor);
    if (!tr.converged)
        throw NoConvergence("solve_small: no convergence after " + std::to_string(tr.iterations) +
                                " iterations (last distance " + std::to_string(tr.distances.back()) + ")",
                            tr.iterations, tr.distances.back());

    if (with_finalize) finalize(cur, driver, design, weights, true, opts.norms);
    res.solution = std::move(cur);
    return res;
}

std::size_t piece_count(double sup, double threshold, double safety)
{
    if (!(threshold > 0.0)) throw InvalidArgument("split_terminal: threshold must be positive");
    if (!(safety > 0.0 && safety <= 1.0)) throw InvalidArgument("split_terminal: safety must lie in (0, 1]");
    const double eff = safety * threshold;
    if (!std::isfinite(eff) || sup <= eff) return 1;
    // Guard against ratios such as 4.000000000000001 from decimal inputs.
    return static_cast<std::size_t>(std::ceil(sup / eff * (1.0 - 1e-12)));
}

} // namespace

bool DeterministicShift::is_zero() const
{
    return std::all_of(level.begin(), level.end(), [](double v) { return v == 0.0; }) &&
           std::all_of(rate.begin(), rate.end(), [](double v) { return v == 0.0; });
}

DeterministicShift solve_shift(const GeneratorSpec& gen, const GridSpec& grid, std::size_t substeps)
{
    namespace odeint = boost::numeric::odeint;
    if (substeps == 0) throw InvalidArgument("solve_shift: substeps must be positive");
    grid.validate();

    const std::size_t m = grid.n_steps;
    DeterministicShift out;
    out.level.assign(m + 1, 0.0);
    out.rate.assign(m + 1, 0.0);

    odeint::runge_kutta4<double, double, double, double, odeint::vector_space_algebra> stepper;
    const auto rhs = [&gen](const double& G, double& dG, double t) { dG = gen.f(t, -G, 0.0); };
    const double h = grid.dt() / static_cast<double>(substeps);
    double G = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double t0 = grid.time(i);
        for (std::size_t s = 0; s < substeps; ++s) stepper.do_step(rhs, G, t0 + static_cast<double>(s) * h, h);
        out.level[i + 1] = G;
    }
    for (std::size_t i = 0; i <= m; ++i) out.rate[i] = gen.f(grid.time(i), -out.level[i], 0.0);
    require_finite(out.level, "shift ODE solution");
    require_finite(out.rate, "shift ODE rate");
    return out;
}

GeneratorDriver::GeneratorDriver(GeneratorSpec gen, GridSpec grid, std::optional<DeterministicShift> shift)
    : gen_(std::move(gen)), grid_(grid), shift_(std::move(shift)), terminal_(gen_.terminal)
{
    gen_.validate();
    grid_.validate();
    if (shift_) {
        if (shift_->level.size() != grid_.n_steps + 1 || shift_->rate.size() != grid_.n_steps + 1)
            throw InvalidArgument("GeneratorDriver: shift does not match the grid");
        terminal_ = gen_.terminal.shifted(shift_->level.back());
    }
}

void GeneratorDriver::f(std::size_t slice, std::span<const double> y, std::span<const double> u,
                        std::span<double> out) const
{
    const double t = grid_.time(slice);
    if (!shift_) {
        for (std::size_t p = 0; p < out.size(); ++p) out[p] = gen_.f(t, y[p], u[p]);
        return;
    }
    const double G = shift_->level[slice];
    const double rate = shift_->rate[slice];
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = gen_.f(t, y[p] - G, u[p]) - rate;
}

void GeneratorDriver::grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
                           std::span<double> fy, std::span<double> fu) const
{
    const double t = grid_.time(slice);
    const double G = shift_ ? shift_->level[slice] : 0.0;
    for (std::size_t p = 0; p < fy.size(); ++p) {
        fy[p] = gen_.f_y(t, y[p] - G, u[p]);
        fu[p] = gen_.f_u(t, y[p] - G, u[p]);
    }
}

void GeneratorDriver::g(std::size_t slice, std::span<double> out) const
{
    std::fill(out.begin(), out.end(), gen_.g(grid_.time(slice)));
}

double GeneratorDriver::sigma(std::size_t slice) const { return gen_.sigma(grid_.time(slice)); }

std::vector<double> GeneratorDriver::terminal(const PathEnsemble& ens) const
{
    return terminal_values(ens, terminal_);
}

double GeneratorDriver::terminal_sup() const { return terminal_.sup_norm(); }

StageDriver::StageDriver(std::shared_ptr<const Driver> base, const Field& y_acc, const Field& z_acc,
                         std::vector<double> terminal_piece, double terminal_piece_sup)
    : base_(std::move(base)), y_acc_(y_acc), u_acc_(z_acc), anchor_(y_acc.n_slices(), y_acc.n_paths()),
      terminal_(std::move(terminal_piece)), terminal_sup_(terminal_piece_sup)
{
    if (z_acc.n_slices() != y_acc.n_slices() || z_acc.n_paths() != y_acc.n_paths())
        throw InvalidArgument("StageDriver: accumulated fields differ in shape");
    for (std::size_t i = 0; i < u_acc_.n_slices(); ++i) {
        const double s = base_->sigma(i);
        for (double& v : u_acc_.slice(i)) v *= s;
        base_->f(i, y_acc_.slice(i), u_acc_.slice(i), anchor_.slice(i));
    }
}

void StageDriver::f(std::size_t slice, std::span<const double> y, std::span<const double> u,
                    std::span<double> out) const
{
    const std::size_t n = out.size();
    auto ya = y_acc_.slice(slice);
    auto ua = u_acc_.slice(slice);
    std::vector<double> ys(n), us(n);
    for (std::size_t p = 0; p < n; ++p) {
        ys[p] = ya[p] + y[p];
        us[p] = ua[p] + u[p];
    }
    base_->f(slice, ys, us, out);
    auto anchor = anchor_.slice(slice);
    for (std::size_t p = 0; p < n; ++p) out[p] -= anchor[p];
}

void StageDriver::grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
                       std::span<double> fy, std::span<double> fu) const
{
    const std::size_t n = fy.size();
    auto ya = y_acc_.slice(slice);
    auto ua = u_acc_.slice(slice);
    std::vector<double> ys(n), us(n);
    for (std::size_t p = 0; p < n; ++p) {
        ys[p] = ya[p] + y[p];
        us[p] = ua[p] + u[p];
    }
    base_->grad(slice, ys, us, fy, fu);
}

void StageDriver::g(std::size_t slice, std::span<double> out) const { base_->g(slice, out); }

double StageDriver::sigma(std::size_t slice) const { return base_->sigma(slice); }

std::vector<double> StageDriver::terminal(const PathEnsemble& ens) const
{
    if (terminal_.size() != ens.n_paths()) throw InvalidArgument("StageDriver: terminal piece does not match the ensemble");
    return terminal_;
}

double StageDriver::terminal_sup() const { return terminal_sup_; }

bool TransformParams::is_identity() const
{
    const auto zero = [](const Field& f) {
        return std::all_of(f.values().begin(), f.values().end(), [](double v) { return v == 0.0; });
    };
    return zero(alpha) && zero(gamma);
}

TransformParams linearize(const Driver& base, const PathEnsemble& ens, double r_int_inf)
{
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    const double dt = ens.grid.dt();

    TransformParams tp;
    tp.alpha = Field(m + 1, n, 0.0);
    tp.gamma = Field(m + 1, n, 0.0);
    tp.exp_factor = Field(m + 1, n, 1.0);

    const std::vector<double> zeros(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) base.grad(i, zeros, zeros, tp.alpha.slice(i), tp.gamma.slice(i));
    require_finite(tp.alpha.values(), "linearization in y");
    require_finite(tp.gamma.values(), "linearization in z");

    std::vector<double> A(n, 0.0);
    bool any_alpha = false;
    for (std::size_t i = 0; i < m; ++i) {
        auto a = tp.alpha.slice(i);
        auto E = tp.exp_factor.slice(i + 1);
        for (std::size_t p = 0; p < n; ++p) {
            any_alpha = any_alpha || a[p] != 0.0;
            A[p] += a[p] * dt;
            E[p] = std::exp(A[p]);
        }
    }
    tp.exp_bound = any_alpha ? std::exp(r_int_inf) : 1.0;
    return tp;
}

TransformedDriver::TransformedDriver(std::shared_ptr<const Driver> base,
                                     std::shared_ptr<const TransformParams> params, const PathEnsemble& ens)
    : base_(std::move(base)), params_(std::move(params)), origin_(ens.n_steps() + 1, ens.n_paths())
{
    if (params_->exp_factor.n_slices() != ens.n_steps() + 1 || params_->exp_factor.n_paths() != ens.n_paths())
        throw InvalidArgument("TransformedDriver: parameters do not match the ensemble");
    const std::vector<double> zeros(ens.n_paths(), 0.0);
    for (std::size_t i = 0; i < origin_.n_slices(); ++i) base_->f(i, zeros, zeros, origin_.slice(i));
}

void TransformedDriver::f(std::size_t slice, std::span<const double> y, std::span<const double> u,
                          std::span<double> out) const
{
    const std::size_t n = out.size();
    auto E = params_->exp_factor.slice(slice);
    auto alpha = params_->alpha.slice(slice);
    auto gamma = params_->gamma.slice(slice);
    auto origin = origin_.slice(slice);
    std::vector<double> ys(n), us(n);
    for (std::size_t p = 0; p < n; ++p) {
        ys[p] = y[p] / E[p];
        us[p] = u[p] / E[p];
    }
    base_->f(slice, ys, us, out);
    for (std::size_t p = 0; p < n; ++p)
        out[p] = E[p] * (out[p] - origin[p]) - alpha[p] * y[p] - gamma[p] * u[p];
}

void TransformedDriver::grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
                             std::span<double> fy, std::span<double> fu) const
{
    const std::size_t n = fy.size();
    auto E = params_->exp_factor.slice(slice);
    auto alpha = params_->alpha.slice(slice);
    auto gamma = params_->gamma.slice(slice);
    std::vector<double> ys(n), us(n);
    for (std::size_t p = 0; p < n; ++p) {
        ys[p] = y[p] / E[p];
        us[p] = u[p] / E[p];
    }
    base_->grad(slice, ys, us, fy, fu);
    for (std::size_t p = 0; p < n; ++p) {
        fy[p] -= alpha[p];
        fu[p] -= gamma[p];
    }
}

void TransformedDriver::g(std::size_t slice, std::span<double> out) const
{
    base_->g(slice, out);
    auto E = params_->exp_factor.slice(slice);
    for (std::size_t p = 0; p < out.size(); ++p) out[p] /= E[p];
}

double TransformedDriver::sigma(std::size_t slice) const { return base_->sigma(slice); }

std::vector<double> TransformedDriver::terminal(const PathEnsemble& ens) const
{
    std::vector<double> xi = base_->terminal(ens);
    auto E = params_->exp_factor.slice(ens.n_steps());
    for (std::size_t p = 0; p < xi.size(); ++p) xi[p] *= E[p];
    return xi;
}

double TransformedDriver::terminal_sup() const { return params_->exp_bound * base_->terminal_sup(); }

Transformed transform_generator(std::shared_ptr<const Driver> base, std::shared_ptr<const TransformParams> params,
                                const PathEnsemble& ens, const Field* orthogonal_kernel, const WeightOptions& opts)
{
    GirsanovWeights w = girsanov_weights(ens, params->gamma, Component::w1, opts);
    if (orthogonal_kernel) {
        w = w * girsanov_weights(ens, *orthogonal_kernel, Component::w2, opts);
        check_degeneracy(w, opts.ess_floor);
    }
    auto driver = std::make_shared<const TransformedDriver>(std::move(base), std::move(params), ens);
    return {std::move(driver), std::move(w)};
}

CoefficientBounds transformed_bounds(const CoefficientBounds& b)
{
    const double grow = std::exp(b.r_int_inf);
    const double half = std::exp(0.5 * b.r_int_inf);
    CoefficientBounds out;
    out.theta = b.theta * half;
    if (b.r_fn) {
        auto r = b.r_fn;
        out.r_fn = [r, half](double t) { return r(t) * half; };
    }
    out.r2_int_inf = b.r2_int_inf * grow;
    out.r_int_inf = b.r_int_inf * half;
    out.beta = b.beta * grow;
    out.alpha_fn = [](double) { return 0.0; };
    out.gamma_fn = [](double) { return 0.0; };
    return out;
}

SolutionTriple SolutionTriple::zero(const GridSpec& grid)
{
    SolutionTriple s;
    s.y = Field(grid.n_steps + 1, grid.n_paths, 0.0);
    s.z = s.y;
    s.zeta = s.y;
    s.y_se.assign(grid.n_steps + 1, 0.0);
    return s;
}

SolutionTriple untransform_solution(const SolutionTriple& sol, const TransformParams& params)
{
    SolutionTriple out = sol;
    const auto E = params.exp_factor.values();
    auto y = out.y.values();
    auto z = out.z.values();
    auto zeta = out.zeta.values();
    if (E.size() != y.size()) throw InvalidArgument("untransform_solution: shape mismatch");
    for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] /= E[k];
        z[k] /= E[k];
        zeta[k] /= E[k];
    }
    // Standard errors scale by the largest 1/E on the slice.
    for (std::size_t i = 0; i < out.y_se.size() && i < out.y.n_slices(); ++i) {
        const auto e = params.exp_factor.slice(i);
        out.y_se[i] /= *std::min_element(e.begin(), e.end());
    }
    out.y0 = out.y(0, 0);
    if (!out.y_se.empty()) out.y0_se = out.y_se.front();
    return out;
}

SolutionTriple apply_F(const SolutionTriple& frozen, const Driver& driver, const PathEnsemble& ens,
                       const GirsanovWeights* weights, const BasisSpec& basis)
{
    auto design = std::make_shared<const Design>(ens, basis);
    const RegressionEngine engine(design, weights, WeightSpan::one_step);
    const std::vector<double> terminal = driver.terminal(ens);
    require_finite(terminal, "terminal value");
    SolutionTriple out = sweep(frozen, driver, engine, terminal);
    const NormEstimator norms(design, sigma_per_slice(driver, ens.n_steps()), weights);
    out.norms = norms.report(out.y, out.z, out.zeta);
    return out;
}

SmallResult solve_small(const Driver& driver, const PathEnsemble& ens, const BasisSpec& basis,
                        const CoefficientBounds& bounds, const SolveOptions& opts, const GirsanovWeights* weights,
                        const SolutionTriple* initial)
{
    return solve_small_impl(driver, std::make_shared<const Design>(ens, basis), bounds, opts, weights, initial, true);
}

SmallResult solve_small(const Driver& driver, std::shared_ptr<const Design> design, const CoefficientBounds& bounds,
                        const SolveOptions& opts, const GirsanovWeights* weights, const SolutionTriple* initial)
{
    return solve_small_impl(driver, std::move(design), bounds, opts, weights, initial, true);
}

std::vector<TerminalCondition> split_terminal(const TerminalCondition& tc, double threshold, double safety)
{
    const std::size_t m = piece_count(tc.sup_norm(), threshold, safety);
    if (m == 1) return {tc};
    return std::vector<TerminalCondition>(m, tc.scaled(1.0 / static_cast<double>(m)));
}

void finalize(SolutionTriple& sol, const Driver& driver, std::shared_ptr<const Design> design,
              const GirsanovWeights* weights, bool centered, const NormOptions& norm_opts)
{
    const PathEnsemble& ens = design->ensemble();
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    const double dt = ens.grid.dt();

    const RegressionEngine step_engine(design, weights, WeightSpan::one_step);
    std::optional<RegressionEngine> horizon_engine;
    if (weights) horizon_engine.emplace(design, weights, WeightSpan::to_horizon);
    const RegressionEngine& tail_engine = horizon_engine ? *horizon_engine : step_engine;

    const std::vector<double> zeros(n, 0.0);
    std::vector<double> u(n), fv(n), f0(n), gv(n), target(n), tail(sol.y.slice(m).begin(), sol.y.slice(m).end());
    sol.y_se.assign(m + 1, 0.0);
    double residual = 0.0;
    double defect_sq = 0.0;

    for (std::size_t k = m; k-- > 0;) {
        const double sig = driver.sigma(k);
        auto y = sol.y.slice(k);
        auto z = sol.z.slice(k);
        auto zeta = sol.zeta.slice(k);
        auto y_next = sol.y.slice(k + 1);
        for (std::size_t p = 0; p < n; ++p) u[p] = sig * z[p];
        driver.f(k, y, u, fv);
        if (centered)
            driver.f(k, zeros, zeros, f0);
        else
            std::fill(f0.begin(), f0.end(), 0.0);
        driver.g(k, gv);

        auto dw1 = ens.w1_increments.slice(k);
        auto dw2 = ens.w2_increments.slice(k);
        for (std::size_t p = 0; p < n; ++p) {
            const double drift = (fv[p] - f0[p]) * dt + gv[p] * zeta[p] * zeta[p] * dt;
            target[p] = y_next[p] + drift;
            tail[p] += drift;
            const double d = y_next[p] - y[p] + drift - u[p] * dw1[p] - zeta[p] * dw2[p];
            defect_sq += d * d;
        }
        require_finite(target, "generator evaluation");

        const auto proj = step_engine.fit(k, target);
        for (std::size_t p = 0; p < n; ++p) residual = std::max(residual, std::abs(proj.fitted[p] - y[p]));
        sol.y_se[k] = tail_engine.fit(k, tail).fitted_se;
    }

    sol.residual = residual;
    sol.defect_rms = std::sqrt(defect_sq / static_cast<double>(n * m));
    sol.y0 = sol.y(0, 0);
    sol.y0_se = sol.y_se[0];
    const NormEstimator norms(design, sigma_per_slice(driver, m), weights, norm_opts);
    sol.norms = norms.report(sol.y, sol.z, sol.zeta);
}

ChainResult solve_chain(const GeneratorSpec& gen, const PathEnsemble& ens, const BasisSpec& basis,
                        const SolveOptions& opts)
{
    return solve_chain(gen, std::make_shared<const Design>(ens, basis), opts);
}

ChainResult solve_chain(const GeneratorSpec& gen, std::shared_ptr<const Design> design, const SolveOptions& opts)
{
    const PathEnsemble& ens = design->ensemble();
    const GridSpec& grid = ens.grid;
    const std::size_t m = grid.n_steps;
    const std::size_t n = grid.n_paths;
    gen.validate();
    gen.terminal.validate();

    const CoefficientBounds bounds = derive_bounds(gen, grid.horizon);
    DeterministicShift shift = solve_shift(gen, grid, opts.shift_substeps);
    std::optional<DeterministicShift> shift_opt;
    if (!shift.is_zero()) shift_opt = shift;
    auto base = std::make_shared<const GeneratorDriver>(gen, grid, shift_opt);

    ChainResult res;
    ChainTrace& tr = res.trace;
    tr.threshold = splitting_threshold(bounds);
    tr.shifted_terminal_sup = base->terminal_sup();
    // An affine generator leaves a zero remainder after the exponential
    // transform, so the whole terminal condition is small for it.
    const bool affine = gen.gamma_q == 0.0 && (gen.mu == 0.0 || gen.phi == Nonlinearity::none) && gen.g.is_zero();
    tr.pieces = bounds.beta == 0.0 || affine
                    ? 1
                    : piece_count(tr.shifted_terminal_sup, tr.threshold, opts.split_safety);
    if (tr.pieces > opts.splitting_cap)
        throw SplittingCapExceeded("solve_chain: terminal condition needs " + std::to_string(tr.pieces) +
                                   " pieces, cap is " + std::to_string(opts.splitting_cap));

    const TerminalCondition piece =
        tr.pieces == 1 ? base->terminal_condition() : base->terminal_condition().scaled(1.0 / static_cast<double>(tr.pieces));
    const std::vector<double> piece_values = terminal_values(ens, piece);
    const double piece_sup = piece.sup_norm();

    CoefficientBounds stage_bounds = transformed_bounds(bounds);
    if (affine) stage_bounds = CoefficientBounds{};
    SolveOptions stage_opts = opts;
    stage_opts.tol = opts.tol / static_cast<double>(tr.pieces);

    Field y_acc(m + 1, n, 0.0), z_acc(m + 1, n, 0.0), zeta_acc(m + 1, n, 0.0);
    Field orth(m + 1, n, 0.0);
    std::vector<double> gv(n);

    for (std::size_t j = 0; j < tr.pieces; ++j) {
        auto stage = std::make_shared<const StageDriver>(base, y_acc, z_acc, piece_values, piece_sup);
        auto params = std::make_shared<const TransformParams>(linearize(*stage, ens, bounds.r_int_inf));

        bool orthogonal = false;
        for (std::size_t i = 0; i < m; ++i) {
            base->g(i, gv);
            auto zt = zeta_acc.slice(i);
            auto o = orth.slice(i);
            for (std::size_t p = 0; p < n; ++p) {
                o[p] = 2.0 * gv[p] * zt[p];
                orthogonal = orthogonal || o[p] != 0.0;
            }
        }

        std::optional<Transformed> tf;
        try {
            tf.emplace(transform_generator(stage, params, ens, orthogonal ? &orth : nullptr, opts.weights));
        } catch (const WeightDegeneracy& e) {
            throw WeightDegeneracy("stage " + std::to_string(j + 1) + " of " + std::to_string(tr.pieces) + ": " +
                                       e.what(),
                                   e.ess_fraction());
        }

        SmallResult small =
            solve_small_impl(*tf->driver, design, stage_bounds, stage_opts, &tf->weights, nullptr, false);
        const SolutionTriple inc = untransform_solution(small.solution, *params);
        add_into(y_acc, inc.y);
        add_into(z_acc, inc.z);
        add_into(zeta_acc, inc.zeta);

        StageReport rep;
        rep.index = j + 1;
        rep.iterations = small.trace.iterations;
        rep.last_distance = small.trace.distances.empty() ? 0.0 : small.trace.distances.back();
        rep.ess_fraction = tf->weights.ess_fraction();
        rep.ball_violations = small.trace.ball_violations;
        tr.min_ess_fraction = std::min(tr.min_ess_fraction, rep.ess_fraction);
        tr.total_iterations += rep.iterations;
        tr.stages.push_back(rep);
        if (j == 0) tr.first_stage = small.trace;
    }

    SolutionTriple& sol = res.solution;
    sol.y = std::move(y_acc);
    sol.z = std::move(z_acc);
    sol.zeta = std::move(zeta_acc);
    if (shift_opt)
        for (std::size_t i = 0; i <= m; ++i) {
            const double G = shift.level[i];
            for (double& v : sol.y.slice(i)) v -= G;
        }
    const std::vector<double> xi = terminal_values(ens, gen.terminal);
    std::copy(xi.begin(), xi.end(), sol.y.slice(m).begin());

    const GeneratorDriver original(gen, grid);
    finalize(sol, original, design, nullptr, false, opts.norms);
    return res;
}

SolveResult solve(const GeneratorSpec& gen, const GridSpec& grid, const BasisSpec& basis, const SolveOptions& opts)
{
    grid.validate();
    basis.validate();
    const PathEnsemble ens = generate(grid);
    auto design = std::make_shared<const Design>(ens, basis);
    ChainResult chain = solve_chain(gen, design, opts);

    SolveResult res;
    res.grid = grid;
    res.certificate = certify(gen, grid.horizon, chain.solution.norms);
    res.solution = std::move(chain.solution);
    res.trace = std::move(chain.trace);
    return res;
}

} // namespace qbsde
