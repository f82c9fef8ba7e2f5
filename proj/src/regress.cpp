#include "qbsde/regress.hpp"

#include "qbsde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace qbsde {

namespace {

// Row block of the deterministic reductions. Partial sums are formed per
// block and added in block order, so results do not depend on the number of
// worker threads.
constexpr std::size_t kBlock = 4096;

std::size_t n_blocks(std::size_t n) { return (n + kBlock - 1) / kBlock; }

std::size_t terms_for(int degree, int inputs)
{
    const auto d = static_cast<std::size_t>(degree);
    if (inputs == 0) return 1;
    if (inputs == 1) return d + 1;
    return (d + 1) * (d + 2) / 2;
}

void hermite(double x, int degree, double* out)
{
    out[0] = 1.0;
    if (degree >= 1) out[1] = x;
    for (int k = 1; k < degree; ++k) out[k + 1] = x * out[k] - k * out[k - 1];
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

MeanSd mean_sd(std::span<const double> x)
{
    double s = 0.0;
    for (double v : x) s += v;
    const double mean = s / static_cast<double>(x.size());
    double q = 0.0;
    for (double v : x) q += (v - mean) * (v - mean);
    return {mean, std::sqrt(q / static_cast<double>(x.size()))};
}

struct Solver {
    Eigen::MatrixXd gram;  // unregularized
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    double weight_sum = 0.0;
    double weight_sq_sum = 0.0;
};

Solver factorize(const Eigen::MatrixXd& phi, std::span<const double> w, double ridge_factor,
                 std::size_t slice)
{
    const std::size_t n = static_cast<std::size_t>(phi.rows());
    const auto p = phi.cols();
    if (static_cast<std::size_t>(p) > n)
        throw RankDeficient("slice " + std::to_string(slice) + ": more basis terms than paths");

    const std::size_t nb = n_blocks(n);
    std::vector<Eigen::MatrixXd> partial(nb);
    const auto nb_signed = static_cast<std::int64_t>(nb);
#pragma omp parallel for schedule(static)
    for (std::int64_t bs = 0; bs < nb_signed; ++bs) {
        const auto b = static_cast<std::size_t>(bs);
        const auto start = static_cast<Eigen::Index>(b * kBlock);
        const auto len = static_cast<Eigen::Index>(std::min(kBlock, n - b * kBlock));
        const auto rows = phi.middleRows(start, len);
        Eigen::Map<const Eigen::VectorXd> wb(w.data() + start, len);
        const Eigen::MatrixXd weighted = rows.array().colwise() * wb.array();
        partial[b].noalias() = rows.transpose() * weighted;
    }

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    for (const auto& g : partial) gram += g;

    Solver out;
    out.gram = gram;
    // The constant-only slice is a plain weighted mean; no ridge there.
    if (p > 1) gram.diagonal().array() += ridge_factor * static_cast<double>(n);
    out.ldlt.compute(gram);
    if (out.ldlt.info() != Eigen::Success || !out.ldlt.isPositive() ||
        !(out.ldlt.vectorD().minCoeff() > 0.0) || !gram.allFinite())
        throw RankDeficient("slice " + std::to_string(slice) +
                            ": normal equations singular after ridge stabilization");
    for (double v : w) {
        out.weight_sum += v;
        out.weight_sq_sum += v * v;
    }
    return out;
}

std::vector<FitResult> solve_targets(const Eigen::MatrixXd& phi, std::span<const double> w,
                                     const Eigen::MatrixXd& gram,
                                     const Eigen::LDLT<Eigen::MatrixXd>& ldlt, double weight_sum,
                                     double weight_sq_sum,
                                     std::span<const std::span<const double>> targets)
{
    const std::size_t n = static_cast<std::size_t>(phi.rows());
    const auto p = phi.cols();
    const auto k = static_cast<Eigen::Index>(targets.size());
    for (const auto& t : targets)
        if (t.size() != n) throw InvalidArgument("regression target length does not match n_paths");

    // Small k: column dot products and axpys beat a general matrix product here.
    const std::size_t nb = n_blocks(n);
    std::vector<Eigen::MatrixXd> partial(nb);
    const auto nb_signed = static_cast<std::int64_t>(nb);
#pragma omp parallel for schedule(static)
    for (std::int64_t bs = 0; bs < nb_signed; ++bs) {
        const auto b = static_cast<std::size_t>(bs);
        const auto start = static_cast<Eigen::Index>(b * kBlock);
        const auto len = static_cast<Eigen::Index>(std::min(kBlock, n - b * kBlock));
        Eigen::Map<const Eigen::VectorXd> wb(w.data() + start, len);
        Eigen::VectorXd wy(len);
        partial[b].resize(p, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            Eigen::Map<const Eigen::VectorXd> yb(targets[static_cast<std::size_t>(j)].data() + start, len);
            wy = wb.cwiseProduct(yb);
            for (Eigen::Index c = 0; c < p; ++c) partial[b](c, j) = phi.col(c).segment(start, len).dot(wy);
        }
    }
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(p, k);
    for (const auto& g : partial) rhs += g;

    // One step of iterated Tikhonov: removes the first-order ridge bias while
    // keeping the regularized factorization.
    Eigen::MatrixXd coef = ldlt.solve(rhs);
    if (p > 1) coef += ldlt.solve(rhs - gram * coef);

    std::vector<FitResult> out(targets.size());
    for (auto& r : out) r.fitted.resize(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t bs = 0; bs < nb_signed; ++bs) {
        const auto b = static_cast<std::size_t>(bs);
        const auto start = static_cast<Eigen::Index>(b * kBlock);
        const auto len = static_cast<Eigen::Index>(std::min(kBlock, n - b * kBlock));
        for (Eigen::Index j = 0; j < k; ++j) {
            Eigen::Map<Eigen::VectorXd> fb(out[static_cast<std::size_t>(j)].fitted.data() + start, len);
            fb = coef(0, j) * phi.col(0).segment(start, len);
            for (Eigen::Index c = 1; c < p; ++c) fb += coef(c, j) * phi.col(c).segment(start, len);
        }
    }

    const double ess = weight_sum * weight_sum / weight_sq_sum;
    const double dof = static_cast<double>(n) > static_cast<double>(p)
                           ? static_cast<double>(n) / static_cast<double>(n - static_cast<std::size_t>(p))
                           : 1.0;

    for (Eigen::Index j = 0; j < k; ++j) {
        auto& res = out[static_cast<std::size_t>(j)];
        const auto& y = targets[static_cast<std::size_t>(j)];
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double e = y[r] - res.fitted[r];
            ss += w[r] * e * e;
        }
        res.residual_sd = std::sqrt(ss / weight_sum * dof);
        res.fitted_se = res.residual_sd * std::sqrt(static_cast<double>(p) / ess);
        if (!std::isfinite(res.residual_sd))
            throw GeneratorEvaluationError("non-finite regression target");
    }
    return out;
}

} // namespace

void BasisSpec::validate() const
{
    if (degree < 0 || degree > 6) throw InvalidArgument("basis degree must be in [0, 6]");
    if (!(ridge_factor >= 0.0) || !std::isfinite(ridge_factor))
        throw InvalidArgument("basis ridge factor must be finite and nonnegative");
}

Design::Design(const PathEnsemble& ens, BasisSpec basis, std::size_t cache_budget_bytes)
    : ens_(&ens), basis_(basis)
{
    basis_.validate();
    const std::size_t slices = ens.n_steps() + 1;
    info_.resize(slices);
    std::size_t bytes = 0;
    for (std::size_t i = 0; i < slices; ++i) {
        SliceInfo& s = info_[i];
        auto consider = [&](bool wanted, Component c, bool& use, double& mean, double& sd) {
            if (!wanted || i == 0) return;
            const MeanSd m = mean_sd(ens.levels(c).slice(i));
            if (!(m.sd > 0.0)) return;
            use = true;
            if (basis_.standardize) {
                mean = m.mean;
                sd = m.sd;
            }
        };
        consider(basis_.use_w1, Component::w1, s.use1, s.mean1, s.sd1);
        consider(basis_.use_w2, Component::w2, s.use2, s.mean2, s.sd2);
        s.terms = terms_for(basis_.degree, int(s.use1) + int(s.use2));
        bytes += s.terms * ens.n_paths() * sizeof(double);
    }

    if (bytes <= cache_budget_bytes) {
        cache_.resize(slices);
        for (std::size_t i = 0; i < slices; ++i) build(i, cache_[i]);
    }
}

std::size_t Design::n_terms(std::size_t slice) const { return info_.at(slice).terms; }

const Eigen::MatrixXd& Design::matrix(std::size_t slice, Eigen::MatrixXd& scratch) const
{
    if (!cache_.empty()) return cache_.at(slice);
    build(slice, scratch);
    return scratch;
}

void Design::build(std::size_t slice, Eigen::MatrixXd& out) const
{
    const SliceInfo& s = info_.at(slice);
    const std::size_t n = ens_->n_paths();
    const int d = basis_.degree;
    out.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.terms));

    auto x1 = ens_->w1_levels.slice(slice);
    auto x2 = ens_->w2_levels.slice(slice);
    double h1[7];
    double h2[7];
    for (std::size_t p = 0; p < n; ++p) {
        const auto row = static_cast<Eigen::Index>(p);
        if (s.use1) hermite((x1[p] - s.mean1) / s.sd1, d, h1);
        if (s.use2) hermite((x2[p] - s.mean2) / s.sd2, d, h2);
        if (!s.use1 && !s.use2) {
            out(row, 0) = 1.0;
        } else if (s.use1 != s.use2) {
            const double* h = s.use1 ? h1 : h2;
            for (int k = 0; k <= d; ++k) out(row, k) = h[k];
        } else {
            Eigen::Index col = 0;
            for (int total = 0; total <= d; ++total)
                for (int a = total; a >= 0; --a) out(row, col++) = h1[a] * h2[total - a];
        }
    }
}

RegressionEngine::RegressionEngine(std::shared_ptr<const Design> design, const GirsanovWeights* weights,
                                   WeightSpan span)
    : design_(std::move(design)), weighted_(weights != nullptr)
{
    const PathEnsemble& ens = design_->ensemble();
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    if (weights && (weights->n_slices() != m + 1 || weights->n_paths() != n))
        throw InvalidArgument("regression weights do not match the ensemble");

    slices_.resize(m);
    Eigen::MatrixXd scratch;
    for (std::size_t i = 0; i < m; ++i) {
        SliceSolver& s = slices_[i];
        const std::size_t to = span == WeightSpan::one_step ? i + 1 : m;
        s.weights = weights ? weights->ratio(i, to) : std::vector<double>(n, 1.0);
        for (double w : s.weights)
            if (!(w > 0.0) || !std::isfinite(w))
                throw WeightDegeneracy("non-finite or non-positive regression weight at slice " +
                                           std::to_string(i),
                                       0.0);
        const Eigen::MatrixXd& phi = design_->matrix(i, scratch);
        Solver solver = factorize(phi, s.weights, design_->basis().ridge_factor, i);
        s.gram = std::move(solver.gram);
        s.ldlt = std::move(solver.ldlt);
        s.weight_sum = solver.weight_sum;
        s.weight_sq_sum = solver.weight_sq_sum;
        s.ess_fraction = solver.weight_sum * solver.weight_sum /
                         (solver.weight_sq_sum * static_cast<double>(n));
    }
}

FitResult RegressionEngine::fit(std::size_t slice, std::span<const double> target) const
{
    const std::span<const double> one[1] = {target};
    return std::move(fit_many(slice, one).front());
}

std::vector<FitResult> RegressionEngine::fit_many(std::size_t slice,
                                                  std::span<const std::span<const double>> targets) const
{
    if (slice >= slices_.size()) throw InvalidArgument("regression slice out of range");
    const SliceSolver& s = slices_[slice];
    Eigen::MatrixXd scratch;
    return solve_targets(design_->matrix(slice, scratch), s.weights, s.gram, s.ldlt, s.weight_sum,
                         s.weight_sq_sum, targets);
}

std::vector<double> RegressionEngine::pointwise_se(std::size_t slice, double residual_sd) const
{
    if (slice >= slices_.size()) throw InvalidArgument("regression slice out of range");
    const SliceSolver& s = slices_[slice];
    Eigen::MatrixXd scratch;
    const Eigen::MatrixXd& phi = design_->matrix(slice, scratch);
    const Eigen::MatrixXd solved = s.ldlt.solve(phi.transpose());
    const double scale = s.weight_sq_sum / s.weight_sum;
    std::vector<double> out(static_cast<std::size_t>(phi.rows()));
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
        out[static_cast<std::size_t>(r)] =
            residual_sd * std::sqrt(std::max(0.0, phi.row(r).dot(solved.col(r)) * scale));
    return out;
}

StepFit RegressionEngine::step(std::size_t slice, std::span<const double> y_next) const
{
    const PathEnsemble& ens = design_->ensemble();
    const double dt = ens.grid.dt();
    StepFit out;
    FitResult mean = fit(slice, y_next);

    auto dw1 = ens.w1_increments.slice(slice);
    auto dw2 = ens.w2_increments.slice(slice);
    const std::size_t n = y_next.size();
    std::vector<double> t1(n);
    std::vector<double> t2(n);
    for (std::size_t p = 0; p < n; ++p) {
        const double centered = y_next[p] - mean.fitted[p];
        t1[p] = centered * dw1[p] / dt;
        t2[p] = centered * dw2[p] / dt;
    }
    const std::span<const double> both[2] = {t1, t2};
    auto loads = fit_many(slice, both);

    out.mean = std::move(mean.fitted);
    out.mean_se = mean.fitted_se;
    out.loading_w1 = std::move(loads[0].fitted);
    out.loading_w1_se = loads[0].fitted_se;
    out.loading_w2 = std::move(loads[1].fitted);
    out.loading_w2_se = loads[1].fitted_se;
    return out;
}

std::vector<double> cond_expect(std::span<const double> targets, std::size_t slice,
                                const PathEnsemble& ens, const GirsanovWeights* weights,
                                const BasisSpec& basis, std::size_t target_slice)
{
    const std::size_t m = ens.n_steps();
    if (target_slice == SIZE_MAX) target_slice = m;
    if (slice > m || target_slice > m || slice > target_slice)
        throw InvalidArgument("cond_expect: slice out of range");
    if (targets.size() != ens.n_paths())
        throw InvalidArgument("cond_expect: target length does not match n_paths");
    if (slice == target_slice) return {targets.begin(), targets.end()};

    const Design design(ens, basis, 0);
    const std::vector<double> w =
        weights ? weights->ratio(slice, target_slice) : std::vector<double>(ens.n_paths(), 1.0);
    Eigen::MatrixXd scratch;
    const Eigen::MatrixXd& phi = design.matrix(slice, scratch);
    const Solver solver = factorize(phi, w, basis.ridge_factor, slice);
    const std::span<const double> one[1] = {targets};
    return std::move(
        solve_targets(phi, w, solver.gram, solver.ldlt, solver.weight_sum, solver.weight_sq_sum, one).front().fitted);
}

namespace {

std::vector<double> loading(std::span<const double> y_next, std::size_t slice,
                            const PathEnsemble& ens, const GirsanovWeights* weights,
                            const BasisSpec& basis, Component c)
{
    if (slice >= ens.n_steps()) throw InvalidArgument("loading extraction needs slice < n_steps");
    if (y_next.size() != ens.n_paths())
        throw InvalidArgument("loading extraction: length does not match n_paths");
    const std::vector<double> mean = cond_expect(y_next, slice, ens, weights, basis, slice + 1);
    auto dw = ens.increments(c).slice(slice);
    const double dt = ens.grid.dt();
    std::vector<double> t(y_next.size());
    for (std::size_t p = 0; p < t.size(); ++p) t[p] = (y_next[p] - mean[p]) * dw[p] / dt;
    return cond_expect(t, slice, ens, weights, basis, slice + 1);
}

} // namespace

std::vector<double> extract_z(std::span<const double> y_next, std::size_t slice,
                              const PathEnsemble& ens, const GirsanovWeights* weights,
                              const BasisSpec& basis, double sigma)
{
    if (!(std::abs(sigma) > 0.0)) throw InvalidArgument("extract_z: sigma must be nonzero");
    auto z = loading(y_next, slice, ens, weights, basis, Component::w1);
    for (double& v : z) v /= sigma;
    return z;
}

std::vector<double> extract_zeta(std::span<const double> y_next, std::size_t slice,
                                 const PathEnsemble& ens, const GirsanovWeights* weights,
                                 const BasisSpec& basis)
{
    return loading(y_next, slice, ens, weights, basis, Component::w2);
}

} // namespace qbsde
