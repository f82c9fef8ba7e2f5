#include "qbsde/norms.hpp"

#include "qbsde/errors.hpp"

#include <algorithm>
#include <cmath>

namespace qbsde {

namespace {

double quantile_of(std::vector<double>& values, double q)
{
    if (values.empty()) return 0.0;
    if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must be in (0, 1]");
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()))) - 1;
    auto nth = values.begin() + static_cast<std::ptrdiff_t>(std::min(k, values.size() - 1));
    std::nth_element(values.begin(), nth, values.end());
    return *nth;
}

} // namespace

double triple_sq(double y_sup, double z_h2, double n_bmo)
{
    return y_sup * y_sup + z_h2 * z_h2 + n_bmo * n_bmo;
}

double ess_sup(const Field& field)
{
    double m = 0.0;
    for (double v : field.values()) m = std::max(m, std::abs(v));
    return m;
}

double ess_sup_quantile(const Field& field, double q)
{
    std::vector<double> a(field.values().size());
    std::transform(field.values().begin(), field.values().end(), a.begin(),
                   [](double v) { return std::abs(v); });
    return quantile_of(a, q);
}

double ess_sup(const Field& field, const NormOptions& opts)
{
    return opts.sup == SupEstimator::max ? ess_sup(field) : ess_sup_quantile(field, opts.quantile);
}

std::vector<double> sigma_on_grid(const TimeFunction& sigma, const GridSpec& grid)
{
    std::vector<double> out(grid.n_steps + 1);
    for (std::size_t i = 0; i <= grid.n_steps; ++i) out[i] = sigma(grid.time(i));
    return out;
}

NormEstimator::NormEstimator(std::shared_ptr<const Design> design, std::vector<double> sigma_per_slice,
                             const GirsanovWeights* weights, NormOptions opts)
    : engine_(std::move(design), weights, WeightSpan::to_horizon),
      sigma_(std::move(sigma_per_slice)),
      opts_(opts)
{
    if (sigma_.size() != engine_.design().ensemble().n_steps() + 1)
        throw InvalidArgument("NormEstimator: sigma must have one value per slice");
}

NormEstimator::Tails NormEstimator::tails(const Field* z, const Field* zeta) const
{
    const PathEnsemble& ens = engine_.design().ensemble();
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    const double dt = ens.grid.dt();

    std::vector<double> tz(n, 0.0);
    std::vector<double> tn(n, 0.0);
    std::vector<double> tc(n, 0.0);
    Tails out;
    const bool quantile = opts_.sup == SupEstimator::quantile;
    std::vector<double> all_z, all_n, all_c;

    for (std::size_t i = m; i-- > 0;) {
        const double s2 = sigma_[i] * sigma_[i];
        for (std::size_t p = 0; p < n; ++p) {
            const double ez = z ? s2 * (*z)(i, p) * (*z)(i, p) * dt : 0.0;
            const double en = zeta ? (*zeta)(i, p) * (*zeta)(i, p) * dt : 0.0;
            tz[p] += ez;
            tn[p] += en;
            tc[p] += ez + en;
        }
        const std::span<const double> targets[3] = {tz, tn, tc};
        const auto fits = engine_.fit_many(i, targets);
        double* best[3] = {&out.z, &out.zeta, &out.combined};
        std::vector<double>* pool[3] = {&all_z, &all_n, &all_c};
        for (int k = 0; k < 3; ++k) {
            if (quantile) {
                pool[k]->insert(pool[k]->end(), fits[k].fitted.begin(), fits[k].fitted.end());
            } else {
                for (double v : fits[k].fitted) *best[k] = std::max(*best[k], v);
            }
        }
    }
    if (quantile) {
        out.z = std::max(0.0, quantile_of(all_z, opts_.quantile));
        out.zeta = std::max(0.0, quantile_of(all_n, opts_.quantile));
        out.combined = std::max(0.0, quantile_of(all_c, opts_.quantile));
    }
    out.z = std::sqrt(out.z);
    out.zeta = std::sqrt(out.zeta);
    out.combined = std::sqrt(out.combined);
    return out;
}

double NormEstimator::h2(const Field& z) const { return tails(&z, nullptr).z; }

BmoNorms NormEstimator::bmo(const Field& z, const Field& zeta) const
{
    const Tails t = tails(&z, &zeta);
    return {t.zeta, t.combined};
}

NormReport NormEstimator::report(const Field& y, const Field& z, const Field& zeta) const
{
    const Tails t = tails(&z, &zeta);
    NormReport r;
    r.y_sup = ess_sup(y, opts_);
    r.z_h2 = t.z;
    r.n_bmo = t.zeta;
    r.zm_n_bmo = t.combined;
    r.triple_sq = triple_sq(r.y_sup, r.z_h2, r.n_bmo);
    return r;
}

namespace {

NormEstimator make_estimator(const PathEnsemble& ens, const TimeFunction& sigma,
                             const BasisSpec& basis, const NormOptions& opts)
{
    auto design = std::make_shared<const Design>(ens, basis, 0);
    return NormEstimator(design, sigma_on_grid(sigma, ens.grid), nullptr, opts);
}

} // namespace

double h2_norm(const Field& z, const PathEnsemble& ens, const TimeFunction& sigma,
               const BasisSpec& basis, const NormOptions& opts)
{
    return make_estimator(ens, sigma, basis, opts).h2(z);
}

BmoNorms bmo_norms(const Field& z, const Field& zeta, const PathEnsemble& ens,
                   const TimeFunction& sigma, const BasisSpec& basis, const NormOptions& opts)
{
    return make_estimator(ens, sigma, basis, opts).bmo(z, zeta);
}

NormReport estimate_norms(const Field& y, const Field& z, const Field& zeta, const PathEnsemble& ens,
                          const TimeFunction& sigma, const BasisSpec& basis, const NormOptions& opts)
{
    return make_estimator(ens, sigma, basis, opts).report(y, z, zeta);
}

} // namespace qbsde
