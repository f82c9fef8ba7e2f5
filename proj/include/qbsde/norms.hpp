#pragma once

#include <memory>
#include <vector>

#include "qbsde/field.hpp"
#include "qbsde/model.hpp"
#include "qbsde/paths.hpp"
#include "qbsde/regress.hpp"

namespace qbsde {

/// How a supremum over grid nodes and paths is estimated. The plain maximum
/// is biased upward by Monte Carlo noise in fitted fields; the quantile is
/// biased downward for genuinely heavy tails.
enum class SupEstimator { max, quantile };

struct NormOptions {
    SupEstimator sup = SupEstimator::max;
    double quantile = 0.999;

    bool operator==(const NormOptions&) const = default;
};

struct NormReport {
    double y_sup = 0.0;
    double z_h2 = 0.0;
    double n_bmo = 0.0;
    double zm_n_bmo = 0.0;
    double triple_sq = 0.0;
};

struct BmoNorms {
    double n_bmo = 0.0;     // from sum zeta^2 dt
    double zm_n_bmo = 0.0;  // from sum (sigma^2 z^2 + zeta^2) dt
};

double triple_sq(double y_sup, double z_h2, double n_bmo);

/// max |field| over all nodes and paths.
double ess_sup(const Field& field);
/// q-quantile of |field| over all nodes and paths.
double ess_sup_quantile(const Field& field, double q = 0.999);
double ess_sup(const Field& field, const NormOptions& opts);

/// Tail-energy norms by regression of pathwise tail sums at every slice.
///
/// All three norms are square roots of the largest fitted conditional tail
/// energy (floored at 0), so they scale like the fields. With weights the
/// conditional expectations are taken under the changed measure.
class NormEstimator {
public:
    NormEstimator(std::shared_ptr<const Design> design, std::vector<double> sigma_per_slice,
                  const GirsanovWeights* weights = nullptr, NormOptions opts = {});

    double h2(const Field& z) const;
    BmoNorms bmo(const Field& z, const Field& zeta) const;
    NormReport report(const Field& y, const Field& z, const Field& zeta) const;

    const NormOptions& options() const { return opts_; }

private:
    struct Tails {
        double z = 0.0;
        double zeta = 0.0;
        double combined = 0.0;
    };
    Tails tails(const Field* z, const Field* zeta) const;

    RegressionEngine engine_;
    std::vector<double> sigma_;
    NormOptions opts_;
};

std::vector<double> sigma_on_grid(const TimeFunction& sigma, const GridSpec& grid);

double h2_norm(const Field& z, const PathEnsemble& ens, const TimeFunction& sigma,
               const BasisSpec& basis, const NormOptions& opts = {});

BmoNorms bmo_norms(const Field& z, const Field& zeta, const PathEnsemble& ens,
                   const TimeFunction& sigma, const BasisSpec& basis, const NormOptions& opts = {});

NormReport estimate_norms(const Field& y, const Field& z, const Field& zeta, const PathEnsemble& ens,
                          const TimeFunction& sigma, const BasisSpec& basis,
                          const NormOptions& opts = {});

} // namespace qbsde
