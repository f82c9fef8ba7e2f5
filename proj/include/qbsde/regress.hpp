#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qbsde/paths.hpp"

namespace qbsde {

/// Global polynomial basis in the Brownian levels at one slice.
///
/// Terms are products He_a(x1) He_b(x2), a + b <= degree, of probabilists'
/// Hermite polynomials in the (optionally standardized) levels. Same span as
/// the monomials but better conditioned on Gaussian states.
struct BasisSpec {
    int degree = 3;
    bool use_w1 = true;
    bool use_w2 = true;
    bool standardize = true;
    /// Ridge lambda = ridge_factor * n_paths on the normal equations.
    double ridge_factor = 1e-10;

    void validate() const;
    bool operator==(const BasisSpec&) const = default;
};

struct FitResult {
    std::vector<double> fitted;
    double residual_sd = 0.0;
    /// Typical standard error of a fitted value: residual_sd * sqrt(p / n_eff).
    double fitted_se = 0.0;
};

/// Design matrices of one ensemble under one basis.
///
/// Slices where an input has zero spread drop that input; slice 0 (trivial
/// filtration) always reduces to the constant column.
class Design {
public:
    Design(const PathEnsemble& ens, BasisSpec basis,
           std::size_t cache_budget_bytes = std::size_t{1} << 30);

    const PathEnsemble& ensemble() const { return *ens_; }
    const BasisSpec& basis() const { return basis_; }
    std::size_t n_terms(std::size_t slice) const;

    /// Design matrix of a slice: the cached one, or `scratch` filled in place.
    const Eigen::MatrixXd& matrix(std::size_t slice, Eigen::MatrixXd& scratch) const;

private:
    struct SliceInfo {
        bool use1 = false;
        bool use2 = false;
        double mean1 = 0.0, sd1 = 1.0, mean2 = 0.0, sd2 = 1.0;
        std::size_t terms = 1;
    };

    void build(std::size_t slice, Eigen::MatrixXd& out) const;

    const PathEnsemble* ens_;
    BasisSpec basis_;
    std::vector<SliceInfo> info_;
    std::vector<Eigen::MatrixXd> cache_;
};

/// One backward step: conditional mean of y_next and its increment loadings.
struct StepFit {
    std::vector<double> mean;        // E[y_next | F_i]
    std::vector<double> loading_w1;  // E[(y_next - mean) dW1 | F_i] / dt
    std::vector<double> loading_w2;  // E[(y_next - mean) dW2 | F_i] / dt
    double mean_se = 0.0;
    double loading_w1_se = 0.0;
    double loading_w2_se = 0.0;
};

/// Which weight ratio the fit at slice i uses.
enum class WeightSpan {
    one_step,    // E_{i+1} / E_i: targets measurable at slice i + 1
    to_horizon,  // E_T / E_i: targets measurable at the horizon
};

/// Weighted least-squares projections onto the slice basis.
///
/// With weights the fit at slice i uses the ratio selected by WeightSpan, so
/// fitted values approximate the conditional expectation under the changed
/// measure. Without weights every
/// path counts 1 and the fit is valid for targets measurable at any later
/// slice. The unweighted case runs through the same code with unit weights.
/// Gram matrices are factorized once at construction.
class RegressionEngine {
public:
    explicit RegressionEngine(std::shared_ptr<const Design> design,
                              const GirsanovWeights* weights = nullptr,
                              WeightSpan span = WeightSpan::one_step);

    const Design& design() const { return *design_; }
    std::shared_ptr<const Design> shared_design() const { return design_; }
    bool weighted() const { return weighted_; }

    FitResult fit(std::size_t slice, std::span<const double> target) const;

    /// Fits several targets with one pass over the design.
    std::vector<FitResult> fit_many(std::size_t slice,
                                    std::span<const std::span<const double>> targets) const;

    /// Pointwise standard error of fitted values at each path,
    /// residual_sd * sqrt(phi' G^-1 phi * sum w^2 / sum w).
    std::vector<double> pointwise_se(std::size_t slice, double residual_sd) const;

    /// Conditional mean of y_next and its W1 / W2 increment loadings.
    StepFit step(std::size_t slice, std::span<const double> y_next) const;

    std::span<const double> weights(std::size_t slice) const { return slices_[slice].weights; }
    double ess_fraction(std::size_t slice) const { return slices_[slice].ess_fraction; }

private:
    struct SliceSolver {
        Eigen::MatrixXd gram;
        Eigen::LDLT<Eigen::MatrixXd> ldlt;
        std::vector<double> weights;
        double weight_sum = 0.0;
        double weight_sq_sum = 0.0;
        double ess_fraction = 1.0;
    };

    std::shared_ptr<const Design> design_;
    bool weighted_ = false;
    std::vector<SliceSolver> slices_;
};

/// E[targets | F_slice] (under `weights` when given) for targets measurable
/// at `target_slice` (defaults to the horizon).
std::vector<double> cond_expect(std::span<const double> targets, std::size_t slice,
                                const PathEnsemble& ens, const GirsanovWeights* weights,
                                const BasisSpec& basis, std::size_t target_slice = SIZE_MAX);

/// Z at slice i: E[(y_next - E[y_next|F_i]) dW1_i | F_i] / (sigma dt).
std::vector<double> extract_z(std::span<const double> y_next, std::size_t slice,
                              const PathEnsemble& ens, const GirsanovWeights* weights,
                              const BasisSpec& basis, double sigma);

/// Loading of the orthogonal martingale on W2 at slice i.
std::vector<double> extract_zeta(std::span<const double> y_next, std::size_t slice,
                                 const PathEnsemble& ens, const GirsanovWeights* weights,
                                 const BasisSpec& basis);

} // namespace qbsde
