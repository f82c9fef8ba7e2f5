#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "qbsde/certificate.hpp"
#include "qbsde/field.hpp"
#include "qbsde/model.hpp"
#include "qbsde/norms.hpp"
#include "qbsde/paths.hpp"
#include "qbsde/regress.hpp"

namespace qbsde {

/// The generator as the backward sweep sees it: evaluated slice by slice,
/// one value per path. Implementations may depend on the path (stage and
/// transformed drivers carry per-path fields).
class Driver {
public:
    virtual ~Driver() = default;

    /// out[p] = f(t_i, y[p], u[p]) with u = sigma z.
    virtual void f(std::size_t slice, std::span<const double> y, std::span<const double> u,
                   std::span<double> out) const = 0;
    /// Partial derivatives of f in y and u.
    virtual void grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
                      std::span<double> fy, std::span<double> fu) const = 0;
    /// Bracket coefficient g per path.
    virtual void g(std::size_t slice, std::span<double> out) const = 0;
    virtual double sigma(std::size_t slice) const = 0;
    virtual std::vector<double> terminal(const PathEnsemble& ens) const = 0;
    /// Analytic upper bound of |terminal|.
    virtual double terminal_sup() const = 0;
};

/// Deterministic shift G with G' = f(t, -G, 0), G(0) = 0, on the grid.
struct DeterministicShift {
    std::vector<double> level;  // G(t_i)
    std::vector<double> rate;   // G'(t_i) = f(t_i, -G(t_i), 0)

    bool is_zero() const;
};

/// Integrates the shift ODE with RK4 and `substeps` steps per grid interval.
DeterministicShift solve_shift(const GeneratorSpec& gen, const GridSpec& grid, std::size_t substeps = 16);

/// A family member on a grid, optionally shifted:
///   k(t, y, u) = f(t, y - G, u) - G',  terminal xi + G(T).
/// With the shift k(t, 0, 0) = 0 and Y = Ybar - G recovers the original solution.
class GeneratorDriver final : public Driver {
public:
    GeneratorDriver(GeneratorSpec gen, GridSpec grid, std::optional<DeterministicShift> shift = {});

    void f(std::size_t slice, std::span<const double> y, std::span<const double> u,
           std::span<double> out) const override;
    void grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
              std::span<double> fy, std::span<double> fu) const override;
    void g(std::size_t slice, std::span<double> out) const override;
    double sigma(std::size_t slice) const override;
    std::vector<double> terminal(const PathEnsemble& ens) const override;
    double terminal_sup() const override;

    const GeneratorSpec& spec() const { return gen_; }
    const TerminalCondition& terminal_condition() const { return terminal_; }
    const std::optional<DeterministicShift>& shift() const { return shift_; }

private:
    GeneratorSpec gen_;
    GridSpec grid_;
    std::optional<DeterministicShift> shift_;
    TerminalCondition terminal_;
};

/// Increment equation around an accumulated solution (Ytil, Ztil):
///   h(y, u) = k(Ytil + y, sigma Ztil + u) - k(Ytil, sigma Ztil)
/// with its own terminal piece.
class StageDriver final : public Driver {
public:
    StageDriver(std::shared_ptr<const Driver> base, const Field& y_acc, const Field& z_acc,
                std::vector<double> terminal_piece, double terminal_piece_sup);

    void f(std::size_t slice, std::span<const double> y, std::span<const double> u,
           std::span<double> out) const override;
    void grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
              std::span<double> fy, std::span<double> fu) const override;
    void g(std::size_t slice, std::span<double> out) const override;
    double sigma(std::size_t slice) const override;
    std::vector<double> terminal(const PathEnsemble& ens) const override;
    double terminal_sup() const override;

private:
    std::shared_ptr<const Driver> base_;
    Field y_acc_;
    Field u_acc_;
    Field anchor_;
    std::vector<double> terminal_;
    double terminal_sup_;
};

/// Linearization removed by the exponential transform. alpha and gamma are
/// per path and slice (they may depend on an accumulated solution);
/// exp_factor holds e^{A_i} with A_i = sum_{j<i} alpha_j dt.
struct TransformParams {
    Field alpha;
    Field gamma;
    Field exp_factor;
    /// Analytic bound on exp_factor, e^{||int r||}.
    double exp_bound = 1.0;

    bool is_identity() const;
};

/// alpha = f_y(t_i, 0, 0), gamma = f_u(t_i, 0, 0) of `base` per path.
TransformParams linearize(const Driver& base, const PathEnsemble& ens, double r_int_inf);

/// Transformed generator
///   fbar(ybar, ubar) = E (h(ybar/E, ubar/E) - h(0, 0)) - alpha ybar - gamma ubar,
///   gbar = g / E,  xibar = E_T xi,  E = exp_factor.
class TransformedDriver final : public Driver {
public:
    TransformedDriver(std::shared_ptr<const Driver> base, std::shared_ptr<const TransformParams> params,
                      const PathEnsemble& ens);

    void f(std::size_t slice, std::span<const double> y, std::span<const double> u,
           std::span<double> out) const override;
    void grad(std::size_t slice, std::span<const double> y, std::span<const double> u,
              std::span<double> fy, std::span<double> fu) const override;
    void g(std::size_t slice, std::span<double> out) const override;
    double sigma(std::size_t slice) const override;
    std::vector<double> terminal(const PathEnsemble& ens) const override;
    double terminal_sup() const override;

private:
    std::shared_ptr<const Driver> base_;
    std::shared_ptr<const TransformParams> params_;
    Field origin_;
};

struct Transformed {
    std::shared_ptr<const TransformedDriver> driver;
    GirsanovWeights weights;
};

/// Builds the transformed driver and the measure change: kernel gamma on W1
/// and, when given, `orthogonal_kernel` on W2 (the two weight streams multiply).
Transformed transform_generator(std::shared_ptr<const Driver> base,
                                std::shared_ptr<const TransformParams> params, const PathEnsemble& ens,
                                const Field* orthogonal_kernel = nullptr, const WeightOptions& opts = {});

/// Bounds of a transformed generator: r and theta grow by e^{||int r|| / 2},
/// so beta grows by e^{||int r||}.
CoefficientBounds transformed_bounds(const CoefficientBounds& bounds);

struct SolutionTriple {
    Field y;
    Field z;
    Field zeta;
    NormReport norms;
    /// max over (i, path) of the conditional expectation of the one-step
    /// dynamics defect (martingale terms have zero conditional mean).
    double residual = 0.0;
    /// Root mean square of the pathwise one-step defect (regression residual).
    double defect_rms = 0.0;
    /// Standard error of Y per slice.
    std::vector<double> y_se;
    double y0 = 0.0;
    double y0_se = 0.0;

    static SolutionTriple zero(const GridSpec& grid);
};

/// Y = Ybar / E, Z = Zbar / E, zeta = zetabar / E; y_se scales by the
/// largest 1/E on each slice. Norms, residual and defect stay as given.
SolutionTriple untransform_solution(const SolutionTriple& sol, const TransformParams& params);

struct ConvergenceTrace {
    std::vector<double> distances;
    std::vector<double> ratios;
    std::vector<double> iterate_triple_sq;
    std::size_t ball_violations = 0;
    std::size_t iterations = 0;
    double ball_radius = 0.0;
    double contraction_bound = 0.0;
    /// Geometric rate fitted to the distances above the round-off floor.
    double fitted_rate = 0.0;
    double noise_floor = 0.0;
    bool converged = false;
};

struct SolveOptions {
    double tol = 1e-4;
    std::size_t max_iter = 50;
    double ball_slack = 2.0;
    double contraction_slack = 2.0;
    NormOptions norms;
    std::size_t splitting_cap = 512;
    double split_safety = 0.8;
    WeightOptions weights;
    std::size_t shift_substeps = 16;

    bool operator==(const SolveOptions&) const = default;
};

struct SmallResult {
    SolutionTriple solution;
    ConvergenceTrace trace;
};

/// One backward sweep of the globally frozen Picard map.
SolutionTriple apply_F(const SolutionTriple& frozen, const Driver& driver, const PathEnsemble& ens,
                       const GirsanovWeights* weights, const BasisSpec& basis);

/// Picard iteration from `initial` (zero triple by default) for a generator
/// with alpha = gamma = 0. The f(t, 0, 0) part is not part of the map; callers
/// remove it with the deterministic shift. Requires
/// terminal_sup <= contraction_threshold(bounds).
SmallResult solve_small(const Driver& driver, const PathEnsemble& ens, const BasisSpec& basis,
                        const CoefficientBounds& bounds, const SolveOptions& opts = {},
                        const GirsanovWeights* weights = nullptr,
                        const SolutionTriple* initial = nullptr);

SmallResult solve_small(const Driver& driver, std::shared_ptr<const Design> design,
                        const CoefficientBounds& bounds, const SolveOptions& opts,
                        const GirsanovWeights* weights, const SolutionTriple* initial);

/// m = ceil(sup / (safety * threshold)) equal pieces h / m.
std::vector<TerminalCondition> split_terminal(const TerminalCondition& tc, double threshold,
                                              double safety = 0.8);

struct StageReport {
    std::size_t index = 0;
    std::size_t iterations = 0;
    double last_distance = 0.0;
    double ess_fraction = 1.0;
    std::size_t ball_violations = 0;
};

struct ChainTrace {
    std::size_t pieces = 1;
    double threshold = 0.0;
    double shifted_terminal_sup = 0.0;
    std::vector<StageReport> stages;
    double min_ess_fraction = 1.0;
    std::size_t total_iterations = 0;
    /// Trace of the first stage (the whole solve when pieces == 1).
    ConvergenceTrace first_stage;
};

struct ChainResult {
    SolutionTriple solution;
    ChainTrace trace;
};

ChainResult solve_chain(const GeneratorSpec& gen, const PathEnsemble& ens, const BasisSpec& basis,
                        const SolveOptions& opts = {});

ChainResult solve_chain(const GeneratorSpec& gen, std::shared_ptr<const Design> design,
                        const SolveOptions& opts);

/// Fills norms, residual, defect and standard errors of `sol` for the
/// equation given by `driver` under the measure given by `weights`.
/// With `centered` the f(t, 0, 0) part is left out, as in the Picard map.
void finalize(SolutionTriple& sol, const Driver& driver, std::shared_ptr<const Design> design,
              const GirsanovWeights* weights, bool centered, const NormOptions& norms);

struct SolveResult {
    GridSpec grid;
    SolutionTriple solution;
    ChainTrace trace;
    CertificateReport certificate;
};

/// Generates the ensemble, runs the chain and attaches the BMO certificate.
SolveResult solve(const GeneratorSpec& gen, const GridSpec& grid, const BasisSpec& basis,
                  const SolveOptions& opts = {});

} // namespace qbsde
