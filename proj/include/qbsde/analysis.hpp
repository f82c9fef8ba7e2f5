#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qbsde/certificate.hpp"
#include "qbsde/field.hpp"
#include "qbsde/model.hpp"
#include "qbsde/paths.hpp"
#include "qbsde/regress.hpp"
#include "qbsde/solver.hpp"

namespace qbsde {

/// Closed-form reference solution on an ensemble with its per-slice
/// standard error (delta method on the regressed conditional expectation).
struct OracleField {
    Field y;
    std::vector<double> se;

    double y0() const { return y(0, 0); }
    double y0_se() const { return se.front(); }
};

/// f = (gamma_q / 2) u^2, g = 0: e^{gamma_q Y} is a martingale, so
/// Y_t = log E[e^{gamma_q xi} | F_t] / gamma_q.
OracleField oracle_cole_hopf(double gamma_q, const PathEnsemble& ens, const TerminalCondition& tc,
                             const BasisSpec& basis);

/// f = a y + c: Y_t = e^{a(T-t)} E[xi | F_t] + (c/a)(e^{a(T-t)} - 1), c (T - t) for a = 0.
OracleField oracle_linear(double a, double c, const PathEnsemble& ens, const TerminalCondition& tc,
                          const BasisSpec& basis);

/// f = 0, constant g, terminal on W2: Y_t = log E[e^{2 g xi} | F_t] / (2 g).
OracleField oracle_orthogonal(double g, const PathEnsemble& ens, const TerminalCondition& tc,
                              const BasisSpec& basis);

struct ComparisonOptions {
    SolveOptions solve;
    /// Number of sampled points for the dominance check and pairs for the
    /// Lipschitz screen.
    std::size_t samples = 10000;
    std::uint64_t sample_seed = 7;
    /// Largest accepted difference quotient in the Lipschitz screen.
    double lipschitz_limit = 1e3;
    /// Half-widths of the sampled (y, z) box.
    double y_box = 2.0;
    double z_box = 2.0;
    bool check_dominance = true;
    double se_multiplier = 3.0;
};

struct ComparisonReport {
    double ordered_fraction = 0.0;
    double min_gap = 0.0;
    double tol_mc = 0.0;
    bool pass = false;
    double y0_a = 0.0;
    double y0_b = 0.0;
    double lipschitz_a = 0.0;
    double lipschitz_b = 0.0;
};

/// Largest sampled quotient |f(p) - f(q)| / (|dy| + |du| (1 + |u_p| + |u_q|)).
double lipschitz_screen(const GeneratorSpec& gen, double horizon, const ComparisonOptions& opts);

/// Throws DominanceViolated unless f_a >= f_b and g_a >= g_b on the sampled
/// box and xi_a >= xi_b on every path of `ens`.
void check_dominance(const GeneratorSpec& a, const GeneratorSpec& b, const PathEnsemble& ens,
                     const ComparisonOptions& opts);

/// Solves both generators on one ensemble (common random numbers) and checks
/// Y_a >= Y_b at every node up to se_multiplier combined standard errors.
ComparisonReport check_comparison(const GeneratorSpec& a, const GeneratorSpec& b, const GridSpec& grid,
                                  const BasisSpec& basis, const ComparisonOptions& opts = {});

} // namespace qbsde
