#pragma once

#include "qbsde/model.hpp"
#include "qbsde/norms.hpp"

namespace qbsde {

/// Constants of the a-priori BMO estimate for the martingale part.
struct BmoBoundInputs {
    double C = 0.0;            // sup |Y|
    double Cf = 0.0;           // quadratic growth of f in z
    double Cg = 0.0;           // bound on |g|
    double lambda_of_C = 0.0;  // y-growth function at C
    double k_norm = 0.0;       // H2 norm of k

    void validate() const;
};

/// e^{8 C Cbar} (4 Cbar lambda(C) ||k|| + 1) / (4 Cbar^2) with Cbar = max(Cf, Cg).
/// Throws DegenerateBounds for Cbar == 0.
double bmo_certificate(const BmoBoundInputs& inputs);

/// Growth constants of a family member.
///
///   |f(t, y, z)| <= lambda(|y|) k^2 + Cf |sigma z|^2,  |g| <= Cg,  k == 1
///
/// with Cf = |gamma_q|/2 + sup|c|/2 and
/// lambda(C) = sup|a| + sup|b| C + |mu| sup_{|y|<=C} |phi(y)| + sup|c|/2
/// (the linear z term is absorbed by |c z| <= |c|/2 + |c| z^2 / 2).
/// C is the larger of the analytic sup bound e^{int r}(||xi|| + int |a|) and
/// the measured sup of Y.
BmoBoundInputs bmo_inputs(const GeneratorSpec& gen, double horizon, double measured_y_sup);

struct CertificateReport {
    BmoBoundInputs inputs;
    double bound = 0.0;
    double estimate = 0.0;  // squared estimated BMO norm of Z.M + N
    bool pass = false;
};

CertificateReport certify(const GeneratorSpec& gen, double horizon, const NormReport& norms);

} // namespace qbsde
