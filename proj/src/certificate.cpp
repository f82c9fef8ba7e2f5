#include "qbsde/certificate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qbsde/errors.hpp"

namespace qbsde {

void BmoBoundInputs::validate() const
{
    for (double v : {C, Cf, Cg, lambda_of_C, k_norm})
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("BmoBoundInputs: entries must be finite and nonnegative");
}

double bmo_certificate(const BmoBoundInputs& in)
{
    in.validate();
    const double cbar = std::max(in.Cf, in.Cg);
    if (cbar == 0.0) throw DegenerateBounds("bmo_certificate: max(Cf, Cg) is zero");
    return std::exp(8.0 * in.C * cbar) * (4.0 * cbar * in.lambda_of_C * in.k_norm + 1.0) / (4.0 * cbar * cbar);
}

BmoBoundInputs bmo_inputs(const GeneratorSpec& gen, double horizon, double measured_y_sup)
{
    const CoefficientBounds bounds = derive_bounds(gen, horizon);
    const double sup_a = gen.a.sup_abs();
    const double sup_c = gen.c.sup_abs();

    BmoBoundInputs in;
    in.C = std::max(std::exp(bounds.r_int_inf) * (gen.terminal.sup_norm() + horizon * sup_a), measured_y_sup);
    in.Cf = 0.5 * std::abs(gen.gamma_q) + 0.5 * sup_c;
    in.Cg = gen.g.sup_abs();

    double phi_sup = 0.0;
    switch (gen.phi) {
    case Nonlinearity::none: break;
    case Nonlinearity::tanh: phi_sup = std::tanh(in.C); break;
    case Nonlinearity::sin: phi_sup = std::sin(std::min(in.C, 0.5 * std::numbers::pi)); break;
    }
    in.lambda_of_C = sup_a + gen.b.sup_abs() * in.C + std::abs(gen.mu) * phi_sup + 0.5 * sup_c;
    in.k_norm = std::sqrt(horizon);
    return in;
}

CertificateReport certify(const GeneratorSpec& gen, double horizon, const NormReport& norms)
{
    CertificateReport rep;
    rep.inputs = bmo_inputs(gen, horizon, norms.y_sup);
    rep.estimate = norms.zm_n_bmo * norms.zm_n_bmo;
    if (std::max(rep.inputs.Cf, rep.inputs.Cg) == 0.0) {
        // No quadratic part: the estimate does not apply; report without a bound.
        rep.bound = std::numeric_limits<double>::infinity();
        rep.pass = true;
        return rep;
    }
    rep.bound = bmo_certificate(rep.inputs);
    rep.pass = rep.estimate <= rep.bound;
    return rep;
}

} // namespace qbsde
