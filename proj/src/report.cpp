#include "qbsde/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "qbsde/errors.hpp"

namespace qbsde {

namespace {

nlohmann::json finite_or_null(double v)
{
    if (std::isfinite(v)) return v;
    return nullptr;
}

} // namespace

std::optional<OracleField> family_oracle(const RunConfig& config, const PathEnsemble& ens)
{
    const auto& g = config.generator;
    switch (config.family) {
    case GeneratorFamily::general: return std::nullopt;
    case GeneratorFamily::quadratic: return oracle_cole_hopf(g.gamma_q, ens, g.terminal, config.basis);
    case GeneratorFamily::linear: return oracle_linear(g.b.level, g.a.level, ens, g.terminal, config.basis);
    case GeneratorFamily::orthogonal: return oracle_orthogonal(g.g.level, ens, g.terminal, config.basis);
    }
    return std::nullopt;
}

SolveRun run_solve(const RunConfig& config)
{
    config.validate();
    SolveRun run{solve(config.generator, config.grid, config.basis, config.solve), std::nullopt};
    if (config.family != GeneratorFamily::general) run.oracle = family_oracle(config, generate(config.grid));
    return run;
}

nlohmann::json to_json(const NormReport& n)
{
    return {{"y_sup", n.y_sup}, {"z_h2", n.z_h2}, {"n_bmo", n.n_bmo}, {"zm_n_bmo", n.zm_n_bmo},
            {"triple_sq", n.triple_sq}};
}

nlohmann::json to_json(const ConvergenceTrace& t)
{
    return {{"iterations", t.iterations},
            {"converged", t.converged},
            {"distances", t.distances},
            {"ratios", t.ratios},
            {"iterate_triple_sq", t.iterate_triple_sq},
            {"ball_violations", t.ball_violations},
            {"ball_radius", t.ball_radius},
            {"contraction_bound", t.contraction_bound},
            {"fitted_rate", t.fitted_rate},
            {"noise_floor", t.noise_floor}};
}

nlohmann::json to_json(const ChainTrace& t)
{
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : t.stages)
        stages.push_back({{"index", s.index},
                          {"iterations", s.iterations},
                          {"last_distance", s.last_distance},
                          {"ess_fraction", s.ess_fraction},
                          {"ball_violations", s.ball_violations}});
    return {{"pieces", t.pieces},
            {"threshold", finite_or_null(t.threshold)},
            {"shifted_terminal_sup", t.shifted_terminal_sup},
            {"min_ess_fraction", t.min_ess_fraction},
            {"total_iterations", t.total_iterations},
            {"stages", stages},
            {"first_stage", to_json(t.first_stage)}};
}

nlohmann::json to_json(const CertificateReport& c)
{
    return {{"inputs",
             {{"C", c.inputs.C},
              {"Cf", c.inputs.Cf},
              {"Cg", c.inputs.Cg},
              {"lambda_of_C", c.inputs.lambda_of_C},
              {"k_norm", c.inputs.k_norm}}},
            {"bound", finite_or_null(c.bound)},
            {"estimate", c.estimate},
            {"pass", c.pass}};
}

nlohmann::json to_json(const ComparisonReport& r)
{
    return {{"ordered_fraction", r.ordered_fraction},
            {"min_gap", r.min_gap},
            {"tol_mc", r.tol_mc},
            {"verdict", r.pass ? "pass" : "fail"},
            {"y0_a", r.y0_a},
            {"y0_b", r.y0_b},
            {"lipschitz_a", finite_or_null(r.lipschitz_a)},
            {"lipschitz_b", finite_or_null(r.lipschitz_b)}};
}

nlohmann::json summary_json(const RunConfig& config, const SolveRun& run)
{
    const auto& sol = run.result.solution;
    nlohmann::json j = {{"family", std::string(to_string(config.family))},
                        {"grid",
                         {{"T", config.grid.horizon},
                          {"n_steps", config.grid.n_steps},
                          {"n_paths", config.grid.n_paths},
                          {"seed", config.grid.seed}}},
                        {"y0", sol.y0},
                        {"y0_se", sol.y0_se},
                        {"residual", sol.residual},
                        {"defect_rms", sol.defect_rms},
                        {"norms", to_json(sol.norms)},
                        {"trace", to_json(run.result.trace)},
                        {"certificate", to_json(run.result.certificate)}};
    if (run.oracle) {
        const double y0 = run.oracle->y0();
        j["oracle"] = {{"y0", y0},
                       {"y0_se", run.oracle->y0_se()},
                       {"abs_error", std::abs(sol.y0 - y0)},
                       {"rel_error", y0 == 0.0 ? nlohmann::json(nullptr) : nlohmann::json(std::abs(sol.y0 - y0) / std::abs(y0))}};
    } else {
        j["oracle"] = nullptr;
    }
    return j;
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_fields_csv(std::ostream& out, const SolutionTriple& sol, std::size_t path_limit)
{
    const std::size_t n = sol.y.n_paths();
    const std::size_t slices = sol.y.n_slices();
    const std::size_t paths = path_limit == 0 ? n : std::min(path_limit, n);
    out << "path_id,time_index,y,z,zeta\n";
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t i = 0; i < slices; ++i) {
            const bool last = i + 1 == slices;
            out << p << ',' << i << ',' << format_double(sol.y(i, p)) << ','
                << format_double(last ? 0.0 : sol.z(i, p)) << ',' << format_double(last ? 0.0 : sol.zeta(i, p))
                << '\n';
        }
}

void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows)
{
    out << "level,error,runtime,y0,y0_se,oracle_y0,oracle_se\n";
    for (const auto& r : rows)
        out << r.level << ',' << format_double(r.error) << ',' << format_double(r.runtime) << ','
            << format_double(r.y0) << ',' << format_double(r.y0_se) << ',' << format_double(r.oracle_y0) << ','
            << format_double(r.oracle_se) << '\n';
}

void write_convergence_dat(std::ostream& out, const std::vector<ConvergenceRow>& rows)
{
    out << "# level error runtime\n";
    for (const auto& r : rows)
        out << r.level << ' ' << format_double(r.error) << ' ' << format_double(r.runtime) << '\n';
}

void write_file(const std::filesystem::path& file, const std::string& text)
{
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write '" + file.string() + "'");
    out << text;
    if (!out) throw Error("failed writing '" + file.string() + "'");
}

} // namespace qbsde
