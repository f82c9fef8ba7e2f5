#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qbsde/analysis.hpp"
#include "qbsde/config.hpp"
#include "qbsde/solver.hpp"

namespace qbsde {

/// Oracle matching config.family on the given ensemble; nullopt for `general`.
std::optional<OracleField> family_oracle(const RunConfig& config, const PathEnsemble& ens);

struct SolveRun {
    SolveResult result;
    std::optional<OracleField> oracle;
};

/// solve() plus the family oracle on the same ensemble.
SolveRun run_solve(const RunConfig& config);

nlohmann::json to_json(const NormReport& norms);
nlohmann::json to_json(const ConvergenceTrace& trace);
nlohmann::json to_json(const ChainTrace& trace);
/// An infinite bound (no quadratic part) is written as null.
nlohmann::json to_json(const CertificateReport& cert);
nlohmann::json to_json(const ComparisonReport& rep);

/// summary.json: y0, se, norms, residuals, trace, certificate and, when
/// present, the oracle value with its standard error.
nlohmann::json summary_json(const RunConfig& config, const SolveRun& run);

/// Columns path_id,time_index,y,z,zeta for the first `path_limit` paths
/// (all paths when 0). z and zeta at the last slice are written as 0.
void write_fields_csv(std::ostream& out, const SolutionTriple& sol, std::size_t path_limit);

struct ConvergenceRow {
    std::size_t level = 0;
    double error = 0.0;
    double runtime = 0.0;
    double y0 = 0.0;
    double y0_se = 0.0;
    double oracle_y0 = 0.0;
    double oracle_se = 0.0;
};

/// Columns level,error,runtime,y0,y0_se,oracle_y0,oracle_se.
void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows);

/// Whitespace-separated copy for plotting tools ("# level error runtime").
void write_convergence_dat(std::ostream& out, const std::vector<ConvergenceRow>& rows);

/// %.17g, shared by the CSV writers.
std::string format_double(double v);

void write_file(const std::filesystem::path& file, const std::string& text);

} // namespace qbsde
