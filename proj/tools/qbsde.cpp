// qbsde: solve, compare, convergence and selftest front end.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "qbsde/acceptance.hpp"
#include "qbsde/errors.hpp"
#include "qbsde/report.hpp"

using namespace qbsde;

namespace {

enum Exit : int { ok = 0, failure = 1, no_convergence = 2, config_error = 3, check_failed = 4, dominance = 5 };

void apply_worker_count()
{
    if (const char* w = std::getenv("BSDE_WORKERS")) {
        const int n = std::atoi(w);
        if (n > 0) omp_set_num_threads(n);
    }
}

std::filesystem::path out_dir(const RunConfig& c, const std::string& flag)
{
    return flag.empty() ? std::filesystem::path(c.output.directory) : std::filesystem::path(flag);
}

void write_solve_outputs(const RunConfig& c, const SolveRun& run, const std::filesystem::path& dir)
{
    if (c.output.json) write_file(dir / "summary.json", summary_json(c, run).dump(2) + "\n");
    if (c.output.csv) {
        std::ostringstream csv;
        write_fields_csv(csv, run.result.solution, c.output.csv_paths);
        write_file(dir / "fields.csv", csv.str());
    }
}

int cmd_solve(const std::string& config_file, const std::string& out)
{
    const RunConfig c = load_config(config_file);
    const SolveRun run = run_solve(c);
    const auto dir = out_dir(c, out);
    write_solve_outputs(c, run, dir);
    std::cout << "y0 = " << format_double(run.result.solution.y0) << " (se " << format_double(run.result.solution.y0_se)
              << "), pieces " << run.result.trace.pieces << "\n";
    if (run.oracle) std::cout << "oracle y0 = " << format_double(run.oracle->y0()) << "\n";
    std::cout << "wrote " << dir.string() << "\n";
    return ok;
}

int cmd_compare(const std::string& fa, const std::string& fb, const std::string& out, bool skip_dominance)
{
    const RunConfig a = load_config(fa);
    const RunConfig b = load_config(fb);
    if (!(a.grid == b.grid)) throw ConfigError("compare: both configs must share the grid section (T, steps, paths, seed)");
    if (!(a.basis == b.basis) || !(a.solve == b.solve))
        throw ConfigError("compare: both configs must share the solver section");
    ComparisonOptions opts;
    opts.solve = a.solve;
    opts.check_dominance = !skip_dominance;
    const ComparisonReport rep = check_comparison(a.generator, b.generator, a.grid, a.basis, opts);
    const auto dir = out_dir(a, out);
    write_file(dir / "comparison.json", to_json(rep).dump(2) + "\n");
    std::cout << (rep.pass ? "pass" : "fail") << ": min_gap " << format_double(rep.min_gap) << ", tol_mc "
              << format_double(rep.tol_mc) << "\n";
    return rep.pass ? ok : check_failed;
}

int cmd_convergence(const std::string& config_file, const std::vector<std::size_t>& steps,
                    const std::vector<std::size_t>& paths, const std::string& out)
{
    const RunConfig base = load_config(config_file);
    if (steps.empty() == paths.empty()) throw ConfigError("convergence: give exactly one of --steps or --paths");
    const auto& levels = steps.empty() ? paths : steps;
    for (std::size_t k = 1; k < levels.size(); ++k)
        if (levels[k] <= levels[k - 1]) throw ConfigError("convergence: sweep levels must be increasing");
    if (base.family == GeneratorFamily::general)
        throw ConfigError("convergence: generator.family must name a closed-form case");

    const auto dir = out_dir(base, out);
    std::vector<ConvergenceRow> rows;
    std::vector<double> noise;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        RunConfig c = base;
        (steps.empty() ? c.grid.n_paths : c.grid.n_steps) = levels[k];
        c.grid.seed = base.grid.seed + k;
        c.validate();
        const auto t0 = std::chrono::steady_clock::now();
        const SolveRun run = run_solve(c);
        ConvergenceRow row;
        row.level = levels[k];
        row.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        row.y0 = run.result.solution.y0;
        row.y0_se = run.result.solution.y0_se;
        row.oracle_y0 = run.oracle->y0();
        row.oracle_se = run.oracle->y0_se();
        row.error = std::abs(row.y0 - row.oracle_y0);
        rows.push_back(row);
        noise.push_back(std::hypot(row.y0_se, row.oracle_se));
        std::cout << "level " << row.level << ": error " << format_double(row.error) << "\n";
        if (levels.size() == 1) write_solve_outputs(c, run, dir);
    }
    std::ostringstream csv, dat;
    write_convergence_csv(csv, rows);
    write_convergence_dat(dat, rows);
    write_file(dir / "convergence.csv", csv.str());
    write_file(dir / "convergence.dat", dat.str());

    if (rows.size() >= 2) {
        const auto& last = rows.back();
        const auto& prev = rows[rows.size() - 2];
        if (last.error > prev.error + 2.0 * noise.back()) {
            std::cerr << "convergence: error grew from " << format_double(prev.error) << " to "
                      << format_double(last.error) << " beyond the 2x noise band\n";
            return check_failed;
        }
    }
    return ok;
}

int cmd_selftest(const std::string& report_file)
{
    const auto results = run_acceptance_suite();
    const std::string report = format_acceptance_report(results);
    std::cout << report;
    if (!report_file.empty()) write_file(report_file, report);
    for (const auto& r : results)
        if (!r.pass) return check_failed;
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    apply_worker_count();
    CLI::App app{"Quadratic BSDE solver"};
    app.require_subcommand(1);

    std::string config, out, config_a, config_b, report;
    bool skip_dominance = false;
    std::vector<std::size_t> steps, paths;

    auto* solve_cmd = app.add_subcommand("solve", "Solve one configuration");
    solve_cmd->add_option("-c,--config", config, "YAML configuration")->required();
    solve_cmd->add_option("-o,--out", out, "Output directory (overrides output.directory)");

    auto* compare_cmd = app.add_subcommand("compare", "Check the ordering Y_a >= Y_b on common paths");
    compare_cmd->add_option("-a", config_a, "Dominating configuration")->required();
    compare_cmd->add_option("-b", config_b, "Dominated configuration")->required();
    compare_cmd->add_option("-o,--out", out, "Output directory");
    compare_cmd->add_flag("--no-dominance-check", skip_dominance, "Skip the sampled dominance precondition");

    auto* conv_cmd = app.add_subcommand("convergence", "Refinement sweep against the family oracle");
    conv_cmd->add_option("-c,--config", config, "YAML configuration")->required();
    conv_cmd->add_option("--steps", steps, "Time steps per level")->delimiter(',');
    conv_cmd->add_option("--paths", paths, "Paths per level")->delimiter(',');
    conv_cmd->add_option("-o,--out", out, "Output directory");

    auto* self_cmd = app.add_subcommand("selftest", "Run the acceptance suite");
    self_cmd->add_option("--report", report, "Also write the report to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*solve_cmd) return cmd_solve(config, out);
        if (*compare_cmd) return cmd_compare(config_a, config_b, out, skip_dominance);
        if (*conv_cmd) return cmd_convergence(config, steps, paths, out);
        if (*self_cmd) return cmd_selftest(report);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const NoConvergence& e) {
        std::cerr << "no convergence: " << e.what() << "\n";
        return no_convergence;
    } catch (const DominanceViolated& e) {
        std::cerr << "dominance violated: " << e.what() << "\n";
        return dominance;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
    return failure;
}
