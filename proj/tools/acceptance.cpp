// Acceptance runner: criteria 1-9 in process, criterion 10 by comparing the
// in-process report with the report of a `qbsde selftest` subprocess.
//
// usage: acceptance <path to qbsde> [scratch directory]

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <omp.h>

#include "qbsde/acceptance.hpp"

using namespace qbsde;

namespace {

constexpr double kCriterion1Seconds = 60.0;

std::string slurp(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void line(int id, bool pass, const std::string& title, const std::string& detail)
{
    std::printf("[%s] criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
}

} // namespace

int main(int argc, char** argv)
{
    if (argc < 2) {
        std::cerr << "usage: acceptance <qbsde executable> [scratch directory]\n";
        return 2;
    }
    if (const char* w = std::getenv("BSDE_WORKERS"))
        if (std::atoi(w) > 0) omp_set_num_threads(std::atoi(w));
    const std::filesystem::path exe = argv[1];
    const std::filesystem::path scratch = argc > 2 ? argv[2] : std::filesystem::temp_directory_path() / "qbsde_acceptance";
    std::filesystem::create_directories(scratch);

    const auto results = run_acceptance_suite();
    bool all = true;
    for (const auto& r : results) {
        bool pass = r.pass;
        std::string detail = r.detail;
        if (r.id == 1) {
            pass = pass && r.seconds < kCriterion1Seconds;
            char buf[64];
            std::snprintf(buf, sizeof buf, "; runtime %.1f s (limit %.0f s)", r.seconds, kCriterion1Seconds);
            detail += buf;
        }
        all = all && pass;
        line(r.id, pass, r.title, detail);
    }

    const std::string first = format_acceptance_report(results);
    const auto report_a = scratch / "selftest_inprocess.txt";
    const auto report_b = scratch / "selftest_cli.txt";
    {
        std::ofstream(report_a, std::ios::binary) << first;
    }
    std::filesystem::remove(report_b);
    const std::string cmd = "\"" + exe.string() + "\" selftest --report \"" + report_b.string() + "\" > /dev/null";
    const int status = std::system(cmd.c_str());
    const std::string second = slurp(report_b);
    const bool same = !second.empty() && first == second;
    line(10, same, "Determinism",
         std::string("selftest reports ") + (same ? "byte-identical" : "differ") + " (" +
             std::to_string(first.size()) + " vs " + std::to_string(second.size()) + " bytes, selftest status " +
             std::to_string(status) + ")");
    all = all && same;
    return all ? 0 : 1;
}
