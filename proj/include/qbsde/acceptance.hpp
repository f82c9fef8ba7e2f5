#pragma once

#include <string>
#include <vector>

namespace qbsde {

struct CriterionResult {
    int id = 0;
    std::string title;
    bool pass = false;
    /// Measured values against their pinned tolerances.
    std::string detail;
    /// Wall time; kept out of the report so reports are reproducible.
    double seconds = 0.0;
};

/// Runs acceptance criteria 1-9 (10 is determinism of this very report).
std::vector<CriterionResult> run_acceptance_suite();

/// One line per criterion; contains no timings.
std::string format_acceptance_report(const std::vector<CriterionResult>& results);

} // namespace qbsde
