#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "qbsde/model.hpp"
#include "qbsde/regress.hpp"
#include "qbsde/solver.hpp"

namespace qbsde {

/// Declared shape of the generator. Anything but `general` restricts the
/// coefficients to a closed-form case and enables the matching oracle.
enum class GeneratorFamily { general, quadratic, linear, orthogonal };

std::string_view to_string(GeneratorFamily family);
GeneratorFamily parse_generator_family(std::string_view name);

struct OutputConfig {
    std::string directory = "out";
    bool json = true;
    bool csv = true;
    /// Paths written to fields.csv (0 writes every path).
    std::size_t csv_paths = 100;

    bool operator==(const OutputConfig&) const = default;
};

/// One YAML document with sections generator, terminal, grid, solver, output.
struct RunConfig {
    GeneratorFamily family = GeneratorFamily::general;
    GeneratorSpec generator;
    GridSpec grid;
    BasisSpec basis;
    SolveOptions solve;
    OutputConfig output;

    /// Throws ConfigError when the coefficients contradict `family` or a
    /// section fails its own validation.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the offending key ("grid.T", "solver.tol", ...)
/// for missing required keys, unknown keys and ill-typed values.
RunConfig parse_config(std::string_view yaml);
RunConfig load_config(const std::filesystem::path& file);

/// Every key is written, doubles with 17 significant digits, so
/// parse_config(emit_config(c)) == c.
std::string emit_config(const RunConfig& config);

} // namespace qbsde
