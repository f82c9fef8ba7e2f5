#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "qbsde/field.hpp"
#include "qbsde/model.hpp"

namespace qbsde {

enum class Component { w1, w2 };

/// Two independent Brownian components on a uniform grid.
///
/// W1 is the driving martingale M (integrand Z); W2 carries the orthogonal
/// martingale N (loading zeta). Increments have n_steps slices, levels
/// n_steps + 1 slices starting at zero.
struct PathEnsemble {
    GridSpec grid;
    Field w1_increments;
    Field w2_increments;
    Field w1_levels;
    Field w2_levels;

    const Field& increments(Component d) const { return d == Component::w1 ? w1_increments : w2_increments; }
    const Field& levels(Component d) const { return d == Component::w1 ? w1_levels : w2_levels; }
    std::size_t n_paths() const { return grid.n_paths; }
    std::size_t n_steps() const { return grid.n_steps; }
};

struct GenerateOptions {
    /// Upper bound on the memory held by the four fields of the ensemble.
    std::size_t memory_budget_bytes = std::size_t{3} << 30;
};

/// Seed of the random stream for (stream, path). Each path draws from its
/// own engine, so results do not depend on the worker count and adding
/// paths never perturbs existing ones:
///   seed = splitmix64(splitmix64(root ^ (stream * 0x9E3779B97F4A7C15)) + path)
std::uint64_t stream_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t path);

std::uint64_t splitmix64(std::uint64_t x);

PathEnsemble generate(const GridSpec& grid, const GenerateOptions& opts = {});

/// Rebuilds levels from increments so that level differences equal the
/// stored increments bitwise.
PathEnsemble assemble_ensemble(const GridSpec& grid, Field w1_increments, Field w2_increments);

/// Cumulative log stochastic exponential on the grid.
class GirsanovWeights {
public:
    GirsanovWeights() = default;
    GirsanovWeights(Field log_weights, bool normalized);

    /// Identity measure change (all weights 1).
    static GirsanovWeights identity(const GridSpec& grid, bool normalized = true);

    const Field& log_weights() const { return log_weights_; }
    bool normalized() const { return normalized_; }
    std::size_t n_slices() const { return log_weights_.n_slices(); }
    std::size_t n_paths() const { return log_weights_.n_paths(); }

    /// Raw cumulative weight E_t at slice i.
    double raw(std::size_t slice, std::size_t path) const;

    /// Weights at `slice`, renormalized to mean 1 when normalized() is set.
    std::vector<double> at(std::size_t slice) const;

    /// Ratio weights E_to / E_from, renormalized to mean 1 when normalized()
    /// is set. Used for conditional expectations at `from` of quantities
    /// measurable at `to`.
    std::vector<double> ratio(std::size_t from, std::size_t to) const;

    /// (sum w)^2 / (n sum w^2) of the terminal weights.
    double ess_fraction() const;

    /// Product of two measure changes (log weights add).
    GirsanovWeights operator*(const GirsanovWeights& other) const;

private:
    Field log_weights_;
    bool normalized_ = true;
};

struct WeightOptions {
    bool normalize = true;
    /// WeightDegeneracy below this fraction of n_paths.
    double ess_floor = 0.05;

    bool operator==(const WeightOptions&) const = default;
};

/// log E_{i+1} = log E_i + lambda_i dW_i - lambda_i^2 dt / 2 with lambda an
/// adapted per-path field (n_steps or n_steps + 1 slices; slice i is used on
/// step i).
GirsanovWeights girsanov_weights(const PathEnsemble& ens, const Field& integrand, Component driver,
                                 const WeightOptions& opts = {});

/// Throws WeightDegeneracy if the terminal ESS fraction is below the floor.
void check_degeneracy(const GirsanovWeights& weights, double ess_floor);

double effective_sample_size_fraction(std::span<const double> weights);

/// xi per path: h(W1_T, W2_T).
std::vector<double> terminal_values(const PathEnsemble& ens, const TerminalCondition& tc);

/// Binary dump: 8-byte magic "QBSDEENS", u32 version, f64 T, u64 n_steps,
/// u64 n_paths, u64 seed, then W1 and W2 increments as row-major
/// n_paths x n_steps float64, everything little-endian.
void save_ensemble(const PathEnsemble& ens, const std::filesystem::path& file);
PathEnsemble load_ensemble(const std::filesystem::path& file);

} // namespace qbsde
