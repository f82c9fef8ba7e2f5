#include "qbsde/paths.hpp"

#include "qbsde/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

namespace qbsde {

namespace {

constexpr std::array<char, 8> kMagic{'Q', 'B', 'S', 'D', 'E', 'E', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& in)
{
    std::array<unsigned char, sizeof(T)> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if (!in) throw InvalidArgument("ensemble file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

Field cumulative_levels(Field& increments, std::size_t n_steps, std::size_t n_paths)
{
    Field levels(n_steps + 1, n_paths, 0.0);
    for (std::size_t i = 0; i < n_steps; ++i) {
        auto prev = levels.slice(i);
        auto next = levels.slice(i + 1);
        auto inc = increments.slice(i);
        for (std::size_t p = 0; p < n_paths; ++p) {
            next[p] = prev[p] + inc[p];
            inc[p] = next[p] - prev[p];
        }
    }
    return levels;
}

} // namespace

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t path)
{
    return splitmix64(splitmix64(root ^ (stream * 0x9E3779B97F4A7C15ULL)) + path);
}

PathEnsemble assemble_ensemble(const GridSpec& grid, Field w1_increments, Field w2_increments)
{
    grid.validate();
    if (w1_increments.n_slices() != grid.n_steps || w1_increments.n_paths() != grid.n_paths ||
        w2_increments.n_slices() != grid.n_steps || w2_increments.n_paths() != grid.n_paths)
        throw InvalidArgument("assemble_ensemble: increment shape does not match the grid");

    PathEnsemble ens;
    ens.grid = grid;
    ens.w1_levels = cumulative_levels(w1_increments, grid.n_steps, grid.n_paths);
    ens.w2_levels = cumulative_levels(w2_increments, grid.n_steps, grid.n_paths);
    ens.w1_increments = std::move(w1_increments);
    ens.w2_increments = std::move(w2_increments);
    return ens;
}

PathEnsemble generate(const GridSpec& grid, const GenerateOptions& opts)
{
    grid.validate();
    const double cells = 4.0 * static_cast<double>(grid.n_paths) * static_cast<double>(grid.n_steps + 1);
    if (cells * sizeof(double) > static_cast<double>(opts.memory_budget_bytes))
        throw ResourceLimit("ensemble of " + std::to_string(grid.n_paths) + " x " +
                            std::to_string(grid.n_steps) + " exceeds the memory budget");

    const std::size_t n = grid.n_paths;
    const std::size_t m = grid.n_steps;
    const double sd = std::sqrt(grid.dt());
    Field inc1(m, n);
    Field inc2(m, n);

    const auto n_signed = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t ps = 0; ps < n_signed; ++ps) {
        const auto p = static_cast<std::size_t>(ps);
        std::mt19937_64 e1(stream_seed(grid.seed, 1, p));
        std::mt19937_64 e2(stream_seed(grid.seed, 2, p));
        std::normal_distribution<double> n1(0.0, sd);
        std::normal_distribution<double> n2(0.0, sd);
        for (std::size_t i = 0; i < m; ++i) {
            inc1(i, p) = n1(e1);
            inc2(i, p) = n2(e2);
        }
    }
    return assemble_ensemble(grid, std::move(inc1), std::move(inc2));
}

GirsanovWeights::GirsanovWeights(Field log_weights, bool normalized)
    : log_weights_(std::move(log_weights)), normalized_(normalized)
{
}

GirsanovWeights GirsanovWeights::identity(const GridSpec& grid, bool normalized)
{
    return GirsanovWeights(Field(grid.n_steps + 1, grid.n_paths, 0.0), normalized);
}

double GirsanovWeights::raw(std::size_t slice, std::size_t path) const
{
    return std::exp(log_weights_(slice, path));
}

namespace {

void normalize_mean_one(std::vector<double>& w)
{
    double sum = 0.0;
    for (double v : w) sum += v;
    const double mean = sum / static_cast<double>(w.size());
    if (mean == 1.0) return;
    for (double& v : w) v /= mean;
}

} // namespace

std::vector<double> GirsanovWeights::at(std::size_t slice) const
{
    auto lw = log_weights_.slice(slice);
    std::vector<double> w(lw.size());
    for (std::size_t p = 0; p < lw.size(); ++p) w[p] = std::exp(lw[p]);
    if (normalized_) normalize_mean_one(w);
    return w;
}

std::vector<double> GirsanovWeights::ratio(std::size_t from, std::size_t to) const
{
    auto a = log_weights_.slice(from);
    auto b = log_weights_.slice(to);
    std::vector<double> w(a.size());
    for (std::size_t p = 0; p < a.size(); ++p) w[p] = std::exp(b[p] - a[p]);
    if (normalized_) normalize_mean_one(w);
    return w;
}

double effective_sample_size_fraction(std::span<const double> weights)
{
    double s1 = 0.0;
    double s2 = 0.0;
    for (double w : weights) {
        s1 += w;
        s2 += w * w;
    }
    if (!(s2 > 0.0)) return 0.0;
    return s1 * s1 / (s2 * static_cast<double>(weights.size()));
}

double GirsanovWeights::ess_fraction() const
{
    const auto lw = log_weights_.slice(log_weights_.n_slices() - 1);
    // Scale by the max log weight so large exponents do not overflow.
    const double top = *std::max_element(lw.begin(), lw.end());
    std::vector<double> w(lw.size());
    for (std::size_t p = 0; p < lw.size(); ++p) w[p] = std::exp(lw[p] - top);
    return effective_sample_size_fraction(w);
}

GirsanovWeights GirsanovWeights::operator*(const GirsanovWeights& other) const
{
    if (other.n_slices() != n_slices() || other.n_paths() != n_paths())
        throw InvalidArgument("GirsanovWeights: shape mismatch in product");
    Field sum = log_weights_;
    auto dst = sum.values();
    auto src = other.log_weights_.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    return GirsanovWeights(std::move(sum), normalized_ && other.normalized_);
}

void check_degeneracy(const GirsanovWeights& weights, double ess_floor)
{
    const double ess = weights.ess_fraction();
    if (ess < ess_floor)
        throw WeightDegeneracy("effective sample size " + std::to_string(ess) +
                                   " of n_paths is below the floor " + std::to_string(ess_floor),
                               ess);
}

GirsanovWeights girsanov_weights(const PathEnsemble& ens, const Field& integrand, Component driver,
                                 const WeightOptions& opts)
{
    const std::size_t m = ens.n_steps();
    const std::size_t n = ens.n_paths();
    if (integrand.n_paths() != n || integrand.n_slices() < m)
        throw InvalidArgument("girsanov_weights: integrand shape does not match the ensemble");

    const double half_dt = 0.5 * ens.grid.dt();
    const Field& dw = ens.increments(driver);
    Field lw(m + 1, n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        auto prev = lw.slice(i);
        auto next = lw.slice(i + 1);
        auto lam = integrand.slice(i);
        auto inc = dw.slice(i);
        for (std::size_t p = 0; p < n; ++p)
            next[p] = prev[p] + lam[p] * inc[p] - lam[p] * lam[p] * half_dt;
    }
    GirsanovWeights out(std::move(lw), opts.normalize);
    check_degeneracy(out, opts.ess_floor);
    return out;
}

std::vector<double> terminal_values(const PathEnsemble& ens, const TerminalCondition& tc)
{
    const std::size_t m = ens.n_steps();
    auto w1 = ens.w1_levels.slice(m);
    auto w2 = ens.w2_levels.slice(m);
    std::vector<double> out(ens.n_paths());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = tc(w1[p], w2[p]);
    return out;
}

void save_ensemble(const PathEnsemble& ens, const std::filesystem::path& file)
{
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open " + file.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    write_le<std::uint32_t>(out, kVersion);
    write_le<double>(out, ens.grid.horizon);
    write_le<std::uint64_t>(out, ens.grid.n_steps);
    write_le<std::uint64_t>(out, ens.grid.n_paths);
    write_le<std::uint64_t>(out, ens.grid.seed);
    for (const Field* f : {&ens.w1_increments, &ens.w2_increments})
        for (std::size_t p = 0; p < ens.n_paths(); ++p)
            for (std::size_t i = 0; i < ens.n_steps(); ++i) write_le<double>(out, (*f)(i, p));
    if (!out) throw InvalidArgument("failed writing " + file.string());
}

PathEnsemble load_ensemble(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open " + file.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw InvalidArgument(file.string() + " is not an ensemble dump");
    if (read_le<std::uint32_t>(in) != kVersion)
        throw InvalidArgument(file.string() + ": unsupported ensemble version");

    GridSpec grid;
    grid.horizon = read_le<double>(in);
    grid.n_steps = read_le<std::uint64_t>(in);
    grid.n_paths = read_le<std::uint64_t>(in);
    grid.seed = read_le<std::uint64_t>(in);
    grid.validate();

    Field inc1(grid.n_steps, grid.n_paths);
    Field inc2(grid.n_steps, grid.n_paths);
    for (Field* f : {&inc1, &inc2})
        for (std::size_t p = 0; p < grid.n_paths; ++p)
            for (std::size_t i = 0; i < grid.n_steps; ++i) (*f)(i, p) = read_le<double>(in);
    return assemble_ensemble(grid, std::move(inc1), std::move(inc2));
}

} // namespace qbsde
