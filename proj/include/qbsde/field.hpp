#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace qbsde {

// Dense per-slice, per-path storage. Slices are contiguous so a regression
// at one time index touches a single block of memory.
class Field {
public:
    Field() = default;
    Field(std::size_t n_slices, std::size_t n_paths, double value = 0.0)
        : n_slices_(n_slices), n_paths_(n_paths), data_(n_slices * n_paths, value) {}

    std::size_t n_slices() const { return n_slices_; }
    std::size_t n_paths() const { return n_paths_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t slice, std::size_t path) { return data_[slice * n_paths_ + path]; }
    double operator()(std::size_t slice, std::size_t path) const { return data_[slice * n_paths_ + path]; }

    std::span<double> slice(std::size_t i) { return {data_.data() + i * n_paths_, n_paths_}; }
    std::span<const double> slice(std::size_t i) const { return {data_.data() + i * n_paths_, n_paths_}; }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Field&) const = default;

private:
    std::size_t n_slices_ = 0;
    std::size_t n_paths_ = 0;
    std::vector<double> data_;
};

} // namespace qbsde
