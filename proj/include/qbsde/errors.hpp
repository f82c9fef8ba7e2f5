#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qbsde {

// Base of every failure the library reports. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class UnboundedGenerator : public Error {
public:
    using Error::Error;
};

class DegenerateBounds : public Error {
public:
    using Error::Error;
};

class ResourceLimit : public Error {
public:
    using Error::Error;
};

class WeightDegeneracy : public Error {
public:
    WeightDegeneracy(const std::string& what, double ess_fraction)
        : Error(what), ess_fraction_(ess_fraction) {}
    double ess_fraction() const { return ess_fraction_; }

private:
    double ess_fraction_;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

class GeneratorEvaluationError : public Error {
public:
    using Error::Error;
};

class SmallnessViolated : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    NoConvergence(const std::string& what, std::size_t iterations, double last_distance)
        : Error(what), iterations_(iterations), last_distance_(last_distance) {}
    std::size_t iterations() const { return iterations_; }
    double last_distance() const { return last_distance_; }

private:
    std::size_t iterations_;
    double last_distance_;
};

class SplittingCapExceeded : public Error {
public:
    using Error::Error;
};

class DominanceViolated : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace qbsde
