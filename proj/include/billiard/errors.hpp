#pragma once

#include <stdexcept>
#include <string>

namespace billiard {

/// Base class for all domain errors thrown by this library.
class BilliardError : public std::runtime_error {
public:
    explicit BilliardError(const std::string& what) : std::runtime_error(what) {}
};

/// Two scatterers (or a scatterer and one of its lattice translates) intersect or touch.
class OverlapError : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// A sampled free flight exceeded the configured horizon bound.
class HorizonViolation : public BilliardError {
public:
    HorizonViolation(const std::string& what, double start_r, double direction_phi)
        : BilliardError(what), start_r(start_r), direction_phi(direction_phi) {}
    double start_r;
    double direction_phi;
};

/// No forward intersection with any scatterer within the search bound.
class NoCollision : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// Phase point at (or numerically indistinguishable from) a grazing collision.
class SingularInput : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// An operation precondition was violated by the caller.
class PreconditionError : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// Requested hole interval crosses a scatterer junction.
class HoleSpansScatterers : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// Every particle of an ensemble has been absorbed.
class Extinction : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// Trailing-window stationarity test failed while estimating a conditional mean.
class NonStationary : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// A leaky standard-family evolution lost all of its mass.
class MassExtinct : public BilliardError {
public:
    using BilliardError::BilliardError;
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public BilliardError {
public:
    using BilliardError::BilliardError;
};

} // namespace billiard
