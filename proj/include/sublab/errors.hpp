#pragma once

#include <stdexcept>
#include <string>

namespace sublab {

/// Base class for all failures raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid sizes, unsupported orders, out-of-range parameters.
struct InvalidArgument : Error {
    using Error::Error;
};

/// Elliptic solve requested with boundary conditions that do not determine
/// a solution (e.g. alpha = 0 with decay conditions on the half-line).
struct IllPosed : Error {
    using Error::Error;
};

struct InvalidWavenumber : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};

/// Profile has no Euler-unstable mode over the scanned wavenumbers.
struct NoUnstableMode : Error {
    using Error::Error;
};

/// nu^N e^{Re lambda t} grew past the amplitude guard.
struct AmplitudeOverflow : Error {
    using Error::Error;
};

struct CflViolation : Error {
    using Error::Error;
};

/// Two fields (or a field and a profile) live on incompatible grids.
struct GridMismatch : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};

/// Sublayer grid has too few nodes below nu^{1/4}.
struct SublayerUnresolved : Error {
    using Error::Error;
};

/// Lagged corrector coupling blew up.
struct CorrectorDiverged : Error {
    using Error::Error;
};

/// DNS vorticity passed the blow-up guard.
struct BlowUp : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace sublab
