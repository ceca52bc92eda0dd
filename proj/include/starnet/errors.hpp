#pragma once

#include <stdexcept>
#include <string>

namespace starnet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct RankDeficient : Error {
    using Error::Error;
};

struct InsufficientData : Error {
    using Error::Error;
};

struct NonInvertibleActivation : Error {
    using Error::Error;
};

struct DeterminednessViolation : Error {
    using Error::Error;
};

struct InvalidArgument : Error {
    using Error::Error;
};

// Architecture failed validation; the violation list is printed by the caller.
struct ArchitectureInvalid : Error {
    using Error::Error;
};

struct BadMagic : Error {
    using Error::Error;
};

struct VersionMismatch : Error {
    using Error::Error;
};

struct TruncatedFile : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace starnet
