#pragma once

#include <stdexcept>
#include <string>

namespace vesselseg {

/// Bad argument to a library operation (non-positive spacing, shape mismatch, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A spec object (phantom, network, config) violates its invariants.
class InvalidSpec : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Operation needs foreground voxels but the mask has none.
class EmptyMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A patient (or one of its augmented derivatives) would land in two cohorts.
class LeakageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error raised inside a named pipeline/CLI stage; what() is prefixed "[stage] ".
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message)
        : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace vesselseg
