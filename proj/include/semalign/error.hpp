#pragma once

#include <stdexcept>
#include <string>

namespace semalign {

/// Base for every error the toolkit raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / input files. Maps to CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage failed while running. Maps to CLI exit code 3.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace semalign
