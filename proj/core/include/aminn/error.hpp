#pragma once

#include <stdexcept>
#include <string>

namespace aminn {

// Bad input: malformed files, invalid configuration, violated preconditions
// on user-supplied data. The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure during fitting (non-finite loss, divergence, singular
// information matrix). The CLI maps these to exit code 1.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Monotone partial likelihood: some coefficient ran past the divergence guard.
class SeparationError : public NumericError {
public:
    explicit SeparationError(const std::string& what) : NumericError(what) {}
};

// Covariate matrix lacks full column rank.
class RankDeficiencyError : public InputError {
public:
    explicit RankDeficiencyError(const std::string& what) : InputError(what) {}
};

}  // namespace aminn
