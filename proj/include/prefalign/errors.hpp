#pragma once

#include <stdexcept>
#include <string>

namespace prefalign {

// Exit codes used by the CLI; library errors map onto these.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    invalid_config = 2,
    dependency_missing = 3,
    numeric_failure = 4,
    unsupported_scale = 5,
};

class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

class NumericFailure : public std::runtime_error {
public:
    explicit NumericFailure(const std::string& what) : std::runtime_error(what) {}
};

// KL divergence requested where q has a zero on the support of p.
class DivergenceInfinite : public NumericFailure {
public:
    explicit DivergenceInfinite(const std::string& what) : NumericFailure(what) {}
};

class UnsupportedScale : public std::runtime_error {
public:
    explicit UnsupportedScale(const std::string& what) : std::runtime_error(what) {}
};

class UnsupportedOperation : public std::logic_error {
public:
    explicit UnsupportedOperation(const std::string& what) : std::logic_error(what) {}
};

class DependencyMissing : public std::runtime_error {
public:
    explicit DependencyMissing(const std::string& what) : std::runtime_error(what) {}
};

// Sampling retry budgets exhausted (e.g. degenerate proposal policy).
class GenerationFailure : public std::runtime_error {
public:
    explicit GenerationFailure(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace prefalign
