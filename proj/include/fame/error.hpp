#pragma once

#include <stdexcept>
#include <string>

namespace fame {

// Error taxonomy used across the library. The CLI maps ConfigError /
// InputError / ParseError to exit code 2 and everything else to 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

struct EvalError : Error {
    explicit EvalError(const std::string& msg) : Error(msg) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace fame
