#pragma once

#include <stdexcept>
#include <string>

namespace segsim {

// Exit-code mapping lives in the CLI: ConfigError -> 2, DataError -> 3,
// TrainingDiverged -> 4, VerifyError -> 5.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

struct VerifyError : std::runtime_error {
    explicit VerifyError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace segsim
