#pragma once

#include <stdexcept>
#include <string>

namespace transferi2i {

/// Base class for every error the library raises. `code()` is a stable
/// machine-readable identifier; the CLI prints it on its own line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("E_CONFIG", what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("E_SHAPE", what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error("E_DATA", what) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error("E_NUMERICAL", what) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error("E_USAGE", what) {}
};

/// A stage touched something it promised not to (e.g. a dataset read during a data-free stage).
struct ContractViolation : Error {
    explicit ContractViolation(const std::string& what) : Error("E_CONTRACT", what) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& what) : Error("E_CHECKPOINT", what) {}
};

struct StageTagError : Error {
    explicit StageTagError(const std::string& what) : Error("E_STAGE_TAG", what) {}
};

}  // namespace transferi2i
