#pragma once

#include <stdexcept>
#include <string>

namespace hst {

// Error hierarchy. `kind()` is a stable machine-readable tag; the CLI maps it
// into its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape_error", msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain_error", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config_error", msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract_error", msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index_error", msg) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("parse_error", msg) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error("schema_error", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io_error", msg) {}
};

struct TrainingDiverged : Error {
    explicit TrainingDiverged(const std::string& msg) : Error("training_diverged", msg) {}
};

}  // namespace hst
