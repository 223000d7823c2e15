#pragma once

#include <stdexcept>
#include <string>

namespace cim {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / axis mismatches between tensors.
struct DimError : Error {
    explicit DimError(const std::string& msg) : Error(msg) {}
};

// Violated operation precondition (non-scalar loss, non-positive dt, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Bad model configuration (unknown key, impossible grid split, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem problems: unwritable output, unreadable input.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Checkpoint container problems: bad magic, wrong version, truncation.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Checkpoint tensors disagree with the config they claim to belong to.
struct ShapeMismatchError : Error {
    explicit ShapeMismatchError(const std::string& msg) : Error(msg) {}
};

// A tensor went NaN/Inf during training; carries the tensor's name.
struct NonFiniteError : Error {
    std::string tensor_name;
    explicit NonFiniteError(const std::string& name)
        : Error("non-finite values in tensor '" + name + "'"), tensor_name(name) {}
};

}  // namespace cim
