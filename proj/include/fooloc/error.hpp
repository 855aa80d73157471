#pragma once

#include <stdexcept>
#include <string>

namespace fooloc {

/// Raised when a caller violates an operation's documented precondition.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation graph is malformed (shape mismatch, bad wiring).
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for unreadable or inconsistent files and configs.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw ContractError(message);
    }
}

} // namespace fooloc
