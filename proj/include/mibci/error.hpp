#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mibci {

/// Category of a typed failure. The CLI reports the name in its error JSON.
enum class ErrorKind {
    Argument,
    Shape,
    NumericDomain,
    Convergence,
    DegenerateInput,
    NoReference,
    ConstraintInfeasible,
    UndefinedAuc,
    UndefinedTest,
    Protocol,
    ClassStarvation,
    EmptySession,
    Io,
    Version,
    Format,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::NumericDomain: return "numeric_domain";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::DegenerateInput: return "degenerate_input";
    case ErrorKind::NoReference: return "no_reference";
    case ErrorKind::ConstraintInfeasible: return "constraint_infeasible";
    case ErrorKind::UndefinedAuc: return "undefined_auc";
    case ErrorKind::UndefinedTest: return "undefined_test";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::ClassStarvation: return "class_starvation";
    case ErrorKind::EmptySession: return "empty_session";
    case ErrorKind::Io: return "io";
    case ErrorKind::Version: return "version";
    case ErrorKind::Format: return "format";
    }
    return "unknown";
}

} // namespace mibci
