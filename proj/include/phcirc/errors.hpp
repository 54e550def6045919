#pragma once

#include <stdexcept>
#include <string>

namespace phcirc {

enum class ErrorKind {
    LoopEdge,
    GroundSetViolation,
    NotAForest,
    ShapeMismatch,
    DegenerateSpan,
    LinkMismatch,
    NotDirac,
    NotAGradient,
    NotAccretive,
    BadParams,
    NotLocallyPassive,
    NonInvertibleConstitutive,
    UnsupportedFormulation,
    UnknownComponent,
    SyntaxError,
    DuplicateName,
    UnknownDirective,
    NewtonDivergence,
    SingularJacobian,
    EvaluationFailure,
    IoError
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::LoopEdge: return "LoopEdge";
    case ErrorKind::GroundSetViolation: return "GroundSetViolation";
    case ErrorKind::NotAForest: return "NotAForest";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateSpan: return "DegenerateSpan";
    case ErrorKind::LinkMismatch: return "LinkMismatch";
    case ErrorKind::NotDirac: return "NotDirac";
    case ErrorKind::NotAGradient: return "NotAGradient";
    case ErrorKind::NotAccretive: return "NotAccretive";
    case ErrorKind::BadParams: return "BadParams";
    case ErrorKind::NotLocallyPassive: return "NotLocallyPassive";
    case ErrorKind::NonInvertibleConstitutive: return "NonInvertibleConstitutive";
    case ErrorKind::UnsupportedFormulation: return "UnsupportedFormulation";
    case ErrorKind::UnknownComponent: return "UnknownComponent";
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::DuplicateName: return "DuplicateName";
    case ErrorKind::UnknownDirective: return "UnknownDirective";
    case ErrorKind::NewtonDivergence: return "NewtonDivergence";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::EvaluationFailure: return "EvaluationFailure";
    case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind), detail_(msg) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

// Netlist diagnostics carry a 1-based source position.
class ParseError : public Error {
public:
    ParseError(ErrorKind kind, const std::string& msg, int line, int column = 0)
        : Error(kind, "line " + std::to_string(line) + (column > 0 ? ":" + std::to_string(column) : "") + ": " + msg),
          line_(line), column_(column), message_(msg) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }
    const std::string& message() const noexcept { return message_; }

private:
    int line_;
    int column_;
    std::string message_;
};

// Newton failures keep the last residual norm around for diagnostics.
class SolverError : public Error {
public:
    SolverError(ErrorKind kind, const std::string& msg, double t, double residual_norm)
        : Error(kind, msg), t_(t), residual_norm_(residual_norm) {}

    double time() const noexcept { return t_; }
    double residual_norm() const noexcept { return residual_norm_; }

private:
    double t_;
    double residual_norm_;
};

} // namespace phcirc
