#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace drivenet {

enum class ErrorKind {
    MalformedLine,
    RangeViolation,
    UnrecognizedFolder,
    IoFailure,
    EmptyDataset,
    LayoutMismatch,
    TooFewWindows,
    MissingDriver,
    SingleClass,
    ShapeMismatch,
    DegenerateBatch,
    TraceMismatch,
    DomainError,
    EmptySplit,
    NonFiniteLoss,
    EmptyEvaluation,
    LengthMismatch,
    InvalidArgument,
    ConfigError,
    CheckpointError,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::RangeViolation: return "RangeViolation";
    case ErrorKind::UnrecognizedFolder: return "UnrecognizedFolder";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::TooFewWindows: return "TooFewWindows";
    case ErrorKind::MissingDriver: return "MissingDriver";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::TraceMismatch: return "TraceMismatch";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::CheckpointError: return "CheckpointError";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an Error carrying its kind.
/// The pipeline runner prefixes the stage name so grid rows say where a
/// cell died.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Error re-thrown by the experiment pipeline with the failing stage attached.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause)
        : Error(cause.kind(), "[" + stage + "] " + cause.what()), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

} // namespace drivenet
