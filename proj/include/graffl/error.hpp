#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace graffl {

enum class ErrorCode {
    DimensionMismatch,
    NotPositiveDefinite,
    InvalidHyperparameter,
    InvalidWeights,
    NumericalOverflow,
    InsufficientProposals,
    EmptyPosterior,
    HandshakeMismatch,
    TransportClosed,
    ReportShapeMismatch,
    ProtocolViolation,
    SingleClassData,
    MinorityTooSmall,
    ParseError,
    MissingColumn,
    NonBinaryLabel,
    NonFiniteFeature,
    ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace graffl
