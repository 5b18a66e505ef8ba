#include "graffl/error.hpp"

namespace graffl {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::InvalidHyperparameter: return "InvalidHyperparameter";
        case ErrorCode::InvalidWeights: return "InvalidWeights";
        case ErrorCode::NumericalOverflow: return "NumericalOverflow";
        case ErrorCode::InsufficientProposals: return "InsufficientProposals";
        case ErrorCode::EmptyPosterior: return "EmptyPosterior";
        case ErrorCode::HandshakeMismatch: return "HandshakeMismatch";
        case ErrorCode::TransportClosed: return "TransportClosed";
        case ErrorCode::ReportShapeMismatch: return "ReportShapeMismatch";
        case ErrorCode::ProtocolViolation: return "ProtocolViolation";
        case ErrorCode::SingleClassData: return "SingleClassData";
        case ErrorCode::MinorityTooSmall: return "MinorityTooSmall";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::MissingColumn: return "MissingColumn";
        case ErrorCode::NonBinaryLabel: return "NonBinaryLabel";
        case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace graffl
