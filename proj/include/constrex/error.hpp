#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace constrex {

enum class ErrorCode {
    DimensionMismatch,
    InvalidInput,
    RankDeficient,
    QNotLessThanP,
    NotPositiveDefinite,
    SingularGram,
    NTooSmall,
    TooLarge,
    InvalidBounds,
    NegativeVariance,
    NoRoot,
    RatioOutOfRange,
    LevelOutOfRange,
    ConfigInvalid,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::QNotLessThanP: return "QNotLessThanP";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::SingularGram: return "SingularGram";
        case ErrorCode::NTooSmall: return "NTooSmall";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::InvalidBounds: return "InvalidBounds";
        case ErrorCode::NegativeVariance: return "NegativeVariance";
        case ErrorCode::NoRoot: return "NoRoot";
        case ErrorCode::RatioOutOfRange: return "RatioOutOfRange";
        case ErrorCode::LevelOutOfRange: return "LevelOutOfRange";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    }
    return "Unknown";
}

/// Numerical failures (as opposed to malformed input) are the ones a caller
/// may reasonably retry on a fresh draw.
constexpr bool is_numerical(ErrorCode code) {
    switch (code) {
        case ErrorCode::RankDeficient:
        case ErrorCode::NotPositiveDefinite:
        case ErrorCode::SingularGram:
        case ErrorCode::NoRoot:
        case ErrorCode::TooLarge:
            return true;
        default:
            return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace constrex
