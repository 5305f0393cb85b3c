#ifndef HEGEMONY_ERRORS_HPP
#define HEGEMONY_ERRORS_HPP

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hegemony {

enum class ErrorKind {
    NotInvertible,
    Timeout,
    MessageOutOfRange,
    InvalidCiphertext,
    KeyMismatch,
    IncompleteShareSet,
    CombineFailed,
    WeightOutOfRange,
    OverflowDetected,
    TooManyValues,
    BudgetExhausted,
    DeferredScalePresent,
    LayoutMismatch,
    GeometryMismatch,
    UnsupportedDegree,
    ScaleOverflow,
    ScaleMismatch,
    FormatError,
    ProtocolError,
    RoundAbort,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotInvertible: return "NotInvertible";
        case ErrorKind::Timeout: return "Timeout";
        case ErrorKind::MessageOutOfRange: return "MessageOutOfRange";
        case ErrorKind::InvalidCiphertext: return "InvalidCiphertext";
        case ErrorKind::KeyMismatch: return "KeyMismatch";
        case ErrorKind::IncompleteShareSet: return "IncompleteShareSet";
        case ErrorKind::CombineFailed: return "CombineFailed";
        case ErrorKind::WeightOutOfRange: return "WeightOutOfRange";
        case ErrorKind::OverflowDetected: return "OverflowDetected";
        case ErrorKind::TooManyValues: return "TooManyValues";
        case ErrorKind::BudgetExhausted: return "BudgetExhausted";
        case ErrorKind::DeferredScalePresent: return "DeferredScalePresent";
        case ErrorKind::LayoutMismatch: return "LayoutMismatch";
        case ErrorKind::GeometryMismatch: return "GeometryMismatch";
        case ErrorKind::UnsupportedDegree: return "UnsupportedDegree";
        case ErrorKind::ScaleOverflow: return "ScaleOverflow";
        case ErrorKind::ScaleMismatch: return "ScaleMismatch";
        case ErrorKind::FormatError: return "FormatError";
        case ErrorKind::ProtocolError: return "ProtocolError";
        case ErrorKind::RoundAbort: return "RoundAbort";
    }
    return "Unknown";
}

/// Every failure raised by the library. `index` carries the offending
/// element where one exists (weight index for WeightOutOfRange, layer index
/// for BudgetExhausted raised from model inference).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what, std::optional<std::size_t> index = std::nullopt)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), index_(index) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> index() const noexcept { return index_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> index_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what,
                              std::optional<std::size_t> index = std::nullopt) {
    throw Error(kind, what, index);
}

}  // namespace hegemony

#endif  // HEGEMONY_ERRORS_HPP
