#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bifree {

enum class ErrorKind {
    OrderOverflow,
    MomentUndefined,
    InversionFailed,
    DomainEscape,
    ConvolutionFailed,
    SubordinationFailed,
    InversionMassError,
    NegativityError,
    STransformUndefined,
    PoleProximity,
    SeriesDomainError,
    DegenerateCorrelation,
    TimeOrderViolation,
    SOpSingularity,
    NotCentred,
    InvalidInput,
};

constexpr std::string_view error_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::OrderOverflow: return "order overflow";
    case ErrorKind::MomentUndefined: return "moment undefined";
    case ErrorKind::InversionFailed: return "inversion failed";
    case ErrorKind::DomainEscape: return "domain escape";
    case ErrorKind::ConvolutionFailed: return "convolution failed";
    case ErrorKind::SubordinationFailed: return "subordination failed";
    case ErrorKind::InversionMassError: return "inversion mass error";
    case ErrorKind::NegativityError: return "negativity error";
    case ErrorKind::STransformUndefined: return "S-transform undefined";
    case ErrorKind::PoleProximity: return "pole proximity";
    case ErrorKind::SeriesDomainError: return "series domain error";
    case ErrorKind::DegenerateCorrelation: return "degenerate correlation";
    case ErrorKind::TimeOrderViolation: return "time order violation";
    case ErrorKind::SOpSingularity: return "S-op singularity";
    case ErrorKind::NotCentred: return "not centred";
    case ErrorKind::InvalidInput: return "invalid input";
    }
    return "unknown";
}

// Input problems map to exit code 1, numeric failures to 2.
constexpr bool is_input_error(ErrorKind k) {
    return k == ErrorKind::InvalidInput || k == ErrorKind::OrderOverflow ||
           k == ErrorKind::MomentUndefined || k == ErrorKind::DegenerateCorrelation ||
           k == ErrorKind::TimeOrderViolation || k == ErrorKind::NotCentred ||
           k == ErrorKind::STransformUndefined;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? std::string(error_name(kind))
                                            : std::string(error_name(kind)) + ": " + detail),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::string_view name() const noexcept { return error_name(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& detail = {}) {
    throw Error(kind, detail);
}

} // namespace bifree
