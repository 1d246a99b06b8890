#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace homoscale {

/// Base of every error raised by the library. `kind()` is the short
/// machine-readable name used in reports and exit diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& detail)
        : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}
    [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define HOMOSCALE_ERROR(Name)                                                  \
    struct Name : Error {                                                      \
        explicit Name(const std::string& detail) : Error(#Name, detail) {}     \
    }

HOMOSCALE_ERROR(InvalidArgument);
HOMOSCALE_ERROR(NonZeroMean);
HOMOSCALE_ERROR(NonIntegrable);
HOMOSCALE_ERROR(NotCentered);
HOMOSCALE_ERROR(Incompatible);
HOMOSCALE_ERROR(CascadeDepthExceeded);
HOMOSCALE_ERROR(DepthInsufficient);
HOMOSCALE_ERROR(ScheduleCycle);
HOMOSCALE_ERROR(WindowTooSmall);
HOMOSCALE_ERROR(DerivativeOrderExceeded);
HOMOSCALE_ERROR(NoDecay);
HOMOSCALE_ERROR(ResolutionViolation);
HOMOSCALE_ERROR(PathTooShort);
HOMOSCALE_ERROR(Unaffordable);
HOMOSCALE_ERROR(UnsupportedAlpha);
HOMOSCALE_ERROR(MissingIngredient);
HOMOSCALE_ERROR(GridMismatch);
HOMOSCALE_ERROR(ConfigError);

#undef HOMOSCALE_ERROR

}  // namespace homoscale
