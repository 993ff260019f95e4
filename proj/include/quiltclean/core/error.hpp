#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace quiltclean {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable tag that the CLI maps onto exit codes and reports.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define QUILTCLEAN_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    }

QUILTCLEAN_DEFINE_ERROR(InvalidArgument);
QUILTCLEAN_DEFINE_ERROR(IoError);
QUILTCLEAN_DEFINE_ERROR(DuplicatePathConflict);
QUILTCLEAN_DEFINE_ERROR(UndecodableImage);
QUILTCLEAN_DEFINE_ERROR(UnsupportedCategory);
QUILTCLEAN_DEFINE_ERROR(MixedDimensions);
QUILTCLEAN_DEFINE_ERROR(EmptyBaseSet);
QUILTCLEAN_DEFINE_ERROR(EmptySubset);
QUILTCLEAN_DEFINE_ERROR(UnknownImage);
QUILTCLEAN_DEFINE_ERROR(EmptyLabels);
QUILTCLEAN_DEFINE_ERROR(SplitLeakage);
QUILTCLEAN_DEFINE_ERROR(EmptySet);
QUILTCLEAN_DEFINE_ERROR(NonFiniteLoss);
QUILTCLEAN_DEFINE_ERROR(LengthMismatch);
QUILTCLEAN_DEFINE_ERROR(DimensionMismatch);
QUILTCLEAN_DEFINE_ERROR(NonPSD);
QUILTCLEAN_DEFINE_ERROR(TooFewSamples);
QUILTCLEAN_DEFINE_ERROR(NoSharedConditions);
QUILTCLEAN_DEFINE_ERROR(TooFewPairs);
QUILTCLEAN_DEFINE_ERROR(ScorerFailure);
QUILTCLEAN_DEFINE_ERROR(MissingPrediction);
QUILTCLEAN_DEFINE_ERROR(EmptyField);
QUILTCLEAN_DEFINE_ERROR(AdapterFailure);
QUILTCLEAN_DEFINE_ERROR(ConfigError);

#undef QUILTCLEAN_DEFINE_ERROR

/// Raised in strict mode for a row that cannot be decoded.
class MalformedRow : public Error {
public:
    MalformedRow(std::size_t line_no, const std::string& reason)
        : Error("MalformedRow", "line " + std::to_string(line_no) + ": " + reason),
          line_no_(line_no) {}

    std::size_t line_no() const noexcept { return line_no_; }

private:
    std::size_t line_no_;
};

}  // namespace quiltclean
