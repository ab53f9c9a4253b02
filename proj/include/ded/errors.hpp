#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ded {

/// Base of every error thrown by the library.
///
/// Errors split into two families. Validation errors mean the caller handed
/// in something that violates a documented invariant (bad MDP, mismatched
/// shapes, malformed file); runtime errors mean a computation could not
/// finish (no convergence, divergence, sampling budget exhausted). The CLI
/// maps them to exit codes 2 and 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual const char* name() const noexcept = 0;
    [[nodiscard]] virtual bool is_validation() const noexcept = 0;
};

#define DED_DEFINE_ERROR(Name, Validation)                                      \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {}   \
        [[nodiscard]] const char* name() const noexcept override { return #Name; } \
        [[nodiscard]] bool is_validation() const noexcept override { return Validation; } \
    }

DED_DEFINE_ERROR(InvalidMDP, true);
DED_DEFINE_ERROR(NonTerminatingRegion, true);
DED_DEFINE_ERROR(StaleInputs, true);
DED_DEFINE_ERROR(InvalidLayout, true);
DED_DEFINE_ERROR(DimensionMismatch, true);
DED_DEFINE_ERROR(ShapeMismatch, true);
DED_DEFINE_ERROR(EmptyCohort, true);
DED_DEFINE_ERROR(NonTabularData, true);
DED_DEFINE_ERROR(EmptyRow, true);
DED_DEFINE_ERROR(OutOfRange, true);
DED_DEFINE_ERROR(BadIndex, true);
DED_DEFINE_ERROR(Unterminated, true);
DED_DEFINE_ERROR(ConfigError, true);
DED_DEFINE_ERROR(InvalidSpec, true);

DED_DEFINE_ERROR(NoConvergence, false);
DED_DEFINE_ERROR(GenerationFailed, false);
DED_DEFINE_ERROR(YieldTooLow, false);
DED_DEFINE_ERROR(EmptyBuffer, false);
DED_DEFINE_ERROR(Diverged, false);
DED_DEFINE_ERROR(DeadEndState, false);
DED_DEFINE_ERROR(NoEligibleTrajectories, false);
DED_DEFINE_ERROR(IoError, false);

#undef DED_DEFINE_ERROR

/// Malformed input file; carries the 1-based line number of the offending record.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("ParseError(line=" + std::to_string(line) + "): " + what), line_(line) {}
    [[nodiscard]] const char* name() const noexcept override { return "ParseError"; }
    [[nodiscard]] bool is_validation() const noexcept override { return true; }
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace ded
