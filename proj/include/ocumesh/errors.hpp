#pragma once

#include <stdexcept>
#include <string>

namespace ocumesh {

/// Invalid argument supplied to an operation (bad sizes, names, non-unit vectors).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Similarity estimation failed (size mismatch or degenerate point configuration).
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The left block of a 3x4 matrix is not a positive scaled rotation.
class DecompositionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Eyeball template could not be fitted to the given landmarks.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document. Carries the line (1-based, 0 when not applicable) and field.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& message, std::size_t line = 0, std::string field = {}, std::string source = {})
        : std::runtime_error(format(message, line, field, source)), message_(message), line_(line),
          field_(std::move(field)), source_(std::move(source)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }
    const std::string& source() const noexcept { return source_; }

    /// Same error attributed to a file.
    DataError with_source(const std::string& source) const { return {message_, line_, field_, source}; }

private:
    static std::string format(const std::string& message, std::size_t line, const std::string& field,
                              const std::string& source) {
        std::string out;
        if (!source.empty()) {
            out += source + ": ";
        }
        if (line > 0) {
            out += "line " + std::to_string(line) + ": ";
        }
        if (!field.empty()) {
            out += "field '" + field + "': ";
        }
        return out + message;
    }

    std::string message_;
    std::size_t line_;
    std::string field_;
    std::string source_;
};

/// Training diverged or was misconfigured.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ocumesh
