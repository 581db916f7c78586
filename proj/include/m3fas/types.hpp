#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace m3fas {

// Error taxonomy. The CLI maps these onto process exit codes:
//   InvalidInputError   -> 2
//   MissingModalityError-> 3
//   NumericFailureError -> 4
// Everything here derives from std::runtime_error so library users can catch
// broadly or precisely.
struct InvalidInputError : std::runtime_error {
    explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : InvalidInputError {
    explicit IoError(const std::string& msg) : InvalidInputError(msg) {}
};

struct MissingModalityError : std::runtime_error {
    explicit MissingModalityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericFailureError : std::runtime_error {
    explicit NumericFailureError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a processing stage cannot find a usable signal (no correlation
// peak, no valid search window). Callers may fall back to another route.
struct PreprocessError : InvalidInputError {
    explicit PreprocessError(const std::string& msg) : InvalidInputError(msg) {}
};

// A mono discrete-time signal. `samples` are real amplitudes, `sample_rate`
// in Hz. Most functions in the toolkit pass these by const reference and
// return new ones; nothing mutates a waveform in place.
struct Waveform {
    Eigen::ArrayXd samples;
    double sample_rate = 44100.0;

    Eigen::Index size() const { return samples.size(); }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInputError(msg);
}

}  // namespace m3fas
