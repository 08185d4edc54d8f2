#ifndef PVE_ERRORS_HPP
#define PVE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pve {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad tensor extents or mismatched operand shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Corrupt or truncated on-disk data.
struct FormatError : Error {
    using Error::Error;
};

// Step index outside [0, T] or ordering violations.
struct StepIndexError : Error {
    using Error::Error;
};

// Invalid beta bounds or non-monotone schedule.
struct ScheduleError : Error {
    using Error::Error;
};

// Violated module contract (track/sampler mismatch, empty attention row, ...).
struct ContractError : Error {
    using Error::Error;
};

// Rejected configuration document or CLI arguments.
struct ConfigError : Error {
    using Error::Error;
};

// Failure propagated out of a multi-module pipeline run.
struct PipelineError : Error {
    using Error::Error;
};

// Input exceeds a model capacity bound.
struct CapacityError : Error {
    using Error::Error;
};

// Metric undefined on the given input (e.g. no frame overlaps).
struct MetricError : Error {
    using Error::Error;
};

// Training loss became non-finite.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace pve

#endif
