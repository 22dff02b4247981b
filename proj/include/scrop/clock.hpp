#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace scrop {

/// Simulated time since the start of a run.
using SimTime = std::chrono::milliseconds;

/// Wall-clock anchor that turns simulated offsets into DATE_TIME_S stamps.
struct SimEpoch {
    std::int64_t unix_seconds = 1614556800;  // 2021-03-01T00:00:00Z

    /// "YYYY-MM-DDTHH:MM:SS" (UTC, whole seconds) for `offset`.
    std::string iso8601(SimTime offset) const;
};

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]". Throws std::invalid_argument.
SimEpoch parse_epoch(const std::string& iso);

inline double to_seconds(SimTime t) { return std::chrono::duration<double>(t).count(); }

inline SimTime from_seconds(double s) {
    return std::chrono::duration_cast<SimTime>(std::chrono::duration<double>(s));
}

}  // namespace scrop
