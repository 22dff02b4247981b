#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "scrop/clock.hpp"

namespace scrop::cloud {

inline constexpr std::size_t kFieldCount = 8;
using FieldValues = std::array<std::optional<double>, kFieldCount>;

// Field layout for node telemetry channels.
inline constexpr std::size_t kFieldSoilMoisture = 0;  // field1, CurrentSM
inline constexpr std::size_t kFieldTemperature = 1;   // field2, CurrentTEMP
inline constexpr std::size_t kFieldHumidity = 2;      // field3
inline constexpr std::size_t kFieldRelay = 3;         // field4, 1 = pump on

// Field layout for "<node>-events" channels.
inline constexpr std::size_t kFieldEventAction = 0;  // field1, 1 = PumpOn, 0 = PumpOff
inline constexpr std::size_t kFieldEventMoisture = 1;  // field2, sm at the event

/// Thrown for unknown channels, crops, nodes or images.
class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TelemetryRecord {
    std::int64_t entry_id = 0;
    SimTime server_time{0};
    FieldValues fields{};
    bool stale_threshold = false;
    std::string status;  // free text; carries DATE_TIME_S for event channels
};

enum class WriteStatus { Accepted, RateLimited, Unauthorized, NotFound };

struct WriteResult {
    WriteStatus status = WriteStatus::NotFound;
    std::optional<std::int64_t> entry_id;
};

struct CropProfile {
    std::string crop_name;
    double threshold_sm = 0.0;
    double release_sm = 0.0;
};

/// Crop catalogue shipped with the service. Values are configuration.
std::vector<CropProfile> default_crop_catalogue();

struct ImageRecord {
    std::int64_t id = 0;
    SimTime timestamp{0};
    std::string node_id;
    std::string bytes;  // PPM/PGM
};

struct PredictionRecord {
    std::int64_t id = 0;
    SimTime timestamp{0};
    std::string node_id;
    std::string label;
    double confidence = 0.0;
    std::int64_t image_id = 0;
    // x, y, width, height in image pixels
    std::optional<std::array<int, 4>> lesion_box;
};

struct CloudOptions {
    std::optional<std::filesystem::path> data_dir;
    SimTime min_write_interval = std::chrono::seconds(15);
    /// Delay before an accepted write shows up in feeds. Zero in live mode.
    SimTime visibility_delay = std::chrono::seconds(15);
    std::vector<CropProfile> crops = default_crop_catalogue();
    std::string default_crop = "default";
};

/// Channel-based telemetry store with crop registry and per-node image and
/// prediction stores. Each resource has its own lock: writes to one channel
/// serialize, reads share. With a data directory every mutation is appended
/// to a JSON-lines log that is replayed on construction.
class TelemetryCloud {
public:
    explicit TelemetryCloud(CloudOptions options = {});
    ~TelemetryCloud();
    TelemetryCloud(const TelemetryCloud&) = delete;
    TelemetryCloud& operator=(const TelemetryCloud&) = delete;

    const CloudOptions& options() const { return options_; }

    /// Idempotent when the key matches; throws std::invalid_argument when a
    /// channel of that id exists with a different key.
    void create_channel(const std::string& channel_id, const std::string& write_key);
    bool has_channel(const std::string& channel_id) const;

    WriteResult channel_write(const std::string& channel_id, const std::string& write_key,
                              const FieldValues& fields, SimTime now, bool stale_threshold = false,
                              std::string status = {});

    /// Last `n` visible records, oldest first. Throws NotFoundError.
    std::vector<TelemetryRecord> channel_feed(const std::string& channel_id, std::size_t n,
                                              SimTime now) const;

    std::uint64_t rate_limited_count(const std::string& channel_id) const;
    std::uint64_t accepted_count(const std::string& channel_id) const;

    std::vector<CropProfile> crops() const;
    /// Throws NotFoundError and leaves the active profile unchanged.
    CropProfile select_crop(const std::string& crop_name);
    CropProfile threshold() const;

    std::int64_t put_image(const std::string& node_id, std::string bytes, SimTime now);
    /// Throws NotFoundError when the node has no image yet.
    ImageRecord get_latest_image(const std::string& node_id) const;
    /// Throws NotFoundError.
    ImageRecord get_image(std::int64_t image_id) const;

    /// The referenced image must exist (std::invalid_argument otherwise);
    /// confidence must lie in [0, 1].
    std::int64_t put_prediction(const std::string& node_id, const std::string& label,
                                double confidence, std::int64_t image_id, SimTime now,
                                std::optional<std::array<int, 4>> lesion_box = std::nullopt);
    PredictionRecord get_latest_prediction(const std::string& node_id) const;

private:
    struct Channel;

    Channel& channel(const std::string& channel_id) const;
    void replay();
    void append_log(const std::string& file, const std::string& line) const;

    CloudOptions options_;

    mutable std::shared_mutex channels_mutex_;
    std::map<std::string, std::unique_ptr<Channel>> channels_;

    mutable std::shared_mutex registry_mutex_;
    std::string active_crop_;

    mutable std::shared_mutex media_mutex_;
    std::vector<ImageRecord> images_;
    std::vector<PredictionRecord> predictions_;

    mutable std::mutex log_mutex_;
};

std::string_view to_string(WriteStatus status);

}  // namespace scrop::cloud
