#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scrop/clock.hpp"
#include "scrop/sensors.hpp"
#include "scrop/telemetry.hpp"

namespace scrop::irrigation {

inline constexpr double kDefaultReleaseMargin = 5.0;

struct ControllerConfig {
    double threshold_sm = 30.0;
    double release_sm = 30.0 + kDefaultReleaseMargin;
    std::chrono::milliseconds loop_delay{9000};

    static ControllerConfig with_threshold(double threshold_sm) {
        return {threshold_sm, threshold_sm + kDefaultReleaseMargin, std::chrono::milliseconds{9000}};
    }
    /// Throws std::invalid_argument unless release >= threshold and delay > 0.
    void validate() const;
};

enum class PumpAction { PumpOn, PumpOff };

std::string_view to_string(PumpAction action);

struct IrrigationEvent {
    std::string timestamp;  // DATE_TIME_S
    SimTime time{0};
    PumpAction action = PumpAction::PumpOn;
    double sm_at_event = 0.0;
};

struct ControllerState {
    bool relay_on = false;
    std::optional<SimTime> last_event;
};

struct ControlOutcome {
    ControllerState state;
    std::optional<IrrigationEvent> event;
};

/// One sense-compare-actuate decision with the hysteresis band
/// [threshold_sm, release_sm]: switch on at or below threshold, off above
/// release, hold otherwise.
ControlOutcome control_step(double current_sm, const ControllerConfig& cfg,
                            const ControllerState& state, SimTime now,
                            const SimEpoch& epoch = {});

/// What the node reads in one iteration.
struct SensorSample {
    double soil_moisture = 0.0;  // calibration units
    sensors::DhtReading dht;
};

/// Sensor front end of a node. nullopt signals a read fault.
class NodeSensors {
public:
    virtual ~NodeSensors() = default;
    virtual std::optional<SensorSample> sample(SimTime now) = 0;
};

/// The node's view of the telemetry service.
class CloudClient {
public:
    virtual ~CloudClient() = default;
    /// nullopt when the service cannot be reached.
    virtual std::optional<cloud::CropProfile> read_threshold(SimTime now) = 0;
    virtual cloud::WriteStatus push_telemetry(const cloud::FieldValues& fields, bool stale,
                                              SimTime now) = 0;
    virtual cloud::WriteStatus push_event(const IrrigationEvent& event, SimTime now) = 0;
};

/// CloudClient bound to one node's channels in an in-process TelemetryCloud.
class InProcessCloudClient final : public CloudClient {
public:
    InProcessCloudClient(cloud::TelemetryCloud& cloud, std::string telemetry_channel,
                         std::string events_channel, std::string write_key);

    std::optional<cloud::CropProfile> read_threshold(SimTime now) override;
    cloud::WriteStatus push_telemetry(const cloud::FieldValues& fields, bool stale,
                                      SimTime now) override;
    cloud::WriteStatus push_event(const IrrigationEvent& event, SimTime now) override;

    /// Simulates a connectivity gap for threshold reads.
    void set_reachable(bool reachable) { reachable_ = reachable; }

private:
    cloud::TelemetryCloud& cloud_;
    std::string telemetry_channel_;
    std::string events_channel_;
    std::string write_key_;
    bool reachable_ = true;
};

/// Fields written for one loop iteration.
cloud::FieldValues telemetry_fields(const SensorSample& sample, bool relay_on);

/// Outcome of one loop iteration.
struct LoopIteration {
    SimTime time{0};
    std::optional<SensorSample> sample;  // nullopt: sensor fault, iteration skipped
    double threshold_sm = 0.0;
    double release_sm = 0.0;
    bool stale_threshold = false;
    bool relay_on = false;
    std::optional<IrrigationEvent> event;
    cloud::WriteStatus telemetry_status = cloud::WriteStatus::NotFound;
};

/// One node's control loop, driven by a simulated clock. Each iteration reads
/// the sensors, refreshes the threshold from the cloud (falling back to the
/// last value it saw), applies control_step, pushes telemetry and any event,
/// and schedules the next iteration one loop delay later. While the rail is
/// down no iteration runs; state is kept and the loop resumes on power-up.
class IrrigationNode {
public:
    IrrigationNode(std::string node_id, ControllerConfig initial, CloudClient& cloud,
                   SimEpoch epoch = {});

    /// Runs an iteration if one is due at `now` and the rail is on.
    std::optional<LoopIteration> poll(SimTime now, bool rail_on, NodeSensors& sensors);

    /// When disabled the loop still senses and reports but never switches
    /// the relay; set_relay drives it instead.
    void set_automation(bool enabled) { automation_ = enabled; }
    /// Manual relay override for the unautomated arm. Returns the event when
    /// the relay changes state.
    std::optional<IrrigationEvent> set_relay(bool on, double sm, SimTime now);

    const std::string& node_id() const { return node_id_; }
    const ControllerState& state() const { return state_; }
    const ControllerConfig& config() const { return config_; }
    SimTime next_due() const { return next_due_; }

private:
    std::string node_id_;
    ControllerConfig config_;
    CloudClient& cloud_;
    SimEpoch epoch_;
    ControllerState state_;
    SimTime next_due_{0};
    bool automation_ = true;
};

/// Aggregate of a run_loop window.
struct LoopTrace {
    std::vector<LoopIteration> iterations;
    std::vector<IrrigationEvent> events;
    std::size_t fault_count = 0;

    std::size_t record_count() const { return iterations.size() - fault_count; }
};

/// Drives `node` over [start, end) in `tick` steps. `rail_on(t)` reports the
/// power rail at each tick.
template <typename RailFn>
LoopTrace run_loop(IrrigationNode& node, NodeSensors& sensors, RailFn&& rail_on, SimTime start,
                   SimTime end, SimTime tick = std::chrono::seconds(1)) {
    LoopTrace trace;
    for (SimTime t = start; t < end; t += tick) {
        if (auto it = node.poll(t, rail_on(t), sensors)) {
            if (!it->sample) ++trace.fault_count;
            if (it->event) trace.events.push_back(*it->event);
            trace.iterations.push_back(std::move(*it));
        }
    }
    return trace;
}

}  // namespace scrop::irrigation
