#include "scrop/irrigation.hpp"

#include <stdexcept>

namespace scrop::irrigation {

void ControllerConfig::validate() const {
    if (!(release_sm >= threshold_sm)) {
        throw std::invalid_argument("release_sm must not be below threshold_sm");
    }
    if (loop_delay.count() <= 0) throw std::invalid_argument("loop delay must be positive");
}

std::string_view to_string(PumpAction action) {
    return action == PumpAction::PumpOn ? "PumpOn" : "PumpOff";
}

ControlOutcome control_step(double current_sm, const ControllerConfig& cfg,
                            const ControllerState& state, SimTime now, const SimEpoch& epoch) {
    ControlOutcome out{state, std::nullopt};
    std::optional<PumpAction> action;
    if (!state.relay_on && current_sm <= cfg.threshold_sm) {
        action = PumpAction::PumpOn;
    } else if (state.relay_on && current_sm > cfg.release_sm) {
        action = PumpAction::PumpOff;
    }
    if (action) {
        out.state.relay_on = *action == PumpAction::PumpOn;
        out.state.last_event = now;
        out.event = IrrigationEvent{epoch.iso8601(now), now, *action, current_sm};
    }
    return out;
}

InProcessCloudClient::InProcessCloudClient(cloud::TelemetryCloud& cloud,
                                           std::string telemetry_channel,
                                           std::string events_channel, std::string write_key)
    : cloud_(cloud),
      telemetry_channel_(std::move(telemetry_channel)),
      events_channel_(std::move(events_channel)),
      write_key_(std::move(write_key)) {}

std::optional<cloud::CropProfile> InProcessCloudClient::read_threshold(SimTime) {
    if (!reachable_) return std::nullopt;
    return cloud_.threshold();
}

cloud::WriteStatus InProcessCloudClient::push_telemetry(const cloud::FieldValues& fields,
                                                        bool stale, SimTime now) {
    return cloud_.channel_write(telemetry_channel_, write_key_, fields, now, stale).status;
}

cloud::WriteStatus InProcessCloudClient::push_event(const IrrigationEvent& event, SimTime now) {
    cloud::FieldValues fields{};
    fields[cloud::kFieldEventAction] = event.action == PumpAction::PumpOn ? 1.0 : 0.0;
    fields[cloud::kFieldEventMoisture] = event.sm_at_event;
    return cloud_.channel_write(events_channel_, write_key_, fields, now, false, event.timestamp)
        .status;
}

cloud::FieldValues telemetry_fields(const SensorSample& sample, bool relay_on) {
    cloud::FieldValues fields{};
    fields[cloud::kFieldSoilMoisture] = sample.soil_moisture;
    fields[cloud::kFieldTemperature] = sample.dht.temperature_c;
    fields[cloud::kFieldHumidity] = sample.dht.humidity_pct;
    fields[cloud::kFieldRelay] = relay_on ? 1.0 : 0.0;
    return fields;
}

IrrigationNode::IrrigationNode(std::string node_id, ControllerConfig initial, CloudClient& cloud,
                               SimEpoch epoch)
    : node_id_(std::move(node_id)), config_(initial), cloud_(cloud), epoch_(epoch) {
    config_.validate();
}

std::optional<LoopIteration> IrrigationNode::poll(SimTime now, bool rail_on,
                                                  NodeSensors& sensors) {
    if (!rail_on || now < next_due_) return std::nullopt;
    next_due_ = now + config_.loop_delay;

    LoopIteration it;
    it.time = now;
    it.sample = sensors.sample(now);
    if (!it.sample) {
        it.threshold_sm = config_.threshold_sm;
        it.release_sm = config_.release_sm;
        it.relay_on = state_.relay_on;
        return it;
    }

    if (auto profile = cloud_.read_threshold(now)) {
        config_.threshold_sm = profile->threshold_sm;
        config_.release_sm = profile->release_sm;
    } else {
        it.stale_threshold = true;
    }
    it.threshold_sm = config_.threshold_sm;
    it.release_sm = config_.release_sm;

    if (automation_) {
        auto outcome = control_step(it.sample->soil_moisture, config_, state_, now, epoch_);
        state_ = outcome.state;
        it.event = std::move(outcome.event);
    }
    it.relay_on = state_.relay_on;
    it.telemetry_status =
        cloud_.push_telemetry(telemetry_fields(*it.sample, state_.relay_on), it.stale_threshold, now);
    if (it.event) cloud_.push_event(*it.event, now);
    return it;
}

std::optional<IrrigationEvent> IrrigationNode::set_relay(bool on, double sm, SimTime now) {
    if (state_.relay_on == on) return std::nullopt;
    state_.relay_on = on;
    state_.last_event = now;
    IrrigationEvent event{epoch_.iso8601(now), now, on ? PumpAction::PumpOn : PumpAction::PumpOff,
                          sm};
    cloud_.push_event(event, now);
    return event;
}

}  // namespace scrop::irrigation
