#include <gtest/gtest.h>

#include "scrop/irrigation.hpp"
#include "scrop/telemetry.hpp"

using namespace scrop;
using namespace scrop::irrigation;
using namespace std::chrono_literals;

namespace {

class FixedSensors : public NodeSensors {
public:
    double sm = 40.0;
    bool faulty = false;
    std::optional<SensorSample> sample(SimTime) override {
        if (faulty) return std::nullopt;
        return SensorSample{sm, {25.0, 60.0}};
    }
};

struct Rig {
    cloud::TelemetryCloud store;
    InProcessCloudClient client{store, "n1", "n1-events", "k"};
    Rig() {
        store.create_channel("n1", "k");
        store.create_channel("n1-events", "k");
    }
};

}  // namespace

TEST(ControlStep, SwitchesOnAtThreshold) {
    const ControllerConfig cfg{30.0, 35.0, 9000ms};
    const auto out = control_step(29.0, cfg, {}, 5s);
    EXPECT_TRUE(out.state.relay_on);
    ASSERT_TRUE(out.event);
    EXPECT_EQ(out.event->action, PumpAction::PumpOn);
    EXPECT_EQ(out.event->sm_at_event, 29.0);
    EXPECT_EQ(out.event->timestamp, "2021-03-01T00:00:05");
    EXPECT_TRUE(control_step(30.0, cfg, {}, 0s).state.relay_on);
}

TEST(ControlStep, SwitchesOffAboveRelease) {
    const ControllerConfig cfg{30.0, 35.0, 9000ms};
    const auto out = control_step(36.0, cfg, {true, std::nullopt}, 0s);
    EXPECT_FALSE(out.state.relay_on);
    ASSERT_TRUE(out.event);
    EXPECT_EQ(out.event->action, PumpAction::PumpOff);
    EXPECT_TRUE(control_step(35.0, cfg, {true, std::nullopt}, 0s).state.relay_on);
}

TEST(ControlStep, HoldsInsideBand) {
    const ControllerConfig cfg{30.0, 35.0, 9000ms};
    for (bool relay : {false, true}) {
        const auto out = control_step(32.0, cfg, {relay, std::nullopt}, 0s);
        EXPECT_EQ(out.state.relay_on, relay);
        EXPECT_FALSE(out.event);
    }
    const auto at_threshold = control_step(30.0, cfg, {true, std::nullopt}, 0s);
    EXPECT_TRUE(at_threshold.state.relay_on);
    EXPECT_FALSE(at_threshold.event);
}

TEST(ControllerConfig, Validation) {
    EXPECT_NO_THROW(ControllerConfig::with_threshold(30.0).validate());
    EXPECT_EQ(ControllerConfig::with_threshold(30.0).release_sm, 35.0);
    EXPECT_THROW((ControllerConfig{40.0, 35.0, 9000ms}).validate(), std::invalid_argument);
    EXPECT_THROW((ControllerConfig{30.0, 35.0, 0ms}).validate(), std::invalid_argument);
}

TEST(RunLoop, OneHourGivesFourHundredIterations) {
    Rig rig;
    FixedSensors sensors;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    const auto trace = run_loop(node, sensors, [](SimTime) { return true; }, 0s, 3600s);
    EXPECT_EQ(trace.record_count(), 400u);
    for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
        EXPECT_GE(trace.iterations[i].time - trace.iterations[i - 1].time, 9000ms);
    }
    // The 15 s channel limit admits every other 9 s write.
    EXPECT_EQ(rig.store.accepted_count("n1"), 200u);
    EXPECT_EQ(rig.store.rate_limited_count("n1"), 200u);
}

TEST(RunLoop, UnpoweredNodeIsSilent) {
    Rig rig;
    FixedSensors sensors;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    const auto trace = run_loop(node, sensors, [](SimTime) { return false; }, 0s, 3600s);
    EXPECT_TRUE(trace.iterations.empty());
    EXPECT_EQ(rig.store.accepted_count("n1"), 0u);
}

TEST(RunLoop, ResumesWithStateAfterOutage) {
    Rig rig;
    FixedSensors sensors;
    sensors.sm = 20.0;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    auto trace = run_loop(node, sensors, [](SimTime t) { return t < 60s || t >= 120s; }, 0s, 180s);
    ASSERT_EQ(trace.events.size(), 1u);
    EXPECT_TRUE(node.state().relay_on);
    for (const auto& it : trace.iterations) EXPECT_FALSE(it.time >= 60s && it.time < 120s);
    EXPECT_EQ(trace.iterations.size(), 7u + 7u);
}

TEST(RunLoop, PicksUpNewThresholdNextIteration) {
    Rig rig;
    FixedSensors sensors;
    sensors.sm = 33.0;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    auto first = run_loop(node, sensors, [](SimTime) { return true; }, 0s, 10s);
    EXPECT_EQ(first.iterations.front().threshold_sm, 30.0);
    EXPECT_FALSE(node.state().relay_on);
    rig.store.select_crop("tomato");
    auto second = run_loop(node, sensors, [](SimTime) { return true; }, 10s, 20s);
    ASSERT_EQ(second.iterations.size(), 1u);
    EXPECT_EQ(second.iterations.front().threshold_sm, 34.0);
    EXPECT_TRUE(node.state().relay_on);
    EXPECT_LE(second.iterations.front().time - 10s, 9000ms);
}

TEST(RunLoop, CloudOutageUsesCachedThresholdAndFlagsStale) {
    Rig rig;
    FixedSensors sensors;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    run_loop(node, sensors, [](SimTime) { return true; }, 0s, 10s);
    rig.store.select_crop("rice");
    run_loop(node, sensors, [](SimTime) { return true; }, 10s, 20s);
    rig.client.set_reachable(false);
    rig.store.select_crop("wheat");
    auto trace = run_loop(node, sensors, [](SimTime) { return true; }, 20s, 40s);
    ASSERT_FALSE(trace.iterations.empty());
    for (const auto& it : trace.iterations) {
        EXPECT_TRUE(it.stale_threshold);
        EXPECT_EQ(it.threshold_sm, 45.0);
    }
    const auto feed = rig.store.channel_feed("n1", 10, 1000s);
    EXPECT_TRUE(feed.back().stale_threshold);
}

TEST(RunLoop, SensorFaultSkipsIteration) {
    Rig rig;
    FixedSensors sensors;
    sensors.sm = 10.0;
    sensors.faulty = true;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    auto trace = run_loop(node, sensors, [](SimTime) { return true; }, 0s, 60s);
    EXPECT_EQ(trace.fault_count, trace.iterations.size());
    EXPECT_EQ(trace.record_count(), 0u);
    EXPECT_TRUE(trace.events.empty());
    EXPECT_FALSE(node.state().relay_on);
    EXPECT_EQ(rig.store.accepted_count("n1"), 0u);
}

TEST(RunLoop, EventsAlternateAndReachEventsChannel) {
    Rig rig;
    FixedSensors sensors;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    std::vector<IrrigationEvent> events;
    for (int step = 0; step < 400; ++step) {
        const SimTime t = std::chrono::seconds(step * 9);
        sensors.sm = (step / 20) % 2 == 0 ? 25.0 : 55.0;
        if (auto it = node.poll(t, true, sensors); it && it->event) events.push_back(*it->event);
    }
    ASSERT_GE(events.size(), 4u);
    for (std::size_t i = 0; i < events.size(); ++i) {
        EXPECT_EQ(events[i].action, i % 2 == 0 ? PumpAction::PumpOn : PumpAction::PumpOff);
    }
    const auto feed = rig.store.channel_feed("n1-events", 100, 100000s);
    ASSERT_EQ(feed.size(), events.size());
    EXPECT_EQ(feed.front().fields[cloud::kFieldEventAction], 1.0);
    EXPECT_EQ(feed.front().status, events.front().timestamp);
}

TEST(ManualRelay, EmitsEventsOnlyOnChange) {
    Rig rig;
    IrrigationNode node("n1", ControllerConfig::with_threshold(30.0), rig.client);
    node.set_automation(false);
    EXPECT_TRUE(node.set_relay(true, 33.0, 0s));
    EXPECT_FALSE(node.set_relay(true, 33.0, 1s));
    const auto off = node.set_relay(false, 50.0, 2s);
    ASSERT_TRUE(off);
    EXPECT_EQ(off->action, PumpAction::PumpOff);

    FixedSensors sensors;
    sensors.sm = 5.0;
    const auto it = node.poll(3s, true, sensors);
    ASSERT_TRUE(it);
    EXPECT_FALSE(it->event);
    EXPECT_FALSE(node.state().relay_on);
}

TEST(TelemetryFields, Layout) {
    const auto f = telemetry_fields({31.5, {24.0, 55.0}}, true);
    EXPECT_EQ(f[cloud::kFieldSoilMoisture], 31.5);
    EXPECT_EQ(f[cloud::kFieldTemperature], 24.0);
    EXPECT_EQ(f[cloud::kFieldHumidity], 55.0);
    EXPECT_EQ(f[cloud::kFieldRelay], 1.0);
}
