#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scrop/clock.hpp"
#include "scrop/irrigation.hpp"
#include "scrop/leaf_image.hpp"
#include "scrop/power.hpp"
#include "scrop/sensors.hpp"

namespace scrop::sim {

struct WeatherSegment {
    double start_hour = 0.0;
    double end_hour = 0.0;
    power::WeatherCondition condition = power::WeatherCondition::ShadyDark;
};

struct HourWindow {
    double start_hour = 0.0;
    double end_hour = 0.0;

    bool contains(double hour) const { return hour >= start_hour && hour < end_hour; }
};

struct IrrigationSlot {
    double start_hour = 0.0;
    double minutes = 45.0;
};

struct NodePlacement {
    std::string id = "node-1";
    double x_m = 25.0;
    double y_m = 25.0;
    std::optional<double> initial_moisture;
};

/// Air conditions per sky condition, indexed by WeatherCondition.
struct Climate {
    std::array<double, 4> temperature_c{32.0, 28.0, 25.0, 20.0};
    std::array<double, 4> humidity_pct{45.0, 55.0, 70.0, 80.0};
};

struct PowerConfig {
    power::SolarPanelModel panel;
    double battery_capacity_mah = 7000.0;
    double initial_charge = 0.5;
    double load_current_ma = 80.0;
};

/// Periodic leaf capture and, with weights, disease prediction.
struct ImagingConfig {
    bool enabled = false;
    double period_hours = 24.0;
    double offset_hours = 6.0;
    sensors::SceneLabel scene;
    std::optional<std::string> weights_path;
};

struct ScenarioConfig {
    double duration_hours = 24.0;
    double tick_seconds = 1.0;
    std::string start_time = "2021-03-01T00:00:00";
    std::vector<WeatherSegment> weather;
    double field_width_m = 50.0;
    double field_height_m = 50.0;
    std::string crop = "default";
    std::vector<NodePlacement> nodes{NodePlacement{}};
    double initial_moisture = 38.0;
    sensors::SoilDynamics soil;
    Climate climate;
    PowerConfig power;
    bool automation_enabled = true;
    double loop_delay_ms = 9000.0;
    std::vector<IrrigationSlot> baseline_schedule{{5.0, 45.0}, {7.0, 45.0}};
    std::vector<HourWindow> sensor_faults;
    std::vector<HourWindow> cloud_outages;
    ImagingConfig imaging;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument describing the first violated rule.
    void validate() const;
    std::size_t tick_count() const;
    power::WeatherCondition weather_at(double hour) const;
};

/// The three daylight regimes of a field day plus darkness:
/// 00-05 dark, 05-07 overcast, 07-11 moderate sun, 11-15 full sun,
/// 15-17 overcast, 17-18:30 moderate sun, 18:30-24 dark.
std::vector<WeatherSegment> default_day_weather();
ScenarioConfig default_day_scenario();

/// Parses the JSON scenario schema; absent keys keep their defaults.
ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario(const std::filesystem::path& path);

struct TickSample {
    std::int64_t tick = 0;
    double time_s = 0.0;
    power::WeatherCondition condition = power::WeatherCondition::ShadyDark;
    double panel_v = 0.0;
    power::PowerSource source = power::PowerSource::None;
    double charge_fraction = 0.0;
    bool rail_on = false;
    bool relay_on = false;
    double true_moisture = 0.0;
    double measured_smps = 0.0;
    double temperature_c = 0.0;
    double humidity_pct = 0.0;
};

struct TelemetryStats {
    std::uint64_t loop_iterations = 0;
    std::uint64_t accepted = 0;
    std::uint64_t rate_limited = 0;
    std::uint64_t stale_records = 0;
    std::uint64_t sensor_faults = 0;
    std::uint64_t events_accepted = 0;
    double min_accepted_spacing_s = 0.0;  // 0 when fewer than two writes
    double max_visibility_latency_s = 0.0;
    std::uint64_t unobserved_records = 0;
};

struct PowerAudit {
    std::uint64_t charge_gate_violations = 0;   // charge rose with panel < 12.9 V
    std::uint64_t reverse_flow_violations = 0;  // charge fell while on panel
    double charged_mah = 0.0;
    double drawn_mah = 0.0;
    double energy_residual_mah = 0.0;  // |charged - drawn - capacity * delta|
};

struct NodeReport {
    std::string node_id;
    double threshold_sm = 0.0;
    double release_sm = 0.0;
    std::vector<TickSample> ticks;
    std::vector<irrigation::IrrigationEvent> events;
    TelemetryStats telemetry;
    PowerAudit power;
    std::uint64_t conservation_violations = 0;
    double uptime = 1.0;
    std::uint64_t images_captured = 0;
    std::vector<std::string> predictions;  // "label:confidence"
};

struct SimReport {
    std::uint64_t seed = 0;
    double duration_hours = 0.0;
    double tick_seconds = 0.0;
    bool automation_enabled = true;
    std::string start_time;
    std::vector<NodeReport> nodes;
};

/// Deterministic run of the whole field: weather, node power, soil, control
/// loop, telemetry and the optional imaging schedule.
SimReport run_scenario(const ScenarioConfig& config);

struct ArmSummary {
    double peak_moisture = 0.0;
    double min_after_first_actuation = 0.0;
    double max_after_first_actuation = 0.0;
    double time_in_band = 0.0;  // fraction of ticks after first actuation in [thr-2, rel+2]
    double pump_minutes = 0.0;
    std::optional<double> first_on_hour;
    std::optional<double> first_run_minutes;
};

/// Summary of node `node_index`.
ArmSummary summarize(const NodeReport& node, double tick_seconds);

struct Comparison {
    SimReport automated;
    SimReport baseline;
    ArmSummary automated_summary;
    ArmSummary baseline_summary;
    double baseline_overshoot = 0.0;  // baseline peak / release - 1
};

/// Runs the scenario twice on the same seed and weather: once as configured,
/// once with automation off and the fixed baseline schedule driving the pump.
Comparison compare_automation(const ScenarioConfig& config);

/// Writes <node>_trace.csv, <node>_power.csv, <node>_events.csv and
/// summary.json into `dir`; returns the written paths.
std::vector<std::filesystem::path> export_report(const SimReport& report,
                                                 const std::filesystem::path& dir);

std::vector<std::filesystem::path> export_comparison(const Comparison& comparison,
                                                     const std::filesystem::path& dir);

}  // namespace scrop::sim
