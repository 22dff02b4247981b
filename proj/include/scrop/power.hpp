#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace scrop::power {

enum class WeatherCondition { Sunny, ModeratelySunny, Overcast, ShadyDark };

std::string_view to_string(WeatherCondition condition);
std::optional<WeatherCondition> parse_condition(std::string_view name);

/// Minimum panel voltage at which the diode gate lets the 12 V battery charge.
inline constexpr double kChargeGateVolts = 12.9;
/// Regulated rail feeding the microcontroller and sensors.
inline constexpr double kRailVolts = 3.3;
/// The panel feeds the rail and the battery together, so charging starts
/// once it covers both: 3.3 V + 12.9 V.
inline constexpr double kChargingPanelVolts = kRailVolts + kChargeGateVolts;

/// 12 V / 15 W panel with the measured open-circuit voltage per sky condition.
struct SolarPanelModel {
    double rated_voltage = 12.0;
    double rated_power = 15.0;
    // Indexed by WeatherCondition.
    std::array<double, 4> condition_voltage{16.3, 14.4, 8.33, 0.89};
};

struct BatteryState {
    double nominal_voltage = 12.0;
    double capacity_mah = 7000.0;
    double charge_fraction = 0.5;
};

enum class PowerSource { Panel, Battery, None };

std::string_view to_string(PowerSource source);

struct PowerState {
    double panel_voltage = 0.0;
    BatteryState battery;
    bool rail_on = false;
    double rail_voltage = 0.0;
    PowerSource source = PowerSource::None;
};

/// Result of one power step. The two flows are the charge actually moved
/// after clamping, so over any trace
///   sum(charged) - sum(drawn) == capacity * (charge_end - charge_start).
struct PowerTransition {
    PowerState next;
    double charged_mah = 0.0;
    double drawn_mah = 0.0;
};

double panel_voltage(const SolarPanelModel& model, WeatherCondition condition);

/// 3.3 V when the input can sustain the rail, nothing otherwise.
std::optional<double> regulate(double input_voltage);

/// Current available for charging when the gate is open: the panel's rated
/// power at nominal battery voltage minus what the node is drawing.
double charge_current_ma(const SolarPanelModel& model, const BatteryState& battery,
                         double load_current_ma);

/// One power interval. At or above kChargingPanelVolts the panel runs the
/// node and charges the battery; from the regulator dropout up to that it
/// runs the node only; below dropout the battery carries the load until empty.
PowerTransition step_power(const PowerState& state, const SolarPanelModel& model,
                           WeatherCondition condition, double load_current_ma, double dt_s);

}  // namespace scrop::power
