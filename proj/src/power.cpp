#include "scrop/power.hpp"

#include <algorithm>

namespace scrop::power {

namespace {

constexpr double kSecondsPerHour = 3600.0;

}  // namespace

std::string_view to_string(WeatherCondition condition) {
    switch (condition) {
        case WeatherCondition::Sunny: return "Sunny";
        case WeatherCondition::ModeratelySunny: return "ModeratelySunny";
        case WeatherCondition::Overcast: return "Overcast";
        case WeatherCondition::ShadyDark: return "ShadyDark";
    }
    return "ShadyDark";
}

std::optional<WeatherCondition> parse_condition(std::string_view name) {
    for (auto c : {WeatherCondition::Sunny, WeatherCondition::ModeratelySunny,
                   WeatherCondition::Overcast, WeatherCondition::ShadyDark}) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

std::string_view to_string(PowerSource source) {
    switch (source) {
        case PowerSource::Panel: return "Panel";
        case PowerSource::Battery: return "Battery";
        case PowerSource::None: return "None";
    }
    return "None";
}

double panel_voltage(const SolarPanelModel& model, WeatherCondition condition) {
    return model.condition_voltage[static_cast<std::size_t>(condition)];
}

std::optional<double> regulate(double input_voltage) {
    if (input_voltage >= kRailVolts) return kRailVolts;
    return std::nullopt;
}

double charge_current_ma(const SolarPanelModel& model, const BatteryState& battery,
                         double load_current_ma) {
    const double available_ma = model.rated_power / battery.nominal_voltage * 1000.0;
    return std::max(0.0, available_ma - load_current_ma);
}

PowerTransition step_power(const PowerState& state, const SolarPanelModel& model,
                           WeatherCondition condition, double load_current_ma, double dt_s) {
    const double dt = std::max(0.0, dt_s);
    const double load = std::max(0.0, load_current_ma);

    PowerTransition out;
    PowerState& next = out.next;
    next.battery = state.battery;
    next.battery.charge_fraction = std::clamp(next.battery.charge_fraction, 0.0, 1.0);
    next.panel_voltage = panel_voltage(model, condition);

    const double capacity = next.battery.capacity_mah;
    const double before = next.battery.charge_fraction;

    if (next.panel_voltage >= kChargingPanelVolts) {
        const double added_mah = charge_current_ma(model, next.battery, load) * dt / kSecondsPerHour;
        next.battery.charge_fraction = std::min(1.0, before + added_mah / capacity);
        out.charged_mah = (next.battery.charge_fraction - before) * capacity;
        next.source = PowerSource::Panel;
    } else if (regulate(next.panel_voltage)) {
        next.source = PowerSource::Panel;
    } else if (before > 0.0) {
        const double drawn_mah = load * dt / kSecondsPerHour;
        next.battery.charge_fraction = std::max(0.0, before - drawn_mah / capacity);
        out.drawn_mah = (before - next.battery.charge_fraction) * capacity;
        next.source = PowerSource::Battery;
    } else {
        next.source = PowerSource::None;
    }

    // The battery's nominal 12 V always clears the regulator dropout.
    next.rail_on = next.source != PowerSource::None;
    next.rail_voltage = next.rail_on ? kRailVolts : 0.0;
    return out;
}

}  // namespace scrop::power
