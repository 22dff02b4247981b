#include "scrop/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace scrop::sensors {

namespace {

// Uniform in [-1, 1) from the top 53 bits of the engine output.
double symmetric_unit(std::mt19937_64& engine) {
    const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

}  // namespace

AnalogReading::AnalogReading(int count) : count_(count) {
    if (count < 0 || count > kMax) {
        throw std::out_of_range("analog reading " + std::to_string(count) +
                                " outside [0, 1023]");
    }
}

GravimetricMoisture gravimetric_moisture(const GravimetricSample& sample) {
    if (!(sample.dry_weight_g > 0.0)) {
        throw std::invalid_argument("dry weight must be positive");
    }
    if (sample.wet_weight_g < sample.dry_weight_g) {
        throw std::invalid_argument("wet weight below dry weight");
    }
    GravimetricMoisture m;
    m.sm = (sample.wet_weight_g - sample.dry_weight_g) / sample.dry_weight_g;
    m.smp = 100.0 * m.sm;
    return m;
}

double analog_to_moisture(AnalogReading reading, const MoistureCalibration& cal) {
    return cal.k_squared() * (cal.slope * static_cast<double>(reading.count()) + cal.intercept);
}

AnalogReading moisture_to_analog(double smps, const MoistureCalibration& cal) {
    const double raw = (smps / cal.k_squared() - cal.intercept) / cal.slope;
    if (!(raw > 0.0)) return AnalogReading(0);
    if (raw >= AnalogReading::kMax) return AnalogReading(AnalogReading::kMax);
    return AnalogReading(static_cast<int>(std::lround(raw)));
}

DhtReading apply_dht_noise(const SoilColumnState& soil, double temperature_offset,
                           double humidity_offset) {
    return {soil.temperature_c + temperature_offset,
            std::clamp(soil.humidity_pct + humidity_offset, 0.0, 100.0)};
}

DhtReading read_dht(const SoilColumnState& soil, std::uint64_t noise_seed) {
    std::mt19937_64 engine(noise_seed);
    const double t = kDhtTemperatureBound * symmetric_unit(engine);
    const double h = kDhtHumidityBound * symmetric_unit(engine);
    return apply_dht_noise(soil, t, h);
}

DhtReading read_dht(const SoilColumnState& soil) { return apply_dht_noise(soil, 0.0, 0.0); }

double SoilDynamics::et_rate(power::WeatherCondition condition, double temperature_c) const {
    const double base = et_base[static_cast<std::size_t>(condition)];
    const double scaled = base * (1.0 + et_temperature_coeff * (temperature_c - 25.0));
    return std::clamp(scaled, et_min, et_max);
}

SoilStep step_soil(const SoilColumnState& soil, const SoilDynamics& dynamics,
                   power::WeatherCondition condition, bool relay_on, double dt_s) {
    const double minutes = std::max(0.0, dt_s) / 60.0;
    SoilStep step;
    step.next = soil;

    const double before = soil.true_moisture;
    double inflow = relay_on ? dynamics.pump_rate * minutes : 0.0;
    double outflow = dynamics.et_rate(condition, soil.temperature_c) * minutes;

    // Saturation caps the pump; an empty column stops losing water.
    inflow = std::min(inflow, 100.0 - before + outflow);
    outflow = std::min(outflow, before + inflow);
    inflow = std::max(0.0, inflow);

    step.next.true_moisture = before + inflow - outflow;
    step.inflow = inflow;
    step.outflow = outflow;
    return step;
}

}  // namespace scrop::sensors
