#pragma once

#include <array>
#include <cstdint>

#include "scrop/power.hpp"

namespace scrop::sensors {

/// 10-bit ADC count from the soil probe.
class AnalogReading {
public:
    static constexpr int kMax = 1023;

    /// Throws std::out_of_range outside [0, 1023].
    explicit AnalogReading(int count);

    int count() const noexcept { return count_; }
    friend bool operator==(AnalogReading, AnalogReading) = default;

private:
    int count_;
};

/// Probe calibration: Smps = k^2 * (slope * MV + intercept).
struct MoistureCalibration {
    double slope = 0.008985;
    double intercept = 0.207762;
    double k = 2.718282;

    double k_squared() const noexcept { return k * k; }
};

struct GravimetricSample {
    double wet_weight_g = 0.0;
    double dry_weight_g = 0.0;
};

struct GravimetricMoisture {
    double sm = 0.0;   // (WW - DW) / DW
    double smp = 0.0;  // 100 * sm
};

/// Throws std::invalid_argument when dry weight is not positive or the wet
/// sample weighs less than the dry one.
GravimetricMoisture gravimetric_moisture(const GravimetricSample& sample);

double analog_to_moisture(AnalogReading reading, const MoistureCalibration& cal = {});

/// Inverse of analog_to_moisture, rounded to the nearest count and clamped
/// to the ADC range.
AnalogReading moisture_to_analog(double smps, const MoistureCalibration& cal = {});

/// Ground truth around the probe. Moisture is held in the probe's calibration
/// units so it compares directly against controller thresholds.
struct SoilColumnState {
    double true_moisture = 0.0;
    double temperature_c = 25.0;
    double humidity_pct = 60.0;
    double depth_cm = 30.0;
};

struct DhtReading {
    double temperature_c = 0.0;
    double humidity_pct = 0.0;
};

/// DHT11-class tolerance.
inline constexpr double kDhtTemperatureBound = 2.0;
inline constexpr double kDhtHumidityBound = 5.0;

/// Ground truth plus the given offsets; humidity is clamped to [0, 100].
DhtReading apply_dht_noise(const SoilColumnState& soil, double temperature_offset,
                           double humidity_offset);

/// Ground truth plus uniform noise within the DHT11 bounds, drawn
/// deterministically from `noise_seed`.
DhtReading read_dht(const SoilColumnState& soil, std::uint64_t noise_seed);

/// Noise-free read.
DhtReading read_dht(const SoilColumnState& soil);

/// First-order soil water balance, all rates in calibration units per minute:
///   dM/dt = pump_rate * [relay on] - et_rate(condition, temperature)
struct SoilDynamics {
    double pump_rate = 0.5;
    // Indexed by WeatherCondition.
    std::array<double, 4> et_base{0.12, 0.08, 0.04, 0.02};
    double et_temperature_coeff = 0.03;  // per degree C away from 25 C
    double et_min = 0.02;
    double et_max = 0.12;

    double et_rate(power::WeatherCondition condition, double temperature_c) const;
};

/// One soil update with the audited flow terms.
struct SoilStep {
    SoilColumnState next;
    double inflow = 0.0;
    double outflow = 0.0;
};

/// Moisture stays within [0, 100]; inflow/outflow report what was applied
/// after clamping so next - prev == inflow - outflow holds exactly.
SoilStep step_soil(const SoilColumnState& soil, const SoilDynamics& dynamics,
                   power::WeatherCondition condition, bool relay_on, double dt_s);

}  // namespace scrop::sensors
