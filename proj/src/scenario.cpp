#include "scrop/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "scrop/leaf_image.hpp"
#include "scrop/nn/model.hpp"
#include "scrop/nn/training.hpp"
#include "scrop/telemetry.hpp"

namespace scrop::sim {

namespace fs = std::filesystem;
using nlohmann::json;
using power::WeatherCondition;

namespace {

constexpr SimTime kDashboardPoll = std::chrono::seconds(15);
constexpr double kConservationTolerance = 1e-9;

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull) * 0xBF58476D1CE4E5B9ull;
    x ^= c + 0x94D049BB133111EBull + (x << 6) + (x >> 2);
    x ^= x >> 31;
    x *= 0xD6E8FEB86659FD93ull;
    return x ^ (x >> 32);
}

double hour_of(SimTime t) { return to_seconds(t) / 3600.0; }

bool in_any(const std::vector<HourWindow>& windows, double hour) {
    return std::any_of(windows.begin(), windows.end(),
                       [&](const HourWindow& w) { return w.contains(hour); });
}

class ProbeSensors final : public irrigation::NodeSensors {
public:
    ProbeSensors(const sensors::SoilColumnState& soil, const std::vector<HourWindow>& faults,
                 std::uint64_t seed, std::size_t node_index)
        : soil_(soil), faults_(faults), seed_(seed), node_index_(node_index) {}

    std::optional<irrigation::SensorSample> sample(SimTime now) override {
        if (in_any(faults_, hour_of(now))) return std::nullopt;
        irrigation::SensorSample s;
        s.soil_moisture = measured(soil_);
        s.dht = sensors::read_dht(soil_, mix(seed_, node_index_, static_cast<std::uint64_t>(now.count())));
        return s;
    }

    static double measured(const sensors::SoilColumnState& soil) {
        return sensors::analog_to_moisture(sensors::moisture_to_analog(soil.true_moisture));
    }

private:
    const sensors::SoilColumnState& soil_;
    const std::vector<HourWindow>& faults_;
    std::uint64_t seed_;
    std::size_t node_index_;
};

struct NodeRuntime {
    NodePlacement placement;
    power::PowerState power;
    sensors::SoilColumnState soil;
    std::unique_ptr<ProbeSensors> sensors;
    std::unique_ptr<irrigation::InProcessCloudClient> client;
    std::unique_ptr<irrigation::IrrigationNode> controller;
    NodeReport report;
    std::int64_t last_seen_entry = 0;
    std::uint64_t rail_ticks = 0;
};

std::string events_channel(const std::string& node) { return node + "-events"; }
std::string write_key(const std::string& node) { return "key-" + node; }

void poll_dashboard(const cloud::TelemetryCloud& cloud, NodeRuntime& node, SimTime now) {
    for (const auto& rec : cloud.channel_feed(node.placement.id, 16, now)) {
        if (rec.entry_id <= node.last_seen_entry) continue;
        node.last_seen_entry = rec.entry_id;
        auto& t = node.report.telemetry;
        t.max_visibility_latency_s = std::max(t.max_visibility_latency_s, to_seconds(now - rec.server_time));
    }
}

// ---- JSON schema -------------------------------------------------------

WeatherCondition condition_from(const json& j) {
    const auto name = j.get<std::string>();
    auto c = power::parse_condition(name);
    if (!c) throw std::invalid_argument("unknown weather condition '" + name + "'");
    return *c;
}

std::vector<HourWindow> windows_from(const json& j) {
    std::vector<HourWindow> out;
    for (const auto& w : j) out.push_back({w.at("start_hour").get<double>(), w.at("end_hour").get<double>()});
    return out;
}

json windows_to(const std::vector<HourWindow>& windows) {
    json out = json::array();
    for (const auto& w : windows) out.push_back({{"start_hour", w.start_hour}, {"end_hour", w.end_hour}});
    return out;
}

constexpr std::array<WeatherCondition, 4> kConditions{WeatherCondition::Sunny, WeatherCondition::ModeratelySunny,
                                                      WeatherCondition::Overcast, WeatherCondition::ShadyDark};

std::string scene_name(const sensors::SceneLabel& scene) {
    return scene.is_healthy() ? "healthy" : "diseased:" + std::to_string(*scene.disease_class);
}

sensors::SceneLabel scene_from(const std::string& name) {
    if (name == "healthy") return sensors::SceneLabel::healthy();
    if (name.rfind("diseased:", 0) == 0) return sensors::SceneLabel::diseased(std::stoi(name.substr(9)));
    throw std::invalid_argument("scene must be 'healthy' or 'diseased:<class>'");
}

std::string num(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

std::vector<WeatherSegment> default_day_weather() {
    return {
        {0.0, 5.0, WeatherCondition::ShadyDark},     {5.0, 7.0, WeatherCondition::Overcast},
        {7.0, 11.0, WeatherCondition::ModeratelySunny}, {11.0, 15.0, WeatherCondition::Sunny},
        {15.0, 17.0, WeatherCondition::Overcast},    {17.0, 18.5, WeatherCondition::ModeratelySunny},
        {18.5, 24.0, WeatherCondition::ShadyDark},
    };
}

ScenarioConfig default_day_scenario() {
    ScenarioConfig c;
    c.weather = default_day_weather();
    return c;
}

void ScenarioConfig::validate() const {
    if (!(duration_hours >= 0.0)) throw std::invalid_argument("duration must be non-negative");
    if (!(tick_seconds > 0.0)) throw std::invalid_argument("tick must be positive");
    if (!(loop_delay_ms > 0.0)) throw std::invalid_argument("loop delay must be positive");
    if (tick_seconds * 1000.0 > loop_delay_ms) {
        throw std::invalid_argument("tick must not exceed the controller loop delay");
    }
    if (std::abs(tick_seconds * 1000.0 - std::round(tick_seconds * 1000.0)) > 1e-9) {
        throw std::invalid_argument("tick must be a whole number of milliseconds");
    }
    if (weather.empty()) throw std::invalid_argument("weather timeline is empty");
    if (weather.front().start_hour != 0.0) throw std::invalid_argument("weather timeline must start at hour 0");
    for (std::size_t i = 0; i < weather.size(); ++i) {
        if (!(weather[i].end_hour > weather[i].start_hour)) {
            throw std::invalid_argument("weather segment " + std::to_string(i) + " is empty or reversed");
        }
        if (i > 0 && weather[i].start_hour != weather[i - 1].end_hour) {
            throw std::invalid_argument("weather segments " + std::to_string(i - 1) + " and " +
                                        std::to_string(i) + " overlap or leave a gap");
        }
    }
    if (weather.back().end_hour < duration_hours) {
        throw std::invalid_argument("weather timeline ends before the scenario");
    }
    if (nodes.empty()) throw std::invalid_argument("scenario needs at least one node");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (n.x_m < 0 || n.x_m > field_width_m || n.y_m < 0 || n.y_m > field_height_m) {
            throw std::invalid_argument("node '" + n.id + "' placed outside the field");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (nodes[j].id == n.id) throw std::invalid_argument("duplicate node id '" + n.id + "'");
        }
    }
    const double m0 = initial_moisture;
    if (!(m0 >= 0.0 && m0 <= 100.0)) throw std::invalid_argument("initial moisture outside [0, 100]");
    if (!(power.initial_charge >= 0.0 && power.initial_charge <= 1.0)) {
        throw std::invalid_argument("initial charge outside [0, 1]");
    }
    if (!(power.battery_capacity_mah > 0.0)) throw std::invalid_argument("battery capacity must be positive");
    if (power.load_current_ma < 0.0) throw std::invalid_argument("load current must be non-negative");
    if (imaging.enabled && !(imaging.period_hours > 0.0)) {
        throw std::invalid_argument("imaging period must be positive");
    }
}

std::size_t ScenarioConfig::tick_count() const {
    return static_cast<std::size_t>(std::floor(duration_hours * 3600.0 / tick_seconds + 1e-9));
}

WeatherCondition ScenarioConfig::weather_at(double hour) const {
    for (const auto& seg : weather) {
        if (hour >= seg.start_hour && hour < seg.end_hour) return seg.condition;
    }
    return weather.back().condition;
}

ScenarioConfig scenario_from_json(const std::string& text) {
    const json j = json::parse(text);
    ScenarioConfig c = default_day_scenario();
    try {
        c.duration_hours = j.value("duration_hours", c.duration_hours);
        c.tick_seconds = j.value("tick_seconds", c.tick_seconds);
        c.start_time = j.value("start_time", c.start_time);
        c.seed = j.value("seed", c.seed);
        c.crop = j.value("crop", c.crop);
        c.automation_enabled = j.value("automation_enabled", c.automation_enabled);
        c.loop_delay_ms = j.value("loop_delay_ms", c.loop_delay_ms);
        c.initial_moisture = j.value("initial_moisture", c.initial_moisture);
        if (j.contains("weather")) {
            c.weather.clear();
            for (const auto& s : j["weather"]) {
                c.weather.push_back({s.at("start_hour").get<double>(), s.at("end_hour").get<double>(),
                                     condition_from(s.at("condition"))});
            }
        }
        if (j.contains("field_size_m")) {
            c.field_width_m = j["field_size_m"].at(0).get<double>();
            c.field_height_m = j["field_size_m"].at(1).get<double>();
        }
        if (j.contains("nodes")) {
            c.nodes.clear();
            for (const auto& n : j["nodes"]) {
                NodePlacement p;
                p.id = n.value("id", p.id);
                p.x_m = n.value("x_m", p.x_m);
                p.y_m = n.value("y_m", p.y_m);
                if (n.contains("initial_moisture")) p.initial_moisture = n["initial_moisture"].get<double>();
                c.nodes.push_back(p);
            }
        }
        if (j.contains("soil")) {
            const auto& s = j["soil"];
            c.soil.pump_rate = s.value("pump_rate", c.soil.pump_rate);
            c.soil.et_temperature_coeff = s.value("et_temperature_coeff", c.soil.et_temperature_coeff);
            c.soil.et_min = s.value("et_min", c.soil.et_min);
            c.soil.et_max = s.value("et_max", c.soil.et_max);
            if (s.contains("et_base")) {
                for (auto cond : kConditions) {
                    const std::string key{power::to_string(cond)};
                    auto& slot = c.soil.et_base[static_cast<std::size_t>(cond)];
                    slot = s["et_base"].value(key, slot);
                }
            }
        }
        if (j.contains("climate")) {
            for (auto cond : kConditions) {
                const std::string key{power::to_string(cond)};
                if (!j["climate"].contains(key)) continue;
                const auto idx = static_cast<std::size_t>(cond);
                c.climate.temperature_c[idx] = j["climate"][key].value("temperature_c", c.climate.temperature_c[idx]);
                c.climate.humidity_pct[idx] = j["climate"][key].value("humidity_pct", c.climate.humidity_pct[idx]);
            }
        }
        if (j.contains("power")) {
            const auto& p = j["power"];
            c.power.battery_capacity_mah = p.value("battery_capacity_mah", c.power.battery_capacity_mah);
            c.power.initial_charge = p.value("initial_charge", c.power.initial_charge);
            c.power.load_current_ma = p.value("load_current_ma", c.power.load_current_ma);
        }
        if (j.contains("baseline_schedule")) {
            c.baseline_schedule.clear();
            for (const auto& s : j["baseline_schedule"]) {
                c.baseline_schedule.push_back({s.at("start_hour").get<double>(), s.value("minutes", 45.0)});
            }
        }
        if (j.contains("sensor_faults")) c.sensor_faults = windows_from(j["sensor_faults"]);
        if (j.contains("cloud_outages")) c.cloud_outages = windows_from(j["cloud_outages"]);
        if (j.contains("imaging")) {
            const auto& im = j["imaging"];
            c.imaging.enabled = im.value("enabled", c.imaging.enabled);
            c.imaging.period_hours = im.value("period_hours", c.imaging.period_hours);
            c.imaging.offset_hours = im.value("offset_hours", c.imaging.offset_hours);
            c.imaging.scene = scene_from(im.value("scene", std::string("healthy")));
            if (im.contains("weights")) c.imaging.weights_path = im["weights"].get<std::string>();
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("scenario schema: ") + e.what());
    }
    return c;
}

std::string scenario_to_json(const ScenarioConfig& c) {
    json weather = json::array();
    for (const auto& s : c.weather) {
        weather.push_back({{"start_hour", s.start_hour},
                           {"end_hour", s.end_hour},
                           {"condition", std::string(power::to_string(s.condition))}});
    }
    json nodes = json::array();
    for (const auto& n : c.nodes) {
        json node{{"id", n.id}, {"x_m", n.x_m}, {"y_m", n.y_m}};
        if (n.initial_moisture) node["initial_moisture"] = *n.initial_moisture;
        nodes.push_back(node);
    }
    json et_base, climate;
    for (auto cond : kConditions) {
        const std::string key{power::to_string(cond)};
        const auto idx = static_cast<std::size_t>(cond);
        et_base[key] = c.soil.et_base[idx];
        climate[key] = {{"temperature_c", c.climate.temperature_c[idx]},
                        {"humidity_pct", c.climate.humidity_pct[idx]}};
    }
    json schedule = json::array();
    for (const auto& s : c.baseline_schedule) schedule.push_back({{"start_hour", s.start_hour}, {"minutes", s.minutes}});
    json imaging{{"enabled", c.imaging.enabled},
                 {"period_hours", c.imaging.period_hours},
                 {"offset_hours", c.imaging.offset_hours},
                 {"scene", scene_name(c.imaging.scene)}};
    if (c.imaging.weights_path) imaging["weights"] = *c.imaging.weights_path;

    const json j{{"duration_hours", c.duration_hours},
                 {"tick_seconds", c.tick_seconds},
                 {"start_time", c.start_time},
                 {"seed", c.seed},
                 {"weather", weather},
                 {"field_size_m", {c.field_width_m, c.field_height_m}},
                 {"crop", c.crop},
                 {"nodes", nodes},
                 {"initial_moisture", c.initial_moisture},
                 {"soil",
                  {{"pump_rate", c.soil.pump_rate},
                   {"et_base", et_base},
                   {"et_temperature_coeff", c.soil.et_temperature_coeff},
                   {"et_min", c.soil.et_min},
                   {"et_max", c.soil.et_max}}},
                 {"climate", climate},
                 {"power",
                  {{"battery_capacity_mah", c.power.battery_capacity_mah},
                   {"initial_charge", c.power.initial_charge},
                   {"load_current_ma", c.power.load_current_ma}}},
                 {"automation_enabled", c.automation_enabled},
                 {"loop_delay_ms", c.loop_delay_ms},
                 {"baseline_schedule", schedule},
                 {"sensor_faults", windows_to(c.sensor_faults)},
                 {"cloud_outages", windows_to(c.cloud_outages)},
                 {"imaging", imaging}};
    return j.dump(2) + "\n";
}

ScenarioConfig load_scenario(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario " + path.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return scenario_from_json(text);
}

SimReport run_scenario(const ScenarioConfig& config) {
    config.validate();
    const SimEpoch epoch = parse_epoch(config.start_time);
    const SimTime tick = from_seconds(config.tick_seconds);
    const double dt = config.tick_seconds;
    const std::size_t ticks = config.tick_count();
    const SimTime end = tick * static_cast<std::int64_t>(ticks);

    cloud::TelemetryCloud cloud;
    cloud::CropProfile profile;
    try {
        profile = cloud.select_crop(config.crop);
    } catch (const cloud::NotFoundError& e) {
        throw std::invalid_argument(e.what());
    }

    std::optional<nn::Model> model;
    if (config.imaging.enabled && config.imaging.weights_path) model = nn::load_model(*config.imaging.weights_path);
    const SimTime image_period = from_seconds(config.imaging.period_hours * 3600.0);
    const SimTime image_offset = from_seconds(config.imaging.offset_hours * 3600.0);

    std::vector<NodeRuntime> nodes(config.nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        NodeRuntime& n = nodes[i];
        n.placement = config.nodes[i];
        const std::string& id = n.placement.id;
        cloud.create_channel(id, write_key(id));
        cloud.create_channel(events_channel(id), write_key(id));

        n.power.battery.capacity_mah = config.power.battery_capacity_mah;
        n.power.battery.charge_fraction = config.power.initial_charge;
        n.soil.true_moisture = n.placement.initial_moisture.value_or(config.initial_moisture);
        n.sensors = std::make_unique<ProbeSensors>(n.soil, config.sensor_faults, config.seed, i);
        n.client = std::make_unique<irrigation::InProcessCloudClient>(cloud, id, events_channel(id), write_key(id));
        irrigation::ControllerConfig cc{profile.threshold_sm, profile.release_sm,
                                        std::chrono::milliseconds(std::llround(config.loop_delay_ms))};
        n.controller = std::make_unique<irrigation::IrrigationNode>(id, cc, *n.client, epoch);
        n.controller->set_automation(config.automation_enabled);

        n.report.node_id = id;
        n.report.threshold_sm = profile.threshold_sm;
        n.report.release_sm = profile.release_sm;
        n.report.ticks.reserve(ticks);
    }

    for (std::size_t i = 0; i < ticks; ++i) {
        const SimTime now = tick * static_cast<std::int64_t>(i);
        const double hour = hour_of(now);
        const WeatherCondition cond = config.weather_at(hour);
        const auto cidx = static_cast<std::size_t>(cond);

        for (std::size_t k = 0; k < nodes.size(); ++k) {
            NodeRuntime& n = nodes[k];
            n.soil.temperature_c = config.climate.temperature_c[cidx];
            n.soil.humidity_pct = config.climate.humidity_pct[cidx];

            const double before = n.power.battery.charge_fraction;
            const auto transition =
                power::step_power(n.power, config.power.panel, cond, config.power.load_current_ma, dt);
            n.power = transition.next;
            const double delta = n.power.battery.charge_fraction - before;
            auto& audit = n.report.power;
            if (delta > 0.0 && n.power.panel_voltage < power::kChargeGateVolts) ++audit.charge_gate_violations;
            if (delta < 0.0 && n.power.source == power::PowerSource::Panel) ++audit.reverse_flow_violations;
            audit.charged_mah += transition.charged_mah;
            audit.drawn_mah += transition.drawn_mah;
            const bool rail = n.power.rail_on;
            if (rail) ++n.rail_ticks;

            n.client->set_reachable(!in_any(config.cloud_outages, hour));
            const double measured = ProbeSensors::measured(n.soil);

            if (!config.automation_enabled && rail) {
                const bool scheduled = std::any_of(
                    config.baseline_schedule.begin(), config.baseline_schedule.end(), [&](const IrrigationSlot& s) {
                        return hour >= s.start_hour && hour < s.start_hour + s.minutes / 60.0;
                    });
                if (auto ev = n.controller->set_relay(scheduled, measured, now)) {
                    n.report.events.push_back(*ev);
                }
            }

            if (auto it = n.controller->poll(now, rail, *n.sensors)) {
                auto& t = n.report.telemetry;
                ++t.loop_iterations;
                if (!it->sample) ++t.sensor_faults;
                if (it->stale_threshold) ++t.stale_records;
                if (it->event) n.report.events.push_back(*it->event);
            }

            const bool relay = n.controller->state().relay_on;
            n.report.ticks.push_back({static_cast<std::int64_t>(i), to_seconds(now), cond, n.power.panel_voltage,
                                      n.power.source, n.power.battery.charge_fraction, rail, relay,
                                      n.soil.true_moisture, measured, n.soil.temperature_c, n.soil.humidity_pct});

            const auto step = sensors::step_soil(n.soil, config.soil, cond, relay, dt);
            const double change = step.next.true_moisture - n.soil.true_moisture;
            if (std::abs(change - (step.inflow - step.outflow)) > kConservationTolerance) {
                ++n.report.conservation_violations;
            }
            n.soil.true_moisture = step.next.true_moisture;

            if (config.imaging.enabled && rail && now >= image_offset &&
                (now - image_offset) % image_period == SimTime::zero()) {
                const auto leaf = sensors::capture_leaf(config.imaging.scene,
                                                        mix(config.seed, k, static_cast<std::uint64_t>(now.count())));
                cloud.put_image(n.placement.id, sensors::encode_pnm(leaf), now);
                ++n.report.images_captured;
                if (model) {
                    for (const auto& p : nn::predict_pipeline(cloud, *model, n.placement.id, image_period, now,
                                                              now + SimTime(1))) {
                        n.report.predictions.push_back(p.label + ":" + num(p.confidence));
                    }
                }
            }
        }

        if (now % kDashboardPoll == SimTime::zero()) {
            for (auto& n : nodes) poll_dashboard(cloud, n, now);
        }
    }

    // Keep the dashboard polling after the run so late writes are observed.
    SimTime next_poll = ((end + kDashboardPoll - SimTime(1)) / kDashboardPoll) * kDashboardPoll;
    if (ticks > 0 && next_poll == end - tick + tick && next_poll % kDashboardPoll != SimTime::zero()) next_poll += tick;
    for (SimTime t = next_poll; t <= end + 2 * kDashboardPoll + cloud.options().visibility_delay; t += kDashboardPoll) {
        for (auto& n : nodes) poll_dashboard(cloud, n, t);
    }

    SimReport report;
    report.seed = config.seed;
    report.duration_hours = config.duration_hours;
    report.tick_seconds = config.tick_seconds;
    report.automation_enabled = config.automation_enabled;
    report.start_time = config.start_time;
    for (auto& n : nodes) {
        const std::string& id = n.placement.id;
        auto& t = n.report.telemetry;
        t.accepted = cloud.accepted_count(id);
        t.rate_limited = cloud.rate_limited_count(id);
        t.events_accepted = cloud.accepted_count(events_channel(id));
        t.unobserved_records = t.accepted - static_cast<std::uint64_t>(n.last_seen_entry);
        const auto all = cloud.channel_feed(id, std::max<std::size_t>(1, t.accepted), SimTime::max() / 2);
        for (std::size_t r = 1; r < all.size(); ++r) {
            const double gap = to_seconds(all[r].server_time - all[r - 1].server_time);
            t.min_accepted_spacing_s = r == 1 ? gap : std::min(t.min_accepted_spacing_s, gap);
        }
        auto& audit = n.report.power;
        audit.energy_residual_mah = std::abs(audit.charged_mah - audit.drawn_mah -
                                             config.power.battery_capacity_mah *
                                                 (n.power.battery.charge_fraction - config.power.initial_charge));
        n.report.uptime = ticks == 0 ? 1.0 : static_cast<double>(n.rail_ticks) / static_cast<double>(ticks);
        report.nodes.push_back(std::move(n.report));
    }
    return report;
}

ArmSummary summarize(const NodeReport& node, double tick_seconds) {
    ArmSummary s;
    const double lo = node.threshold_sm - 2.0;
    const double hi = node.release_sm + 2.0;
    std::optional<double> first_on_s;
    std::optional<double> first_off_s;
    for (const auto& e : node.events) {
        const double t = to_seconds(e.time);
        if (!first_on_s && e.action == irrigation::PumpAction::PumpOn) {
            first_on_s = t;
        } else if (first_on_s && !first_off_s && e.action == irrigation::PumpAction::PumpOff) {
            first_off_s = t;
        }
    }
    if (first_on_s) s.first_on_hour = *first_on_s / 3600.0;
    if (first_on_s && first_off_s) s.first_run_minutes = (*first_off_s - *first_on_s) / 60.0;

    std::size_t after = 0;
    std::size_t in_band = 0;
    bool seen = false;
    for (const auto& tk : node.ticks) {
        s.peak_moisture = std::max(s.peak_moisture, tk.true_moisture);
        if (tk.relay_on) s.pump_minutes += tick_seconds / 60.0;
        if (first_on_s && tk.time_s >= *first_on_s) {
            if (!seen) {
                s.min_after_first_actuation = s.max_after_first_actuation = tk.true_moisture;
                seen = true;
            }
            s.min_after_first_actuation = std::min(s.min_after_first_actuation, tk.true_moisture);
            s.max_after_first_actuation = std::max(s.max_after_first_actuation, tk.true_moisture);
            ++after;
            if (tk.true_moisture >= lo && tk.true_moisture <= hi) ++in_band;
        }
    }
    s.time_in_band = after == 0 ? 0.0 : static_cast<double>(in_band) / static_cast<double>(after);
    return s;
}

Comparison compare_automation(const ScenarioConfig& config) {
    ScenarioConfig manual = config;
    manual.automation_enabled = false;
    Comparison c;
    c.automated = run_scenario(config);
    c.baseline = run_scenario(manual);
    c.automated_summary = summarize(c.automated.nodes.front(), config.tick_seconds);
    c.baseline_summary = summarize(c.baseline.nodes.front(), config.tick_seconds);
    const double release = c.baseline.nodes.front().release_sm;
    c.baseline_overshoot = release > 0.0 ? c.baseline_summary.peak_moisture / release - 1.0 : 0.0;
    return c;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

json summary_json(const ArmSummary& s) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"peak_moisture", s.peak_moisture},
            {"min_after_first_actuation", s.min_after_first_actuation},
            {"max_after_first_actuation", s.max_after_first_actuation},
            {"time_in_band", s.time_in_band},
            {"pump_minutes", s.pump_minutes},
            {"first_on_hour", opt(s.first_on_hour)},
            {"first_run_minutes", opt(s.first_run_minutes)}};
}

json report_json(const SimReport& report) {
    json nodes = json::array();
    for (const auto& n : report.nodes) {
        const auto& t = n.telemetry;
        const auto& p = n.power;
        nodes.push_back({{"node_id", n.node_id},
                         {"threshold_sm", n.threshold_sm},
                         {"release_sm", n.release_sm},
                         {"ticks", n.ticks.size()},
                         {"events", n.events.size()},
                         {"uptime", n.uptime},
                         {"conservation_violations", n.conservation_violations},
                         {"images_captured", n.images_captured},
                         {"predictions", n.predictions},
                         {"telemetry",
                          {{"loop_iterations", t.loop_iterations},
                           {"accepted", t.accepted},
                           {"rate_limited", t.rate_limited},
                           {"stale_records", t.stale_records},
                           {"sensor_faults", t.sensor_faults},
                           {"events_accepted", t.events_accepted},
                           {"min_accepted_spacing_s", t.min_accepted_spacing_s},
                           {"max_visibility_latency_s", t.max_visibility_latency_s},
                           {"unobserved_records", t.unobserved_records}}},
                         {"power",
                          {{"charge_gate_violations", p.charge_gate_violations},
                           {"reverse_flow_violations", p.reverse_flow_violations},
                           {"charged_mah", p.charged_mah},
                           {"drawn_mah", p.drawn_mah},
                           {"energy_residual_mah", p.energy_residual_mah},
                           {"final_charge_fraction",
                            n.ticks.empty() ? json(nullptr) : json(n.ticks.back().charge_fraction)}}},
                         {"summary", summary_json(summarize(n, report.tick_seconds))}});
    }
    return {{"seed", report.seed},
            {"duration_hours", report.duration_hours},
            {"tick_seconds", report.tick_seconds},
            {"automation_enabled", report.automation_enabled},
            {"start_time", report.start_time},
            {"nodes", nodes}};
}

}  // namespace

std::vector<fs::path> export_report(const SimReport& report, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    const SimEpoch epoch = parse_epoch(report.start_time);
    for (const auto& n : report.nodes) {
        fmt::memory_buffer trace;
        fmt::memory_buffer power_csv;
        fmt::format_to(std::back_inserter(trace),
                       "tick,time_s,condition,panel_v,source,charge_fraction,rail_on,relay_on,"
                       "true_moisture,measured_smps,temperature_c,humidity_pct\n");
        fmt::format_to(std::back_inserter(power_csv), "tick,condition,panel_v,source,charge_fraction,rail_on\n");
        for (const auto& t : n.ticks) {
            fmt::format_to(std::back_inserter(trace), "{},{:.3f},{},{:.2f},{},{:.9f},{},{},{:.6f},{:.6f},{:.3f},{:.3f}\n",
                           t.tick, t.time_s, power::to_string(t.condition), t.panel_v, power::to_string(t.source),
                           t.charge_fraction, t.rail_on ? 1 : 0, t.relay_on ? 1 : 0, t.true_moisture,
                           t.measured_smps, t.temperature_c, t.humidity_pct);
            fmt::format_to(std::back_inserter(power_csv), "{},{},{:.2f},{},{:.9f},{}\n", t.tick,
                           power::to_string(t.condition), t.panel_v, power::to_string(t.source),
                           t.charge_fraction, t.rail_on ? 1 : 0);
        }
        std::string events = "timestamp,action,sm\n";
        for (const auto& e : n.events) {
            events += fmt::format("{},{},{:.6f}\n", epoch.iso8601(e.time), irrigation::to_string(e.action),
                                  e.sm_at_event);
        }
        const fs::path trace_path = dir / (n.node_id + "_trace.csv");
        const fs::path power_path = dir / (n.node_id + "_power.csv");
        const fs::path events_path = dir / (n.node_id + "_events.csv");
        write_file(trace_path, fmt::to_string(trace));
        write_file(power_path, fmt::to_string(power_csv));
        write_file(events_path, events);
        written.insert(written.end(), {trace_path, power_path, events_path});
    }
    const fs::path summary = dir / "summary.json";
    write_file(summary, report_json(report).dump(2) + "\n");
    written.push_back(summary);
    return written;
}

std::vector<fs::path> export_comparison(const Comparison& c, const fs::path& dir) {
    auto written = export_report(c.automated, dir / "automated");
    auto baseline = export_report(c.baseline, dir / "baseline");
    written.insert(written.end(), baseline.begin(), baseline.end());
    const json j{{"automated", summary_json(c.automated_summary)},
                 {"baseline", summary_json(c.baseline_summary)},
                 {"baseline_overshoot", c.baseline_overshoot}};
    const fs::path path = dir / "comparison.json";
    write_file(path, j.dump(2) + "\n");
    written.push_back(path);
    return written;
}

}  // namespace scrop::sim
