// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Tolerances and time budgets are fixed here.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "scrop/nn/layers.hpp"
#include "scrop/nn/training.hpp"
#include "scrop/scenario.hpp"
#include "scrop/sensors.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace scrop;

namespace {

constexpr double kCalibrationRelTol = 1e-9;
constexpr double kCalibrationBudgetS = 1.0;
constexpr double kConvAbsTol = 1e-12;
constexpr double kConvBudgetS = 5.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetS = 30.0;
constexpr std::size_t kGradMaxParams = 1000;
constexpr double kClassifierMinAccuracy = 0.95;
constexpr double kClassifierBudgetS = 300.0;
constexpr double kPowerBudgetS = 10.0;
constexpr double kIrrigationBudgetS = 10.0;
constexpr double kBandMargin = 2.0;
constexpr double kMinOvershoot = 0.20;
constexpr double kFirstRunMinMinutes = 40.0;
constexpr double kFirstRunMaxMinutes = 50.0;
constexpr double kMinWriteSpacingS = 15.0;
constexpr double kMaxVisibilityS = 30.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Outcome calibration() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (int mv = 0; mv <= 1023; ++mv) {
        const double expect = oracle::moisture_from_mv(mv);
        const double got = sensors::analog_to_moisture(sensors::AnalogReading(mv));
        worst = std::max(worst, std::abs(got - expect) / std::abs(expect));
    }
    const auto g = sensors::gravimetric_moisture({200.0, 100.0});
    const double elapsed = seconds_since(t0);
    const bool ok = worst <= kCalibrationRelTol && g.smp == 100.0 && elapsed < kCalibrationBudgetS;
    return {ok, fmt::format("max_rel_err={:.3e} smp(200g,100g)={} time={:.3f}s", worst, g.smp, elapsed)};
}

Outcome convolution() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2021);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = oracle::uniform(rng, 64);
        const auto h = oracle::uniform(rng, 9);
        const nn::Tensor g = nn::conv2d(nn::Tensor({8, 8}, f), {nn::Tensor({3, 3}, h)});
        const auto expect = oracle::conv_valid(f, 8, 8, h, 3, 3);
        if (g.size() != expect.size()) return {false, "output shape mismatch"};
        for (std::size_t i = 0; i < expect.size(); ++i) worst = std::max(worst, std::abs(g[i] - expect[i]));
    }
    const double elapsed = seconds_since(t0);
    return {worst <= kConvAbsTol && elapsed < kConvBudgetS,
            fmt::format("pairs=100 max_abs_err={:.3e} time={:.3f}s", worst, elapsed)};
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    const nn::Model m = nn::make_gradcheck_model(7);
    std::vector<bool> kinds(std::variant_size_v<nn::Layer>, false);
    for (const auto& l : m.layers) kinds[l.index()] = true;
    const bool every_kind = std::all_of(kinds.begin(), kinds.end(), [](bool b) { return b; });
    double worst = 0.0;
    for (const auto& s : nn::synthetic_leaf_dataset(m.labels, 2, 11, m.input_shape.at(0))) {
        worst = std::max(worst, nn::grad_check(m, s));
    }
    const double elapsed = seconds_since(t0);
    const bool ok = every_kind && m.parameter_count() <= kGradMaxParams && worst <= kGradRelTol &&
                    elapsed < kGradBudgetS;
    return {ok, fmt::format("params={} all_layer_kinds={} max_rel_err={:.3e} time={:.3f}s", m.parameter_count(),
                            every_kind, worst, elapsed)};
}

Outcome classifier() {
    // Confusion-matrix identities on a hand-tallied fixture.
    const std::pair<int, int> pairs[] = {{0, 0}, {0, 0}, {0, 1}, {1, 1}, {1, 1},
                                         {1, 1}, {1, 2}, {2, 2}, {2, 0}, {2, 2}};
    nn::ConfusionMatrix cm(3);
    for (auto [a, p] : pairs) cm.add(a, p);
    const bool identities = cm.row_sum(0) == 3 && cm.row_sum(1) == 4 && cm.row_sum(2) == 3 && cm.trace() == 7 &&
                            cm.total() == 10 && cm.accuracy() == 7.0 / 10.0 && cm.at(2, 0) == 1 &&
                            cm.at(1, 2) == 1 && cm.at(0, 1) == 1;

    const auto t0 = Clock::now();
    const std::vector<std::string> labels{"healthy", "early_blight"};
    const auto data = nn::synthetic_leaf_dataset(labels, 200, 1);
    const auto split = nn::split_dataset(data, 0.8, 1);
    const auto trained = nn::train(nn::make_leaf_model(labels, 1), split.train, nn::TrainConfig{});
    const auto eval = nn::evaluate(trained.model, split.validation);
    const double elapsed = seconds_since(t0);
    bool rows_ok = eval.matrix.total() == split.validation.size();
    for (std::size_t a = 0; a < eval.matrix.classes(); ++a) {
        const auto expected = static_cast<std::uint64_t>(
            std::count_if(split.validation.begin(), split.validation.end(), [&](const nn::Sample& s) {
                return s.label == a;
            }));
        rows_ok = rows_ok && eval.matrix.row_sum(a) == expected;
    }
    const bool ok = identities && rows_ok && eval.accuracy >= kClassifierMinAccuracy &&
                    eval.accuracy == static_cast<double>(eval.matrix.trace()) / eval.matrix.total() &&
                    elapsed < kClassifierBudgetS;
    return {ok, fmt::format("images={} held_out={} accuracy={:.4f} fixture_identities={} time={:.1f}s",
                            data.size(), split.validation.size(), eval.accuracy, identities && rows_ok, elapsed)};
}

Outcome power_cycle() {
    const auto t0 = Clock::now();
    const auto report = sim::run_scenario(sim::default_day_scenario());
    const double elapsed = seconds_since(t0);
    const auto& n = report.nodes.front();
    std::size_t rises_below_gate = 0;
    std::size_t rises = 0;
    std::size_t reverse = 0;
    double prev = sim::default_day_scenario().power.initial_charge;
    for (const auto& t : n.ticks) {
        if (t.charge_fraction > prev) {
            ++rises;
            if (t.panel_v < power::kChargeGateVolts) ++rises_below_gate;
        }
        if (t.charge_fraction < prev && t.source == power::PowerSource::Panel) ++reverse;
        prev = t.charge_fraction;
    }
    const bool ok = n.ticks.size() == 86400 && n.uptime == 1.0 && rises > 0 && rises_below_gate == 0 &&
                    reverse == 0 && n.power.charge_gate_violations == 0 && n.power.reverse_flow_violations == 0 &&
                    elapsed < kPowerBudgetS;
    return {ok, fmt::format("ticks={} uptime={} charging_ticks={} rises_below_12.9V={} reverse_flow={} time={:.2f}s",
                            n.ticks.size(), n.uptime, rises, rises_below_gate, reverse, elapsed)};
}

Outcome irrigation_band() {
    const auto t0 = Clock::now();
    const auto cmp = sim::compare_automation(sim::default_day_scenario());
    const double elapsed = seconds_since(t0);
    const auto& node = cmp.automated.nodes.front();
    const double lo = node.threshold_sm - kBandMargin;
    const double hi = node.release_sm + kBandMargin;
    const auto& a = cmp.automated_summary;
    const bool in_band = a.first_on_hour.has_value() && a.min_after_first_actuation >= lo &&
                         a.max_after_first_actuation <= hi;
    const double first_run = a.first_run_minutes.value_or(-1.0);
    const bool ok = in_band && cmp.baseline_overshoot >= kMinOvershoot && first_run >= kFirstRunMinMinutes &&
                    first_run <= kFirstRunMaxMinutes && elapsed < kIrrigationBudgetS;
    return {ok, fmt::format("band=[{:.1f},{:.1f}] automated=[{:.3f},{:.3f}] baseline_peak={:.3f} "
                            "overshoot={:.1f}% first_run={:.2f}min time={:.2f}s",
                            lo, hi, a.min_after_first_actuation, a.max_after_first_actuation,
                            cmp.baseline_summary.peak_moisture, 100.0 * cmp.baseline_overshoot, first_run, elapsed)};
}

Outcome telemetry_contract() {
    const auto report = sim::run_scenario(sim::default_day_scenario());
    const auto& t = report.nodes.front().telemetry;
    const bool ok = t.accepted > 1 && t.min_accepted_spacing_s >= kMinWriteSpacingS &&
                    t.max_visibility_latency_s <= kMaxVisibilityS && t.unobserved_records == 0;
    return {ok, fmt::format("accepted={} rate_limited={} min_spacing={:.1f}s max_visibility={:.1f}s unobserved={}",
                            t.accepted, t.rate_limited, t.min_accepted_spacing_s, t.max_visibility_latency_s,
                            t.unobserved_records)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism(const std::string& binary) {
    const fs::path root = fs::temp_directory_path() / "scrop-acceptance-determinism";
    fs::remove_all(root);
    for (const char* run : {"a", "b"}) {
        const std::string cmd =
            fmt::format("\"{}\" sim --seed 17 --out \"{}\" > /dev/null", binary, (root / run).string());
        if (std::system(cmd.c_str()) != 0) return {false, "scrop sim exited with an error"};
    }
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        if (entry.path().extension() != ".csv") continue;
        const fs::path other = root / "b" / entry.path().filename();
        if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
            return {false, fmt::format("{} differs between runs", entry.path().filename().string())};
        }
        ++compared;
    }
    fs::remove_all(root);
    return {compared >= 3, fmt::format("csv_files_compared={} identical=true", compared)};
}

}  // namespace

int main(int argc, char** argv) {
    std::string binary = argc > 1 ? argv[1] : SCROP_CLI_PATH;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"calibration_oracle", calibration},
        {"convolution_oracle", convolution},
        {"gradient_check", gradient_check},
        {"classifier_synthetic_leaves", classifier},
        {"power_cycle_default_day", power_cycle},
        {"irrigation_automated_vs_baseline", irrigation_band},
        {"telemetry_contract", telemetry_contract},
        {"determinism_cli_csv", [&] { return determinism(binary); }},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << "  " << o.detail << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failures, criteria.size()) << std::endl;
    return failures == 0 ? 0 : 1;
}
