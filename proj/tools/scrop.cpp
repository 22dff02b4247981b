// scrop: field simulator, telemetry server and leaf classifier front end.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "scrop/http_service.hpp"
#include "scrop/leaf_image.hpp"
#include "scrop/nn/model.hpp"
#include "scrop/nn/training.hpp"
#include "scrop/scenario.hpp"
#include "scrop/telemetry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scrop;

namespace {

int fail(const std::string& code, const std::string& message) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
    return 1;
}

sim::ScenarioConfig scenario_or_default(const std::string& path) {
    return path.empty() ? sim::default_day_scenario() : sim::load_scenario(path);
}

cloud::HttpService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

std::vector<std::string> default_labels() { return {"healthy", "early_blight"}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Solar-powered field node simulator and leaf disease classifier"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;

    auto* sim_cmd = app.add_subcommand("sim", "run a scenario and export traces");
    sim_cmd->add_option("--scenario", scenario_path, "scenario JSON (default day when omitted)");
    sim_cmd->add_option("--seed", seed, "override the scenario seed");
    sim_cmd->add_option("--out", out_dir, "output directory");

    auto* cmp_cmd = app.add_subcommand("compare", "automated loop vs fixed baseline schedule");
    cmp_cmd->add_option("--scenario", scenario_path, "scenario JSON (default day when omitted)");
    cmp_cmd->add_option("--seed", seed, "override the scenario seed");
    cmp_cmd->add_option("--out", out_dir, "output directory");

    int port = 8080;
    std::string host = "127.0.0.1";
    std::string data_dir;
    std::vector<std::string> channels;
    double visibility_s = 0.0;
    auto* serve_cmd = app.add_subcommand("serve", "serve the telemetry API over HTTP");
    serve_cmd->add_option("--port", port, "TCP port");
    serve_cmd->add_option("--host", host, "bind address");
    serve_cmd->add_option("--data", data_dir, "persist to this directory");
    serve_cmd->add_option("--channel", channels, "create channel id:write_key (repeatable)");
    serve_cmd->add_option("--visibility-delay", visibility_s, "seconds before writes appear in feeds");

    std::string dataset_dir;
    std::size_t epochs = 12;
    double lr = 0.02;
    double clip = 1.0;
    std::size_t synthetic = 0;
    std::string weights_out = "weights.scrp";
    auto* train_cmd = app.add_subcommand("train", "train the leaf classifier");
    train_cmd->add_option("--data", dataset_dir, "directory of <label>/*.ppm captures");
    train_cmd->add_option("--synthetic", synthetic, "render N leaves per class instead of --data");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--lr", lr, "SGD learning rate");
    train_cmd->add_option("--seed", seed, "initialisation and shuffle seed");
    train_cmd->add_option("--clip", clip, "per-sample gradient norm cap (0 disables)");
    train_cmd->add_option("--out", weights_out, "weight file to write");

    std::string weights_path;
    std::string image_path;
    auto* predict_cmd = app.add_subcommand("predict", "classify one leaf image");
    predict_cmd->add_option("--weights", weights_path, "weight file")->required();
    predict_cmd->add_option("--image", image_path, "PPM/PGM image")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "compare backprop with finite differences");
    grad_cmd->add_option("--seed", seed, "model seed");

    std::size_t per_class = 200;
    auto* synth_cmd = app.add_subcommand("synth", "render a labelled synthetic leaf dataset");
    synth_cmd->add_option("--out", out_dir, "output directory");
    synth_cmd->add_option("--per-class", per_class, "images per label");
    synth_cmd->add_option("--seed", seed, "render seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (*sim_cmd) {
            auto cfg = scenario_or_default(scenario_path);
            if (seed) cfg.seed = *seed;
            const auto report = sim::run_scenario(cfg);
            const auto files = sim::export_report(report, out_dir);
            const auto& n = report.nodes.front();
            std::cout << json{{"out", out_dir},
                              {"files", files.size()},
                              {"uptime", n.uptime},
                              {"events", n.events.size()},
                              {"accepted", n.telemetry.accepted}}
                             .dump()
                      << "\n";
        } else if (*cmp_cmd) {
            auto cfg = scenario_or_default(scenario_path);
            if (seed) cfg.seed = *seed;
            const auto c = sim::compare_automation(cfg);
            sim::export_comparison(c, out_dir);
            std::cout << json{{"out", out_dir},
                              {"automated_time_in_band", c.automated_summary.time_in_band},
                              {"automated_peak", c.automated_summary.peak_moisture},
                              {"baseline_peak", c.baseline_summary.peak_moisture},
                              {"baseline_overshoot", c.baseline_overshoot}}
                             .dump()
                      << "\n";
        } else if (*serve_cmd) {
            cloud::CloudOptions opts;
            if (!data_dir.empty()) opts.data_dir = data_dir;
            opts.visibility_delay = from_seconds(visibility_s);
            cloud::TelemetryCloud store(opts);
            for (const auto& spec : channels) {
                const auto colon = spec.find(':');
                if (colon == std::string::npos) return fail("usage", "--channel expects id:write_key");
                store.create_channel(spec.substr(0, colon), spec.substr(colon + 1));
            }
            cloud::HttpService service(store, cloud::steady_clock_since_now());
            if (!service.bind(host, port)) return fail("bind", fmt::format("cannot bind {}:{}", host, port));
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << json{{"listening", fmt::format("{}:{}", host, port)}}.dump() << "\n";
            service.listen_after_bind();
            g_service = nullptr;
        } else if (*train_cmd) {
            const std::uint64_t s = seed.value_or(1);
            std::vector<std::string> labels;
            nn::Dataset data;
            if (synthetic > 0) {
                labels = default_labels();
                data = nn::synthetic_leaf_dataset(labels, synthetic, s);
            } else if (!dataset_dir.empty()) {
                data = nn::load_dataset_dir(dataset_dir, labels);
            } else {
                return fail("usage", "train needs --data or --synthetic");
            }
            const auto split = nn::split_dataset(data, 0.8, s);
            auto result = nn::train(nn::make_leaf_model(labels, s), split.train, {epochs, lr, s, clip});
            const auto eval = nn::evaluate(result.model, split.validation);
            nn::save_model(weights_out, result.model);
            json matrix = json::array();
            for (std::size_t a = 0; a < eval.matrix.classes(); ++a) {
                json row = json::array();
                for (std::size_t p = 0; p < eval.matrix.classes(); ++p) row.push_back(eval.matrix.at(a, p));
                matrix.push_back(row);
            }
            std::cout << json{{"weights", weights_out},
                              {"labels", labels},
                              {"train", split.train.size()},
                              {"validation", split.validation.size()},
                              {"loss", result.loss_trace},
                              {"accuracy", eval.accuracy},
                              {"confusion", matrix}}
                             .dump()
                      << "\n";
        } else if (*predict_cmd) {
            const auto model = nn::load_model(weights_path);
            const auto image = sensors::read_pnm_file(image_path);
            const std::size_t side = model.input_shape.at(0);
            const auto r = nn::forward(model, nn::preprocess(image, side), image.width, image.height);
            std::cout << json{{"label", r.label},
                              {"confidence", r.confidence},
                              {"probabilities", r.probabilities},
                              {"lesion_box", r.lesion_box ? json(r.lesion_box->as_array()) : json(nullptr)}}
                             .dump()
                      << "\n";
        } else if (*grad_cmd) {
            const std::uint64_t s = seed.value_or(7);
            const auto model = nn::make_gradcheck_model(s);
            auto data = nn::synthetic_leaf_dataset(model.labels, 1, s, model.input_shape.at(0));
            const double err = nn::grad_check(model, data.front());
            std::cout << json{{"parameters", model.parameter_count()}, {"max_relative_error", err}}.dump()
                      << "\n";
            return err <= 1e-4 ? 0 : 3;
        } else if (*synth_cmd) {
            nn::write_synthetic_dataset(out_dir, default_labels(), per_class, seed.value_or(1));
            std::cout << json{{"out", out_dir}, {"labels", default_labels()}, {"per_class", per_class}}.dump()
                      << "\n";
        }
    } catch (const std::invalid_argument& e) {
        return fail("invalid_input", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
    return 0;
}
