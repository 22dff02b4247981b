#include "scrop/http_service.hpp"

#include <httplib.h>
#include <json.hpp>

#include "scrop/leaf_image.hpp"

namespace scrop::cloud {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
    send_json(res, status, json{{"error", code}, {"message", message}});
}

json record_json(const TelemetryRecord& r, const SimEpoch& epoch) {
    json j{{"entry_id", r.entry_id},
           {"created_at", epoch.iso8601(r.server_time)},
           {"t_ms", r.server_time.count()},
           {"stale", r.stale_threshold}};
    for (std::size_t i = 0; i < kFieldCount; ++i) {
        if (r.fields[i]) j["field" + std::to_string(i + 1)] = *r.fields[i];
    }
    if (!r.status.empty()) j["status"] = r.status;
    return j;
}

json crop_json(const CropProfile& c) {
    return {{"crop_name", c.crop_name}, {"threshold_sm", c.threshold_sm}, {"release_sm", c.release_sm}};
}

// Accepts numbers or numeric strings, as ThingSpeak clients send both.
std::optional<double> field_value(const json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        char* end = nullptr;
        const double d = std::strtod(s.c_str(), &end);
        if (end != s.c_str() && *end == '\0') return d;
    }
    return std::nullopt;
}

}  // namespace

struct HttpService::Impl {
    TelemetryCloud& cloud;
    std::function<SimTime()> clock;
    SimEpoch epoch;
    httplib::Server server;

    Impl(TelemetryCloud& c, std::function<SimTime()> clk, SimEpoch e)
        : cloud(c), clock(std::move(clk)), epoch(e) {
        routes();
    }

    void routes() {
        server.Post(R"(/channels/([A-Za-z0-9_-]+)/update)", [this](const httplib::Request& req,
                                                                   httplib::Response& res) {
            const std::string id = req.matches[1];
            const json body = json::parse(req.body, nullptr, false);
            if (!body.is_object() || !body.contains("write_key") || !body["write_key"].is_string()) {
                return send_error(res, 400, "bad_request", "body must be JSON with write_key");
            }
            FieldValues fields{};
            for (std::size_t i = 0; i < kFieldCount; ++i) {
                const std::string key = "field" + std::to_string(i + 1);
                if (!body.contains(key)) continue;
                fields[i] = field_value(body[key]);
                if (!fields[i]) return send_error(res, 400, "bad_request", key + " is not numeric");
            }
            if (std::none_of(fields.begin(), fields.end(), [](const auto& f) { return f.has_value(); })) {
                return send_error(res, 400, "bad_request", "at least one field is required");
            }
            const bool stale = body.value("stale", false);
            const std::string status = body.value("status", "");
            const auto result = cloud.channel_write(id, body["write_key"].get<std::string>(), fields,
                                                    clock(), stale, status);
            switch (result.status) {
                case WriteStatus::Accepted:
                    return send_json(res, 200, json{{"entry_id", *result.entry_id}});
                case WriteStatus::RateLimited:
                    return send_error(res, 429, "rate_limited", "writes must be 15 s apart");
                case WriteStatus::Unauthorized:
                    return send_error(res, 401, "unauthorized", "write key mismatch");
                case WriteStatus::NotFound:
                    return send_error(res, 404, "not_found", "unknown channel " + id);
            }
        });

        server.Get(R"(/channels/([A-Za-z0-9_-]+)/feed)", [this](const httplib::Request& req,
                                                               httplib::Response& res) {
            std::size_t n = 100;
            if (req.has_param("results")) {
                try {
                    const long v = std::stol(req.get_param_value("results"));
                    if (v < 1) throw std::invalid_argument("results");
                    n = static_cast<std::size_t>(v);
                } catch (const std::exception&) {
                    return send_error(res, 400, "bad_request", "results must be a positive integer");
                }
            }
            try {
                json records = json::array();
                for (const auto& r : cloud.channel_feed(req.matches[1], n, clock())) {
                    records.push_back(record_json(r, epoch));
                }
                send_json(res, 200, json{{"channel", std::string(req.matches[1])}, {"records", records}});
            } catch (const NotFoundError& e) {
                send_error(res, 404, "not_found", e.what());
            }
        });

        server.Get("/crops", [this](const httplib::Request&, httplib::Response& res) {
            json crops = json::array();
            for (const auto& c : cloud.crops()) crops.push_back(crop_json(c));
            send_json(res, 200, json{{"crops", crops}, {"active", cloud.threshold().crop_name}});
        });

        server.Post("/crops/select", [this](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body, nullptr, false);
            if (!body.is_object() || !body.contains("crop_name") || !body["crop_name"].is_string()) {
                return send_error(res, 400, "bad_request", "body must be JSON with crop_name");
            }
            try {
                send_json(res, 200, crop_json(cloud.select_crop(body["crop_name"].get<std::string>())));
            } catch (const NotFoundError& e) {
                send_error(res, 404, "not_found", e.what());
            }
        });

        server.Get("/crops/threshold", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, crop_json(cloud.threshold()));
        });

        server.Post(R"(/nodes/([A-Za-z0-9_-]+)/images)", [this](const httplib::Request& req,
                                                               httplib::Response& res) {
            try {
                sensors::decode_pnm(req.body);
            } catch (const std::invalid_argument& e) {
                return send_error(res, 400, "bad_image", e.what());
            }
            const auto id = cloud.put_image(req.matches[1], req.body, clock());
            send_json(res, 200, json{{"image_id", id}});
        });

        server.Get(R"(/nodes/([A-Za-z0-9_-]+)/images/latest)", [this](const httplib::Request& req,
                                                                     httplib::Response& res) {
            try {
                const ImageRecord rec = cloud.get_latest_image(req.matches[1]);
                const bool color = rec.bytes.size() > 1 && rec.bytes[1] == '6';
                res.status = 200;
                res.set_header("X-Image-Id", std::to_string(rec.id));
                res.set_header("X-Created-At", epoch.iso8601(rec.timestamp));
                res.set_content(rec.bytes,
                                color ? "image/x-portable-pixmap" : "image/x-portable-graymap");
            } catch (const NotFoundError& e) {
                send_error(res, 404, "not_found", e.what());
            }
        });

        server.Post(R"(/nodes/([A-Za-z0-9_-]+)/predictions)", [this](const httplib::Request& req,
                                                                    httplib::Response& res) {
            const json body = json::parse(req.body, nullptr, false);
            if (!body.is_object() || !body.contains("label") || !body["label"].is_string() ||
                !body.contains("confidence") || !body["confidence"].is_number() ||
                !body.contains("image_id") || !body["image_id"].is_number_integer()) {
                return send_error(res, 400, "bad_request",
                                  "body must be JSON with label, confidence, image_id");
            }
            std::optional<std::array<int, 4>> box;
            if (body.contains("lesion_box") && !body["lesion_box"].is_null()) {
                const auto& b = body["lesion_box"];
                if (!b.is_array() || b.size() != 4) {
                    return send_error(res, 400, "bad_request", "lesion_box must be [x, y, w, h]");
                }
                box = b.get<std::array<int, 4>>();
            }
            try {
                const auto id = cloud.put_prediction(req.matches[1], body["label"].get<std::string>(),
                                                     body["confidence"].get<double>(),
                                                     body["image_id"].get<std::int64_t>(), clock(), box);
                send_json(res, 200, json{{"prediction_id", id}});
            } catch (const std::invalid_argument& e) {
                send_error(res, 400, "bad_request", e.what());
            }
        });

        server.Get(R"(/nodes/([A-Za-z0-9_-]+)/predictions/latest)", [this](const httplib::Request& req,
                                                                          httplib::Response& res) {
            try {
                const PredictionRecord p = cloud.get_latest_prediction(req.matches[1]);
                json j{{"prediction_id", p.id},
                       {"node_id", p.node_id},
                       {"label", p.label},
                       {"confidence", p.confidence},
                       {"image_id", p.image_id},
                       {"created_at", epoch.iso8601(p.timestamp)},
                       {"t_ms", p.timestamp.count()},
                       {"lesion_box", p.lesion_box ? json(*p.lesion_box) : json(nullptr)}};
                send_json(res, 200, j);
            } catch (const NotFoundError& e) {
                send_error(res, 404, "not_found", e.what());
            }
        });
    }
};

HttpService::HttpService(TelemetryCloud& cloud, std::function<SimTime()> clock, SimEpoch epoch)
    : impl_(std::make_unique<Impl>(cloud, std::move(clock), epoch)) {}

HttpService::~HttpService() { stop(); }

int HttpService::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpService::bind(const std::string& host, int port) {
    return impl_->server.bind_to_port(host, port);
}

bool HttpService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpService::stop() {
    if (impl_) impl_->server.stop();
}

void HttpService::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::function<SimTime()> steady_clock_since_now() {
    const auto start = std::chrono::steady_clock::now();
    return [start] {
        return std::chrono::duration_cast<SimTime>(std::chrono::steady_clock::now() - start);
    };
}

struct HttpCloudClient::Impl {
    httplib::Client client;
    Impl(const std::string& host, int port) : client(host, port) {
        client.set_connection_timeout(2);
        client.set_read_timeout(5);
    }
};

HttpCloudClient::HttpCloudClient(const std::string& host, int port, std::string telemetry_channel,
                                 std::string events_channel, std::string write_key)
    : impl_(std::make_unique<Impl>(host, port)),
      telemetry_channel_(std::move(telemetry_channel)),
      events_channel_(std::move(events_channel)),
      write_key_(std::move(write_key)) {}

HttpCloudClient::~HttpCloudClient() = default;

std::optional<CropProfile> HttpCloudClient::read_threshold(SimTime) {
    auto res = impl_->client.Get("/crops/threshold");
    if (!res || res->status != 200) return std::nullopt;
    const json body = json::parse(res->body, nullptr, false);
    if (!body.is_object()) return std::nullopt;
    try {
        return CropProfile{body.at("crop_name").get<std::string>(), body.at("threshold_sm").get<double>(),
                           body.at("release_sm").get<double>()};
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

WriteStatus HttpCloudClient::post_update(const std::string& channel, const FieldValues& fields,
                                         bool stale, const std::string& status) {
    json body{{"write_key", write_key_}, {"stale", stale}};
    for (std::size_t i = 0; i < kFieldCount; ++i) {
        if (fields[i]) body["field" + std::to_string(i + 1)] = *fields[i];
    }
    if (!status.empty()) body["status"] = status;
    auto res = impl_->client.Post("/channels/" + channel + "/update", body.dump(), "application/json");
    if (!res) return WriteStatus::NotFound;
    switch (res->status) {
        case 200: return WriteStatus::Accepted;
        case 429: return WriteStatus::RateLimited;
        case 401: return WriteStatus::Unauthorized;
        default: return WriteStatus::NotFound;
    }
}

WriteStatus HttpCloudClient::push_telemetry(const FieldValues& fields, bool stale, SimTime) {
    return post_update(telemetry_channel_, fields, stale, {});
}

WriteStatus HttpCloudClient::push_event(const irrigation::IrrigationEvent& event, SimTime) {
    FieldValues fields{};
    fields[kFieldEventAction] = event.action == irrigation::PumpAction::PumpOn ? 1.0 : 0.0;
    fields[kFieldEventMoisture] = event.sm_at_event;
    return post_update(events_channel_, fields, false, event.timestamp);
}

}  // namespace scrop::cloud
