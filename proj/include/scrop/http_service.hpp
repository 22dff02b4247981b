#pragma once

#include <functional>
#include <memory>
#include <string>

#include "scrop/clock.hpp"
#include "scrop/irrigation.hpp"
#include "scrop/telemetry.hpp"

namespace scrop::cloud {

/// JSON/HTTP front end over a TelemetryCloud.
///
///   POST /channels/{id}/update          {write_key, field1..field8[, status]}
///   GET  /channels/{id}/feed?results=N
///   GET  /crops   POST /crops/select {crop_name}   GET /crops/threshold
///   POST /nodes/{id}/images             PPM/PGM body
///   GET  /nodes/{id}/images/latest
///   POST /nodes/{id}/predictions        {label, confidence, image_id[, lesion_box]}
///   GET  /nodes/{id}/predictions/latest
class HttpService {
public:
    /// `clock` supplies the server time stamped on writes.
    HttpService(TelemetryCloud& cloud, std::function<SimTime()> clock, SimEpoch epoch = {});
    ~HttpService();
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Binds to an ephemeral port and returns it, or -1 on failure.
    int bind_any_port(const std::string& host = "127.0.0.1");
    bool bind(const std::string& host, int port);
    /// Blocks serving requests until stop().
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Wall-clock milliseconds since construction.
std::function<SimTime()> steady_clock_since_now();

/// CloudClient that talks to a running HttpService.
class HttpCloudClient final : public irrigation::CloudClient {
public:
    HttpCloudClient(const std::string& host, int port, std::string telemetry_channel,
                    std::string events_channel, std::string write_key);
    ~HttpCloudClient() override;

    std::optional<CropProfile> read_threshold(SimTime now) override;
    WriteStatus push_telemetry(const FieldValues& fields, bool stale, SimTime now) override;
    WriteStatus push_event(const irrigation::IrrigationEvent& event, SimTime now) override;

private:
    WriteStatus post_update(const std::string& channel, const FieldValues& fields, bool stale,
                            const std::string& status);

    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string telemetry_channel_;
    std::string events_channel_;
    std::string write_key_;
};

}  // namespace scrop::cloud
