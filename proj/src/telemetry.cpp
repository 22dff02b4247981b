#include "scrop/telemetry.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace scrop::cloud {

namespace fs = std::filesystem;
using nlohmann::json;

struct TelemetryCloud::Channel {
    std::string id;
    std::string write_key;
    mutable std::shared_mutex mutex;
    std::vector<TelemetryRecord> records;
    std::optional<SimTime> last_accepted;
    std::uint64_t rate_limited = 0;
};

namespace {

bool valid_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
}

json fields_to_json(const FieldValues& fields) {
    json out = json::array();
    for (const auto& f : fields) out.push_back(f ? json(*f) : json(nullptr));
    return out;
}

FieldValues fields_from_json(const json& j) {
    FieldValues fields{};
    for (std::size_t i = 0; i < kFieldCount && i < j.size(); ++i) {
        if (!j[i].is_null()) fields[i] = j[i].get<double>();
    }
    return fields;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::vector<json> lines;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        // A torn final line from a crash is dropped.
        auto parsed = json::parse(line, nullptr, false);
        if (!parsed.is_discarded()) lines.push_back(std::move(parsed));
    }
    return lines;
}

}  // namespace

std::string_view to_string(WriteStatus status) {
    switch (status) {
        case WriteStatus::Accepted: return "accepted";
        case WriteStatus::RateLimited: return "rate_limited";
        case WriteStatus::Unauthorized: return "unauthorized";
        case WriteStatus::NotFound: return "not_found";
    }
    return "not_found";
}

std::vector<CropProfile> default_crop_catalogue() {
    return {
        {"default", 30.0, 50.0}, {"tomato", 34.0, 52.0}, {"potato", 28.0, 46.0},
        {"maize", 24.0, 42.0},   {"rice", 45.0, 62.0},   {"wheat", 22.0, 40.0},
    };
}

TelemetryCloud::TelemetryCloud(CloudOptions options) : options_(std::move(options)) {
    const auto& crops = options_.crops;
    if (std::none_of(crops.begin(), crops.end(),
                     [&](const CropProfile& c) { return c.crop_name == options_.default_crop; })) {
        throw std::invalid_argument("default crop '" + options_.default_crop +
                                    "' missing from catalogue");
    }
    for (const auto& c : crops) {
        if (c.threshold_sm < 0.0 || c.release_sm < c.threshold_sm) {
            throw std::invalid_argument("crop '" + c.crop_name + "' has an invalid threshold band");
        }
    }
    active_crop_ = options_.default_crop;
    if (options_.data_dir) {
        fs::create_directories(*options_.data_dir / "channels");
        fs::create_directories(*options_.data_dir / "images");
        replay();
    }
}

TelemetryCloud::~TelemetryCloud() = default;

void TelemetryCloud::append_log(const std::string& file, const std::string& line) const {
    if (!options_.data_dir) return;
    std::lock_guard lock(log_mutex_);
    std::ofstream out(*options_.data_dir / file, std::ios::app);
    out << line << '\n';
}

void TelemetryCloud::replay() {
    const fs::path root = *options_.data_dir;
    std::vector<fs::path> channel_logs;
    for (const auto& entry : fs::directory_iterator(root / "channels")) {
        if (entry.path().extension() == ".jsonl") channel_logs.push_back(entry.path());
    }
    std::sort(channel_logs.begin(), channel_logs.end());
    for (const auto& path : channel_logs) {
        auto ch = std::make_unique<Channel>();
        ch->id = path.stem().string();
        for (const auto& line : read_jsonl(path)) {
            const std::string type = line.value("type", "");
            if (type == "channel") {
                ch->write_key = line.at("write_key").get<std::string>();
            } else if (type == "entry") {
                TelemetryRecord r;
                r.entry_id = line.at("entry_id").get<std::int64_t>();
                r.server_time = SimTime(line.at("t_ms").get<std::int64_t>());
                r.fields = fields_from_json(line.at("fields"));
                r.stale_threshold = line.value("stale", false);
                r.status = line.value("status", "");
                ch->last_accepted = r.server_time;
                ch->records.push_back(std::move(r));
            }
        }
        channels_.emplace(ch->id, std::move(ch));
    }

    for (const auto& line : read_jsonl(root / "registry.jsonl")) {
        const std::string crop = line.value("crop", "");
        const auto& crops = options_.crops;
        if (std::any_of(crops.begin(), crops.end(),
                        [&](const CropProfile& c) { return c.crop_name == crop; })) {
            active_crop_ = crop;
        }
    }

    for (const auto& line : read_jsonl(root / "images.jsonl")) {
        ImageRecord rec;
        rec.id = line.at("id").get<std::int64_t>();
        rec.timestamp = SimTime(line.at("t_ms").get<std::int64_t>());
        rec.node_id = line.at("node").get<std::string>();
        std::ifstream in(root / "images" / (std::to_string(rec.id) + ".pnm"), std::ios::binary);
        if (!in) continue;
        rec.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        images_.push_back(std::move(rec));
    }

    for (const auto& line : read_jsonl(root / "predictions.jsonl")) {
        PredictionRecord rec;
        rec.id = line.at("id").get<std::int64_t>();
        rec.timestamp = SimTime(line.at("t_ms").get<std::int64_t>());
        rec.node_id = line.at("node").get<std::string>();
        rec.label = line.at("label").get<std::string>();
        rec.confidence = line.at("confidence").get<double>();
        rec.image_id = line.at("image_id").get<std::int64_t>();
        if (line.contains("box")) rec.lesion_box = line.at("box").get<std::array<int, 4>>();
        predictions_.push_back(std::move(rec));
    }
}

void TelemetryCloud::create_channel(const std::string& channel_id, const std::string& write_key) {
    if (!valid_id(channel_id)) {
        throw std::invalid_argument("channel id must be 1-64 chars of [A-Za-z0-9_-]");
    }
    std::unique_lock lock(channels_mutex_);
    if (auto it = channels_.find(channel_id); it != channels_.end()) {
        if (it->second->write_key != write_key) {
            throw std::invalid_argument("channel '" + channel_id + "' exists with another key");
        }
        return;
    }
    auto ch = std::make_unique<Channel>();
    ch->id = channel_id;
    ch->write_key = write_key;
    channels_.emplace(channel_id, std::move(ch));
    append_log("channels/" + channel_id + ".jsonl",
               json{{"type", "channel"}, {"write_key", write_key}}.dump());
}

bool TelemetryCloud::has_channel(const std::string& channel_id) const {
    std::shared_lock lock(channels_mutex_);
    return channels_.contains(channel_id);
}

TelemetryCloud::Channel& TelemetryCloud::channel(const std::string& channel_id) const {
    std::shared_lock lock(channels_mutex_);
    auto it = channels_.find(channel_id);
    if (it == channels_.end()) throw NotFoundError("unknown channel '" + channel_id + "'");
    return *it->second;
}

WriteResult TelemetryCloud::channel_write(const std::string& channel_id,
                                          const std::string& write_key, const FieldValues& fields,
                                          SimTime now, bool stale_threshold, std::string status) {
    Channel* ch = nullptr;
    try {
        ch = &channel(channel_id);
    } catch (const NotFoundError&) {
        return {WriteStatus::NotFound, std::nullopt};
    }
    if (write_key != ch->write_key) return {WriteStatus::Unauthorized, std::nullopt};
    if (std::none_of(fields.begin(), fields.end(), [](const auto& f) { return f.has_value(); })) {
        throw std::invalid_argument("a telemetry record needs at least one field");
    }

    std::unique_lock lock(ch->mutex);
    if (ch->last_accepted && now - *ch->last_accepted < options_.min_write_interval) {
        ++ch->rate_limited;
        return {WriteStatus::RateLimited, std::nullopt};
    }
    TelemetryRecord rec;
    rec.entry_id = static_cast<std::int64_t>(ch->records.size()) + 1;
    rec.server_time = now;
    rec.fields = fields;
    rec.stale_threshold = stale_threshold;
    rec.status = std::move(status);
    ch->last_accepted = now;

    append_log("channels/" + channel_id + ".jsonl",
               json{{"type", "entry"},
                    {"entry_id", rec.entry_id},
                    {"t_ms", rec.server_time.count()},
                    {"fields", fields_to_json(rec.fields)},
                    {"stale", rec.stale_threshold},
                    {"status", rec.status}}
                   .dump());
    ch->records.push_back(std::move(rec));
    return {WriteStatus::Accepted, ch->records.back().entry_id};
}

std::vector<TelemetryRecord> TelemetryCloud::channel_feed(const std::string& channel_id,
                                                          std::size_t n, SimTime now) const {
    if (n == 0) throw std::invalid_argument("feed size must be at least 1");
    const Channel& ch = channel(channel_id);
    std::shared_lock lock(ch.mutex);
    const auto visible_end =
        std::upper_bound(ch.records.begin(), ch.records.end(), now,
                         [&](SimTime t, const TelemetryRecord& r) {
                             return t < r.server_time + options_.visibility_delay;
                         });
    const auto count = static_cast<std::size_t>(std::distance(ch.records.begin(), visible_end));
    const auto first = visible_end - static_cast<std::ptrdiff_t>(std::min(n, count));
    return {first, visible_end};
}

std::uint64_t TelemetryCloud::rate_limited_count(const std::string& channel_id) const {
    const Channel& ch = channel(channel_id);
    std::shared_lock lock(ch.mutex);
    return ch.rate_limited;
}

std::uint64_t TelemetryCloud::accepted_count(const std::string& channel_id) const {
    const Channel& ch = channel(channel_id);
    std::shared_lock lock(ch.mutex);
    return ch.records.size();
}

std::vector<CropProfile> TelemetryCloud::crops() const { return options_.crops; }

CropProfile TelemetryCloud::select_crop(const std::string& crop_name) {
    const auto& crops = options_.crops;
    auto it = std::find_if(crops.begin(), crops.end(),
                           [&](const CropProfile& c) { return c.crop_name == crop_name; });
    if (it == crops.end()) throw NotFoundError("unknown crop '" + crop_name + "'");
    std::unique_lock lock(registry_mutex_);
    if (active_crop_ != crop_name) {
        active_crop_ = crop_name;
        append_log("registry.jsonl", json{{"crop", crop_name}}.dump());
    }
    return *it;
}

CropProfile TelemetryCloud::threshold() const {
    std::shared_lock lock(registry_mutex_);
    const auto& crops = options_.crops;
    return *std::find_if(crops.begin(), crops.end(),
                         [&](const CropProfile& c) { return c.crop_name == active_crop_; });
}

std::int64_t TelemetryCloud::put_image(const std::string& node_id, std::string bytes,
                                       SimTime now) {
    if (!valid_id(node_id)) throw std::invalid_argument("invalid node id");
    std::unique_lock lock(media_mutex_);
    ImageRecord rec;
    rec.id = static_cast<std::int64_t>(images_.size()) + 1;
    rec.timestamp = now;
    rec.node_id = node_id;
    rec.bytes = std::move(bytes);
    if (options_.data_dir) {
        std::ofstream out(*options_.data_dir / "images" / (std::to_string(rec.id) + ".pnm"),
                          std::ios::binary);
        out.write(rec.bytes.data(), static_cast<std::streamsize>(rec.bytes.size()));
    }
    append_log("images.jsonl",
               json{{"id", rec.id}, {"t_ms", now.count()}, {"node", node_id}}.dump());
    images_.push_back(std::move(rec));
    return images_.back().id;
}

ImageRecord TelemetryCloud::get_latest_image(const std::string& node_id) const {
    std::shared_lock lock(media_mutex_);
    const ImageRecord* best = nullptr;
    for (const auto& rec : images_) {
        if (rec.node_id == node_id && (!best || rec.timestamp >= best->timestamp)) best = &rec;
    }
    if (!best) throw NotFoundError("no image for node '" + node_id + "'");
    return *best;
}

ImageRecord TelemetryCloud::get_image(std::int64_t image_id) const {
    std::shared_lock lock(media_mutex_);
    if (image_id < 1 || image_id > static_cast<std::int64_t>(images_.size())) {
        throw NotFoundError("unknown image " + std::to_string(image_id));
    }
    return images_[static_cast<std::size_t>(image_id - 1)];
}

std::int64_t TelemetryCloud::put_prediction(const std::string& node_id, const std::string& label,
                                            double confidence, std::int64_t image_id, SimTime now,
                                            std::optional<std::array<int, 4>> lesion_box) {
    if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw std::invalid_argument("confidence must lie in [0, 1]");
    }
    if (label.empty()) throw std::invalid_argument("prediction label is empty");
    std::unique_lock lock(media_mutex_);
    if (image_id < 1 || image_id > static_cast<std::int64_t>(images_.size())) {
        throw std::invalid_argument("prediction references unknown image " +
                                    std::to_string(image_id));
    }
    PredictionRecord rec;
    rec.id = static_cast<std::int64_t>(predictions_.size()) + 1;
    rec.timestamp = now;
    rec.node_id = node_id;
    rec.label = label;
    rec.confidence = confidence;
    rec.image_id = image_id;
    rec.lesion_box = lesion_box;
    json line{{"id", rec.id},         {"t_ms", now.count()},          {"node", node_id},
              {"label", label},       {"confidence", confidence},     {"image_id", image_id}};
    if (lesion_box) line["box"] = *lesion_box;
    append_log("predictions.jsonl", line.dump());
    predictions_.push_back(std::move(rec));
    return predictions_.back().id;
}

PredictionRecord TelemetryCloud::get_latest_prediction(const std::string& node_id) const {
    std::shared_lock lock(media_mutex_);
    const PredictionRecord* best = nullptr;
    for (const auto& rec : predictions_) {
        if (rec.node_id == node_id && (!best || rec.timestamp >= best->timestamp)) best = &rec;
    }
    if (!best) throw NotFoundError("no prediction for node '" + node_id + "'");
    return *best;
}

}  // namespace scrop::cloud
