#include "scrop/nn/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "scrop/telemetry.hpp"

namespace scrop::nn {

namespace fs = std::filesystem;

namespace {

double unit(std::mt19937_64& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

// Fisher-Yates with indices drawn from raw engine bits, so the order does
// not depend on the standard library's distribution implementations.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& engine) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(unit(engine) * static_cast<double>(i));
        std::swap(items[i - 1], items[std::min(j, i - 1)]);
    }
}

void glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& engine) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.data()) v = (2.0 * unit(engine) - 1.0) * s;
}

Conv2D conv(std::size_t in, std::size_t out) {
    return {{Tensor({3, 3, in, out}), 1, Padding::Same, ConvMode::Convolution}, Tensor({out})};
}

ResidualBlock residual(std::size_t channels) {
    return {Tensor({3, 3, channels, channels}), Tensor({channels}),
            Tensor({3, 3, channels, channels}), Tensor({channels}), ConvMode::Convolution};
}

Dense dense(std::size_t in, std::size_t out) { return {Tensor({out, in}), Tensor({out})}; }

std::uint64_t sample_seed(std::uint64_t seed, std::size_t label, std::size_t index) {
    std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + label * 0xBF58476D1CE4E5B9ull + index;
    x ^= x >> 31;
    return x * 0x94D049BB133111EBull;
}

std::vector<sensors::SceneLabel> scenes_for(const std::vector<std::string>& labels) {
    std::vector<sensors::SceneLabel> scenes;
    int next_disease = 1;
    for (const auto& label : labels) {
        if (is_healthy_label(label)) {
            scenes.push_back(sensors::SceneLabel::healthy());
        } else {
            scenes.push_back(sensors::SceneLabel::diseased(next_disease++));
        }
    }
    return scenes;
}

}  // namespace

Tensor preprocess(const sensors::LeafImage& image, std::size_t side) {
    if (image.pixels.size() != image.expected_size() || image.width <= 0 || image.height <= 0) {
        throw std::invalid_argument("image buffer does not match its dimensions");
    }
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("preprocess expects 1 or 3 channels");
    }
    if (side == 0 || static_cast<std::size_t>(image.width) < side ||
        static_cast<std::size_t>(image.height) < side) {
        throw std::invalid_argument("image smaller than model input");
    }
    const auto w = static_cast<std::size_t>(image.width);
    const auto h = static_cast<std::size_t>(image.height);
    const auto ch = static_cast<std::size_t>(image.channels);
    Tensor out({side, side, 1});
    for (std::size_t r = 0; r < side; ++r) {
        const std::size_t y0 = r * h / side;
        const std::size_t y1 = (r + 1) * h / side;
        for (std::size_t c = 0; c < side; ++c) {
            const std::size_t x0 = c * w / side;
            const std::size_t x1 = (c + 1) * w / side;
            double sum = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
                const std::uint8_t* row = &image.pixels[(y * w) * ch];
                for (std::size_t x = x0; x < x1; ++x) {
                    const std::uint8_t* px = row + x * ch;
                    sum += ch == 1 ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                }
            }
            out.at(r, c, 0) = sum / static_cast<double>((y1 - y0) * (x1 - x0)) / 255.0;
        }
    }
    return out;
}

void initialize_weights(Model& model, std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    for (Layer& layer : model.layers) {
        if (auto* c = std::get_if<Conv2D>(&layer)) {
            const Shape& s = c->kernel.weights.shape();
            glorot(c->kernel.weights, s[0] * s[1] * s[2], s[0] * s[1] * s[3], engine);
            c->bias.fill(0.0);
        } else if (auto* r = std::get_if<ResidualBlock>(&layer)) {
            for (Tensor* w : {&r->w1, &r->w2}) {
                const Shape& s = w->shape();
                glorot(*w, s[0] * s[1] * s[2], s[0] * s[1] * s[3], engine);
            }
            r->b1.fill(0.0);
            r->b2.fill(0.0);
        } else if (auto* d = std::get_if<Dense>(&layer)) {
            glorot(d->weights, d->weights.dim(1), d->weights.dim(0), engine);
            d->bias.fill(0.0);
        }
    }
}

Model make_leaf_model(std::vector<std::string> labels, std::uint64_t seed, std::size_t side) {
    if (side < 4 || side % 4 != 0) throw std::invalid_argument("input side must be a multiple of 4");
    Model m;
    m.input_shape = {side, side, 1};
    const std::size_t classes = labels.size();
    m.labels = std::move(labels);
    const std::size_t pooled = side / 4;
    m.layers = {conv(1, 4),     ReLU{},
                MaxPool2D{2},   conv(4, 8),
                ReLU{},         MaxPool2D{2},
                residual(8),    Flatten{},
                dense(pooled * pooled * 8, 32), ReLU{},
                dense(32, 16),  ReLU{},
                dense(16, classes)};
    m.validate();
    initialize_weights(m, seed);
    return m;
}

Model make_gradcheck_model(std::uint64_t seed) {
    Model m;
    m.input_shape = {6, 6, 1};
    m.labels = {"healthy", "diseased"};
    m.layers = {conv(1, 2), ReLU{},       MaxPool2D{2}, residual(2), Flatten{}, dense(18, 6),
                ReLU{},     dense(6, 4), ReLU{},       dense(4, 2)};
    m.validate();
    initialize_weights(m, seed);
    // Non-zero biases so their gradients are exercised away from the origin.
    std::mt19937_64 engine(seed ^ 0xB1A5ull);
    for (Layer& layer : m.layers) {
        const auto params = parameters(layer);
        for (std::size_t i = 1; i < params.size(); i += 2) {
            for (double& v : params[i]->data()) v = 0.2 * (2.0 * unit(engine) - 1.0);
        }
    }
    return m;
}

DatasetSplit split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train fraction must lie strictly between 0 and 1");
    }
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < data.size(); ++i) by_label[data[i].label].push_back(i);

    std::mt19937_64 engine(seed);
    DatasetSplit split;
    for (auto& [label, indices] : by_label) {
        shuffle(indices, engine);
        const auto n_train =
            static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(indices.size())));
        for (std::size_t k = 0; k < indices.size(); ++k) {
            (k < n_train ? split.train : split.validation).push_back(data[indices[k]]);
        }
    }
    return split;
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& config) {
    if (data.empty()) throw std::invalid_argument("cannot train on an empty dataset");
    model.validate();
    TrainResult result;
    std::mt19937_64 engine(config.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradients grads = zero_gradients(model);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, engine);
        double total = 0.0;
        for (std::size_t idx : order) {
            for (auto& layer_grads : grads)
                for (Tensor& g : layer_grads) g.fill(0.0);
            total += accumulate_gradients(model, data[idx].input, data[idx].label, grads);
            double norm2 = 0.0;
            for (const auto& layer_grads : grads)
                for (const Tensor& g : layer_grads)
                    for (double v : g.values()) norm2 += v * v;
            const double norm = std::sqrt(norm2);
            const double scale = config.clip_norm > 0.0 && norm > config.clip_norm
                                     ? config.learning_rate * config.clip_norm / norm
                                     : config.learning_rate;
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                auto params = parameters(model.layers[l]);
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto values = params[p]->data();
                    auto g = grads[l][p].data();
                    for (std::size_t i = 0; i < values.size(); ++i) {
                        values[i] -= scale * g[i];
                    }
                }
            }
        }
        result.loss_trace.push_back(total / static_cast<double>(data.size()));
    }
    result.model = std::move(model);
    return result;
}

double grad_check(const Model& model, const Sample& sample, double epsilon) {
    Gradients analytic = zero_gradients(model);
    accumulate_gradients(model, sample.input, sample.label, analytic);

    Model probe = model;
    double worst = 0.0;
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        auto params = parameters(probe.layers[l]);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto values = params[p]->data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + epsilon;
                const double up = loss(probe, sample.input, sample.label);
                values[i] = saved - epsilon;
                const double down = loss(probe, sample.input, sample.label);
                values[i] = saved;
                const double numeric = (up - down) / (2.0 * epsilon);
                const double a = analytic[l][p][i];
                const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted) {
    if (actual >= classes_ || predicted >= classes_) {
        throw std::out_of_range("class index outside confusion matrix");
    }
    ++counts_[actual * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::at(std::size_t actual, std::size_t predicted) const {
    return counts_.at(actual * classes_ + predicted);
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes_; ++j) s += at(actual, j);
    return s;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < classes_; ++i) s += at(i, i);
    return s;
}

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

double ConfusionMatrix::accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

Evaluation evaluate(const Model& model, const Dataset& test_set) {
    ConfusionMatrix matrix(model.labels.size());
    for (const Sample& s : test_set) matrix.add(s.label, forward(model, s.input).class_index);
    const double accuracy = matrix.accuracy();
    return {std::move(matrix), accuracy};
}

Dataset synthetic_leaf_dataset(const std::vector<std::string>& labels, std::size_t per_class,
                               std::uint64_t seed, std::size_t side) {
    const auto scenes = scenes_for(labels);
    Dataset data;
    data.reserve(labels.size() * per_class);
    for (std::size_t k = 0; k < per_class; ++k) {
        for (std::size_t c = 0; c < labels.size(); ++c) {
            const auto image = sensors::capture_leaf(scenes[c], sample_seed(seed, c, k), 1);
            data.push_back({preprocess(image, side), c});
        }
    }
    return data;
}

void write_synthetic_dataset(const fs::path& dir, const std::vector<std::string>& labels,
                             std::size_t per_class, std::uint64_t seed) {
    const auto scenes = scenes_for(labels);
    for (std::size_t c = 0; c < labels.size(); ++c) {
        fs::create_directories(dir / labels[c]);
        for (std::size_t k = 0; k < per_class; ++k) {
            const auto image = sensors::capture_leaf(scenes[c], sample_seed(seed, c, k), 3);
            sensors::write_pnm_file((dir / labels[c] / (std::to_string(k) + ".ppm")).string(), image);
        }
    }
}

Dataset load_dataset_dir(const fs::path& dir, std::vector<std::string>& labels, std::size_t side) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    labels.clear();
    Dataset data;
    for (const auto& class_dir : class_dirs) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dir)) {
            const auto ext = entry.path().extension();
            if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
        }
        if (files.empty()) continue;
        std::sort(files.begin(), files.end());
        const std::size_t label = labels.size();
        labels.push_back(class_dir.filename().string());
        for (const auto& f : files) {
            data.push_back({preprocess(sensors::read_pnm_file(f.string()), side), label});
        }
    }
    if (data.empty()) throw std::runtime_error("no PGM/PPM images under " + dir.string());
    return data;
}

std::vector<cloud::PredictionRecord> predict_pipeline(cloud::TelemetryCloud& cloud,
                                                      const Model& model,
                                                      const std::string& node_id, SimTime period,
                                                      SimTime start, SimTime end) {
    if (period.count() <= 0) throw std::invalid_argument("prediction period must be positive");
    std::vector<cloud::PredictionRecord> stored;
    for (SimTime t = start; t < end; t += period) {
        try {
            const cloud::ImageRecord image = cloud.get_latest_image(node_id);
            const sensors::LeafImage leaf = sensors::decode_pnm(image.bytes);
            const PredictionResult result =
                forward(model, preprocess(leaf, model.input_shape.at(0)), leaf.width, leaf.height);
            std::optional<std::array<int, 4>> box;
            if (result.lesion_box) box = result.lesion_box->as_array();
            cloud::PredictionRecord rec;
            rec.id = cloud.put_prediction(node_id, result.label, result.confidence, image.id, t, box);
            rec.timestamp = t;
            rec.node_id = node_id;
            rec.label = result.label;
            rec.confidence = result.confidence;
            rec.image_id = image.id;
            rec.lesion_box = box;
            stored.push_back(std::move(rec));
        } catch (const std::exception&) {
            // No image yet or the service failed this cycle; retry next period.
            continue;
        }
    }
    return stored;
}

}  // namespace scrop::nn
