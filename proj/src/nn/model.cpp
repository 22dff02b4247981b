#include "scrop/nn/model.hpp"

#include <algorithm>
#include <functional>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace scrop::nn {

namespace {

constexpr std::string_view kMagic = "SCRP1";

enum class LayerKind : std::uint8_t {
    Conv2D = 1,
    MaxPool2D = 2,
    ReLU = 3,
    ResidualBlock = 4,
    Flatten = 5,
    Dense = 6,
};

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    template <typename T>
    void le(T value) {
        std::make_unsigned_t<T> u;
        std::memcpy(&u, &value, sizeof u);
        for (std::size_t i = 0; i < sizeof u; ++i) out_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void tensor(const Tensor& t) {
        le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) le<std::uint64_t>(d);
        for (double v : t.data()) f64(v);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}
    template <typename T>
    T le() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof u; ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in_[pos_ + i]))
                 << (8 * i);
        }
        pos_ += sizeof u;
        T value;
        std::memcpy(&value, &u, sizeof value);
        return value;
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        const auto rank = le<std::uint32_t>();
        if (rank > 8) throw std::runtime_error("model file: tensor rank too large");
        Shape shape(rank);
        for (auto& d : shape) d = le<std::uint64_t>();
        const std::size_t count = shape_size(shape);
        if (count > (in_.size() - pos_) / 8) throw std::runtime_error("model file: truncated tensor");
        std::vector<double> data(count);
        for (double& v : data) v = f64();
        return Tensor(std::move(shape), std::move(data));
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw std::runtime_error("model file: unexpected end of data");
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const Tensor* last_feature_map(const Model& model, const std::vector<Tensor>& acts) {
    const Tensor* map = nullptr;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& l = model.layers[i];
        if (std::holds_alternative<Conv2D>(l) || std::holds_alternative<ResidualBlock>(l)) {
            map = &acts[i];
        }
    }
    return map;
}

}  // namespace

void Model::validate() const {
    if (labels.empty()) throw std::invalid_argument("model has no class labels");
    Shape shape = input_shape;
    std::size_t dense_seen = 0;
    for (const Layer& layer : layers) {
        const bool head_layer = std::holds_alternative<Dense>(layer) || std::holds_alternative<ReLU>(layer);
        if (dense_seen > 0 && !head_layer) {
            throw std::invalid_argument("only dense and relu layers may follow the first dense layer");
        }
        if (std::holds_alternative<Dense>(layer)) ++dense_seen;
        shape = output_shape(layer, shape);
    }
    if (dense_seen != 3) {
        throw std::invalid_argument("model head must have exactly three fully connected layers, found " +
                                    std::to_string(dense_seen));
    }
    if (!std::holds_alternative<Dense>(layers.back())) {
        throw std::invalid_argument("model must end in a fully connected layer");
    }
    if (shape != Shape{labels.size()}) {
        throw std::invalid_argument("model output " + shape_string(shape) + " does not match " +
                                    std::to_string(labels.size()) + " labels");
    }
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers)
        for (const Tensor* p : parameters(l)) n += p->size();
    return n;
}

bool is_healthy_label(const std::string& label) {
    constexpr std::string_view prefix = "healthy";
    if (label.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(label[i])) != prefix[i]) return false;
    }
    return true;
}

std::vector<Tensor> activations(const Model& model, const Tensor& input) {
    if (input.shape() != model.input_shape) {
        throw std::invalid_argument("input " + shape_string(input.shape()) +
                                    " does not match model input " + shape_string(model.input_shape));
    }
    std::vector<Tensor> acts;
    acts.reserve(model.layers.size());
    const Tensor* x = &input;
    for (const Layer& l : model.layers) {
        acts.push_back(forward(l, *x));
        x = &acts.back();
    }
    return acts;
}

Tensor logits(const Model& model, const Tensor& input) { return activations(model, input).back(); }

BoundingBox top_decile_box(const Tensor& feature_map, int image_width, int image_height) {
    const std::size_t h = feature_map.dim(0);
    const std::size_t w = feature_map.dim(1);
    const std::size_t c = feature_map.rank() == 3 ? feature_map.dim(2) : 1;
    std::vector<double> strength(h * w, 0.0);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t k = 0; k < c; ++k) strength[i] += feature_map[i * c + k];

    // Cutoff is the k-th strongest cell, k = ceil(n / 10). Cells tied with
    // the map minimum never count unless the map is flat.
    std::vector<double> sorted = strength;
    const std::size_t k = std::max<std::size_t>(1, (sorted.size() + 9) / 10);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                     std::greater<>());
    const double cutoff = sorted[k - 1];
    const double floor_value = *std::min_element(strength.begin(), strength.end());
    const bool flat = cutoff <= floor_value && *std::max_element(strength.begin(), strength.end()) <= floor_value;

    std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q)
            if (const double v = strength[r * w + q]; v >= cutoff && (flat || v > floor_value)) {
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, q);
                c1 = std::max(c1, q);
            }
    const double sx = static_cast<double>(image_width) / static_cast<double>(w);
    const double sy = static_cast<double>(image_height) / static_cast<double>(h);
    BoundingBox box;
    box.x = static_cast<int>(std::lround(static_cast<double>(c0) * sx));
    box.y = static_cast<int>(std::lround(static_cast<double>(r0) * sy));
    box.width = static_cast<int>(std::lround(static_cast<double>(c1 + 1) * sx)) - box.x;
    box.height = static_cast<int>(std::lround(static_cast<double>(r1 + 1) * sy)) - box.y;
    return box;
}

PredictionResult forward(const Model& model, const Tensor& input, int image_width,
                         int image_height) {
    const std::vector<Tensor> acts = activations(model, input);
    const Tensor probs = softmax(acts.back());
    PredictionResult result;
    result.probabilities = probs.values();
    const auto best = std::max_element(result.probabilities.begin(), result.probabilities.end());
    result.class_index = static_cast<std::size_t>(best - result.probabilities.begin());
    result.confidence = *best;
    result.label = model.labels[result.class_index];

    if (!is_healthy_label(result.label)) {
        if (const Tensor* map = last_feature_map(model, acts); map && map->rank() == 3) {
            const int w = image_width > 0 ? image_width : static_cast<int>(model.input_shape.at(1));
            const int h = image_height > 0 ? image_height : static_cast<int>(model.input_shape.at(0));
            result.lesion_box = top_decile_box(*map, w, h);
        }
    }
    return result;
}

Gradients zero_gradients(const Model& model) {
    Gradients g;
    g.reserve(model.layers.size());
    for (const Layer& l : model.layers) g.push_back(zero_gradients(l));
    return g;
}

double loss(const Model& model, const Tensor& input, std::size_t label) {
    const Tensor p = softmax(logits(model, input));
    return -std::log(std::max(p[label], 1e-300));
}

double accumulate_gradients(const Model& model, const Tensor& input, std::size_t label,
                            Gradients& grads) {
    if (label >= model.labels.size()) throw std::invalid_argument("label index out of range");
    const std::vector<Tensor> acts = activations(model, input);
    const Tensor p = softmax(acts.back());
    const double sample_loss = -std::log(std::max(p[label], 1e-300));

    Tensor grad = p;
    grad[label] -= 1.0;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const Tensor& in = i == 0 ? input : acts[i - 1];
        grad = backward(model.layers[i], in, grad, grads[i]);
    }
    return sample_loss;
}

std::string serialize_model(const Model& model) {
    Writer w;
    w.bytes(kMagic.data(), kMagic.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.labels.size()));
    for (const auto& label : model.labels) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(label.size()));
        w.bytes(label.data(), label.size());
    }
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.input_shape.size()));
    for (auto d : model.input_shape) w.le<std::uint64_t>(d);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.layers.size()));
    for (const Layer& layer : model.layers) {
        std::visit(overloaded{
                       [&](const Conv2D& l) {
                           w.le(static_cast<std::uint8_t>(LayerKind::Conv2D));
                           w.le(static_cast<std::uint8_t>(l.kernel.padding));
                           w.le(static_cast<std::uint8_t>(l.kernel.mode));
                           w.le(static_cast<std::uint32_t>(l.kernel.stride));
                       },
                       [&](const MaxPool2D& l) {
                           w.le(static_cast<std::uint8_t>(LayerKind::MaxPool2D));
                           w.le(std::uint8_t{0});
                           w.le(std::uint8_t{0});
                           w.le(static_cast<std::uint32_t>(l.size));
                       },
                       [&](const ReLU&) {
                           w.le(static_cast<std::uint8_t>(LayerKind::ReLU));
                           w.le(std::uint8_t{0});
                           w.le(std::uint8_t{0});
                           w.le(std::uint32_t{0});
                       },
                       [&](const ResidualBlock& l) {
                           w.le(static_cast<std::uint8_t>(LayerKind::ResidualBlock));
                           w.le(static_cast<std::uint8_t>(Padding::Same));
                           w.le(static_cast<std::uint8_t>(l.mode));
                           w.le(std::uint32_t{1});
                       },
                       [&](const Flatten&) {
                           w.le(static_cast<std::uint8_t>(LayerKind::Flatten));
                           w.le(std::uint8_t{0});
                           w.le(std::uint8_t{0});
                           w.le(std::uint32_t{0});
                       },
                       [&](const Dense&) {
                           w.le(static_cast<std::uint8_t>(LayerKind::Dense));
                           w.le(std::uint8_t{0});
                           w.le(std::uint8_t{0});
                           w.le(std::uint32_t{0});
                       },
                   },
                   layer);
        const auto params = parameters(layer);
        w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
        for (const Tensor* p : params) w.tensor(*p);
    }
    return w.take();
}

Model deserialize_model(const std::string& bytes) {
    Reader r(bytes);
    if (r.str(kMagic.size()) != kMagic) throw std::runtime_error("model file: bad magic");
    Model model;
    const auto label_count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < label_count; ++i) model.labels.push_back(r.str(r.le<std::uint32_t>()));
    model.input_shape.resize(r.le<std::uint32_t>());
    for (auto& d : model.input_shape) d = r.le<std::uint64_t>();
    const auto layer_count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const auto kind = static_cast<LayerKind>(r.le<std::uint8_t>());
        const auto padding = r.le<std::uint8_t>();
        const auto mode = r.le<std::uint8_t>();
        const auto stride = r.le<std::uint32_t>();
        if (padding > 1 || mode > 1) throw std::runtime_error("model file: bad layer options");
        const auto tensor_count = r.le<std::uint32_t>();
        std::vector<Tensor> tensors;
        for (std::uint32_t t = 0; t < tensor_count && t < 4; ++t) tensors.push_back(r.tensor());
        auto expect = [&](std::size_t n) {
            if (tensors.size() != n || tensor_count != n) {
                throw std::runtime_error("model file: wrong tensor count for layer");
            }
        };
        switch (kind) {
            case LayerKind::Conv2D:
                expect(2);
                model.layers.emplace_back(Conv2D{{std::move(tensors[0]), stride,
                                                  static_cast<Padding>(padding),
                                                  static_cast<ConvMode>(mode)},
                                                 std::move(tensors[1])});
                break;
            case LayerKind::MaxPool2D:
                expect(0);
                model.layers.emplace_back(MaxPool2D{stride});
                break;
            case LayerKind::ReLU:
                expect(0);
                model.layers.emplace_back(ReLU{});
                break;
            case LayerKind::ResidualBlock:
                expect(4);
                model.layers.emplace_back(ResidualBlock{std::move(tensors[0]), std::move(tensors[1]),
                                                        std::move(tensors[2]), std::move(tensors[3]),
                                                        static_cast<ConvMode>(mode)});
                break;
            case LayerKind::Flatten:
                expect(0);
                model.layers.emplace_back(Flatten{});
                break;
            case LayerKind::Dense:
                expect(2);
                model.layers.emplace_back(Dense{std::move(tensors[0]), std::move(tensors[1])});
                break;
            default:
                throw std::runtime_error("model file: unknown layer kind");
        }
    }
    if (!r.done()) throw std::runtime_error("model file: trailing bytes");
    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("model file: ") + e.what());
    }
    return model;
}

void save_model(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write weights to " + path);
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open weights " + path);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_model(bytes);
}

}  // namespace scrop::nn
