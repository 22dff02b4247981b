#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scrop/nn/layers.hpp"

namespace scrop::nn {

/// Ordered layer stack ending in exactly three fully connected layers whose
/// last width equals the number of class labels; softmax is applied on top.
struct Model {
    Shape input_shape;
    std::vector<Layer> layers;
    std::vector<std::string> labels;

    /// Throws std::invalid_argument when shapes do not compose, the head is
    /// not three dense layers, or the output width differs from labels.size().
    void validate() const;
    std::size_t parameter_count() const;
};

/// Box in image pixels.
struct BoundingBox {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    std::array<int, 4> as_array() const { return {x, y, width, height}; }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct PredictionResult {
    std::string label;
    std::size_t class_index = 0;
    double confidence = 0.0;
    std::vector<double> probabilities;
    std::optional<BoundingBox> lesion_box;
};

/// Labels starting with "healthy" (any case) are the no-disease class.
bool is_healthy_label(const std::string& label);

/// Output of every layer, in order; the last entry holds the logits.
std::vector<Tensor> activations(const Model& model, const Tensor& input);

Tensor logits(const Model& model, const Tensor& input);

/// Classifies `input` (already preprocessed to the model's input shape).
/// For a diseased label the lesion box is the bounding rectangle of the
/// top-decile cells of the last convolutional feature map, scaled to an
/// image of `image_width` x `image_height` (model input size when zero).
PredictionResult forward(const Model& model, const Tensor& input, int image_width = 0,
                         int image_height = 0);

/// Bounding box of cells at or above the 90th percentile of the channel-summed
/// map, scaled to the given image size.
BoundingBox top_decile_box(const Tensor& feature_map, int image_width, int image_height);

/// Per-layer parameter gradients, aligned with parameters(layer).
using Gradients = std::vector<std::vector<Tensor>>;

Gradients zero_gradients(const Model& model);

/// Softmax cross-entropy of one sample.
double loss(const Model& model, const Tensor& input, std::size_t label);

/// Adds the sample's cross-entropy gradients into `grads`; returns the loss.
double accumulate_gradients(const Model& model, const Tensor& input, std::size_t label,
                            Gradients& grads);

/// Binary weight file: magic "SCRP1", then little-endian
///   u32 label count, per label u32 length + bytes,
///   u32 input rank, u64 dims,
///   u32 layer count, per layer: u8 kind, u8 padding, u8 conv mode, u32 stride
///   (pool size for pooling), u32 tensor count, per tensor u32 rank, u64 dims,
///   row-major f64 values.
std::string serialize_model(const Model& model);
/// Throws std::runtime_error on a malformed file.
Model deserialize_model(const std::string& bytes);

void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace scrop::nn
