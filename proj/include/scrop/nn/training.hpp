#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scrop/clock.hpp"
#include "scrop/leaf_image.hpp"
#include "scrop/nn/model.hpp"

namespace scrop::cloud {
class TelemetryCloud;
struct PredictionRecord;
}  // namespace scrop::cloud

namespace scrop::nn {

struct Sample {
    Tensor input;
    std::size_t label = 0;
};

using Dataset = std::vector<Sample>;

/// Grayscale, box-downscaled to side x side, normalised to [0, 1].
/// Output shape (side, side, 1).
Tensor preprocess(const sensors::LeafImage& image, std::size_t side = 32);

/// Glorot-uniform weights, zero biases, seeded.
void initialize_weights(Model& model, std::uint64_t seed);

/// Two 3x3 same-padded conv + 2x2 max-pool blocks, one residual block and a
/// three-layer fully connected head over (side, side, 1) inputs.
Model make_leaf_model(std::vector<std::string> labels, std::uint64_t seed, std::size_t side = 32);

/// Small model with one of every layer type (conv, pool, relu, residual,
/// flatten, dense) and under 1000 parameters, for gradient checking.
Model make_gradcheck_model(std::uint64_t seed);

struct DatasetSplit {
    Dataset train;
    Dataset validation;
};

/// Stratified, seeded split; train_fraction in (0, 1).
DatasetSplit split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed);

struct TrainConfig {
    std::size_t epochs = 12;
    double learning_rate = 0.02;
    std::uint64_t seed = 1;
    double clip_norm = 1.0;  // per-sample gradient L2 cap; <= 0 disables
};

struct TrainResult {
    Model model;
    std::vector<double> loss_trace;  // mean training loss per epoch
};

/// Per-sample SGD with gradient-norm clipping over a seeded shuffle. Throws std::invalid_argument
/// on an empty dataset.
TrainResult train(Model model, const Dataset& data, const TrainConfig& config);

/// Max relative error |a - n| / max(|a| + |n|, 1e-6) between backprop and
/// central differences over every parameter.
double grad_check(const Model& model, const Sample& sample, double epsilon = 1e-5);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes);

    /// Throws std::out_of_range for an unknown class index.
    void add(std::size_t actual, std::size_t predicted);

    std::size_t classes() const noexcept { return classes_; }
    std::uint64_t at(std::size_t actual, std::size_t predicted) const;
    std::uint64_t row_sum(std::size_t actual) const;
    std::uint64_t trace() const;
    std::uint64_t total() const;
    double accuracy() const;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct Evaluation {
    ConfusionMatrix matrix;
    double accuracy = 0.0;
};

Evaluation evaluate(const Model& model, const Dataset& test_set);

/// Renders `per_class` captures for every label. Labels map to scenes in
/// order: a label starting with "healthy" is the healthy scene, the others
/// take disease class ids 1, 2, ... in order of appearance.
Dataset synthetic_leaf_dataset(const std::vector<std::string>& labels, std::size_t per_class,
                               std::uint64_t seed, std::size_t side = 32);

/// Writes captures as <dir>/<label>/<index>.ppm.
void write_synthetic_dataset(const std::filesystem::path& dir,
                             const std::vector<std::string>& labels, std::size_t per_class,
                             std::uint64_t seed);

/// Reads <dir>/<label>/*.ppm|*.pgm; labels are the sorted subdirectory names.
Dataset load_dataset_dir(const std::filesystem::path& dir, std::vector<std::string>& labels,
                         std::size_t side = 32);

/// Runs one prediction cycle every `period` in [start, end): fetch the node's
/// latest image, preprocess, classify, store the prediction. Cycles without
/// an image are skipped. Returns the stored records.
std::vector<cloud::PredictionRecord> predict_pipeline(cloud::TelemetryCloud& cloud,
                                                      const Model& model,
                                                      const std::string& node_id, SimTime period,
                                                      SimTime start, SimTime end);

}  // namespace scrop::nn
