#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "scrop/nn/layers.hpp"
#include "scrop/nn/model.hpp"
#include "scrop/nn/training.hpp"
#include "scrop/telemetry.hpp"
#include "support/oracles.hpp"

using namespace scrop;
using namespace scrop::nn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), oracle::uniform(rng, n));
}

// Dense-only model over a length-2 input, used where only the head matters.
Model dense_model(std::uint64_t seed) {
    Model m;
    m.input_shape = {2};
    m.labels = {"healthy", "diseased"};
    m.layers = {Dense{Tensor({8, 2}), Tensor({8})}, ReLU{}, Dense{Tensor({8, 8}), Tensor({8})}, ReLU{},
                Dense{Tensor({2, 8}), Tensor({2})}};
    initialize_weights(m, seed);
    return m;
}

Model forced_logits(double a, double b) {
    Model m = dense_model(1);
    auto& last = std::get<Dense>(m.layers.back());
    last.weights.fill(0.0);
    last.bias = Tensor({2}, {a, b});
    return m;
}

Dataset separable_points(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset d;
    while (d.size() < n) {
        const auto p = oracle::uniform(rng, 2);
        if (std::abs(p[0] - p[1]) < 0.1) continue;
        d.push_back({Tensor({2}, p), p[0] > p[1] ? 1u : 0u});
    }
    return d;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
    std::mt19937_64 rng(1);
    const Tensor f = random_tensor({5, 5}, rng);
    EXPECT_EQ(conv2d(f, {Tensor({1, 1}, {1.0})}), f);
}

TEST(Conv2d, ZeroInputGivesZero) {
    std::mt19937_64 rng(2);
    const Tensor g = conv2d(Tensor({6, 6}), {random_tensor({3, 3}, rng)});
    EXPECT_EQ(g, Tensor({4, 4}));
}

TEST(Conv2d, MatchesBruteForceOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor f = random_tensor({8, 8}, rng);
        const Tensor h = random_tensor({3, 3}, rng);
        const Tensor g = conv2d(f, {h});
        const auto expect = oracle::conv_valid(f.values(), 8, 8, h.values(), 3, 3);
        ASSERT_EQ(g.shape(), (Shape{6, 6}));
        for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_NEAR(g[i], expect[i], 1e-12);
    }
}

TEST(Conv2d, MultiChannelSumsPerChannelOracle) {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({7, 6, 2}, rng);
    const Tensor w = random_tensor({3, 2, 2, 3}, rng);
    const Tensor y = conv2d(x, {w});
    ASSERT_EQ(y.shape(), (Shape{5, 5, 3}));
    for (std::size_t o = 0; o < 3; ++o) {
        std::vector<double> sum(25, 0.0);
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<double> f(42), h(6);
            for (std::size_t i = 0; i < 7; ++i)
                for (std::size_t j = 0; j < 6; ++j) f[i * 6 + j] = x.at(i, j, c);
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 2; ++j) h[i * 2 + j] = w.at(i, j, c, o);
            const auto part = oracle::conv_valid(f, 7, 6, h, 3, 2);
            for (std::size_t i = 0; i < 25; ++i) sum[i] += part[i];
        }
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y.at(i, j, o), sum[i * 5 + j], 1e-12);
    }
}

TEST(Conv2d, CrossCorrelationIsFlippedConvolution) {
    std::mt19937_64 rng(5);
    const Tensor f = random_tensor({6, 6}, rng);
    const Tensor h = random_tensor({3, 3}, rng);
    Tensor flipped({3, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) flipped.at(i, j) = h.at(2 - i, 2 - j);
    const Tensor a = conv2d(f, {h, 1, Padding::Valid, ConvMode::CrossCorrelation});
    const Tensor b = conv2d(f, {flipped});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Conv2d, SamePaddingAndStrideShapes) {
    std::mt19937_64 rng(6);
    const Tensor f = random_tensor({8, 8}, rng);
    const Tensor h = random_tensor({3, 3}, rng);
    EXPECT_EQ(conv2d(f, {h, 1, Padding::Same}).shape(), (Shape{8, 8}));
    EXPECT_EQ(conv2d(f, {h, 2, Padding::Valid}).shape(), (Shape{3, 3}));
    EXPECT_EQ(conv2d(f, {h, 2, Padding::Same}).shape(), (Shape{4, 4}));
    // Same padding equals valid convolution over a zero-bordered input.
    Tensor padded({10, 10});
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) padded.at(i + 1, j + 1) = f.at(i, j);
    const Tensor same = conv2d(f, {h, 1, Padding::Same});
    const Tensor valid = conv2d(padded, {h});
    for (std::size_t i = 0; i < same.size(); ++i) EXPECT_NEAR(same[i], valid[i], 1e-12);
}

TEST(Conv2d, RejectsBadShapes) {
    EXPECT_THROW(conv2d(Tensor({2, 2}), {Tensor({3, 3})}), std::invalid_argument);
    EXPECT_THROW(conv2d(Tensor({4, 4, 2}), {Tensor({3, 3, 3, 1})}), std::invalid_argument);
    EXPECT_THROW(conv2d(Tensor({4, 4}), {Tensor({2, 2}), 1, Padding::Same}), std::invalid_argument);
}

TEST(Relu, Elementwise) {
    const Tensor x({5}, {-2.0, -0.0, 0.5, 3.0, -1e-9});
    const Tensor y = relu(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i] > 0 ? x[i] : 0.0);
}

TEST(Softmax, Properties) {
    const Tensor u = softmax(Tensor({4}, 3.0));
    for (double p : u.values()) EXPECT_NEAR(p, 0.25, 1e-15);
    const Tensor big = softmax(Tensor({3}, {0.0, 1000.0, 1.0}));
    EXPECT_NEAR(big[1], 1.0, 1e-12);
    EXPECT_TRUE(big.all_finite());
    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        const Tensor p = softmax(Tensor({6}, oracle::uniform(rng, 6, -20.0, 20.0)));
        EXPECT_NEAR(std::accumulate(p.values().begin(), p.values().end(), 0.0), 1.0, 1e-12);
    }
}

TEST(Residual, ZeroWeightsAreIdentity) {
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({5, 5, 3}, rng);
    const ResidualBlock zero{Tensor({3, 3, 3, 3}), Tensor({3}), Tensor({3, 3, 3, 3}), Tensor({3})};
    EXPECT_EQ(residual_forward(x, zero), x);
}

TEST(Residual, HandComputedTwoChannel) {
    // x = (1, -2); W1 = [[1, 2], [-1, 0.5]], b1 = (0.5, 3)
    //   W1 x + b1 = (-2.5, 1) -> relu (0, 1)
    // W2 = [[2, -1], [0.5, 4]], b2 = (0.25, -1)
    //   W2 r + b2 = (-0.75, 3); H = (-0.75 + 1, 3 - 2) = (0.25, 1)
    const Tensor x({1, 1, 2}, {1.0, -2.0});
    // Kernel layout (kh, kw, in, out): element [in][out] = W[out][in].
    const Tensor w1({1, 1, 2, 2}, {1.0, -1.0, 2.0, 0.5});
    const Tensor w2({1, 1, 2, 2}, {2.0, 0.5, -1.0, 4.0});
    const ResidualBlock block{w1, Tensor({2}, {0.5, 3.0}), w2, Tensor({2}, {0.25, -1.0})};
    const Tensor h = residual_forward(x, block);
    ASSERT_EQ(h.shape(), x.shape());
    EXPECT_DOUBLE_EQ(h[0], 0.25);
    EXPECT_DOUBLE_EQ(h[1], 1.0);
}

TEST(Residual, LayerGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    Layer layer = ResidualBlock{random_tensor({1, 1, 2, 2}, rng), random_tensor({2}, rng),
                                random_tensor({1, 1, 2, 2}, rng), random_tensor({2}, rng)};
    const Tensor x = random_tensor({3, 3, 2}, rng);
    const Tensor c = random_tensor({3, 3, 2}, rng);
    auto objective = [&](const Layer& l, const Tensor& in) {
        const Tensor y = forward(l, in);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
        return s;
    };
    auto grads = zero_gradients(layer);
    const Tensor gx = backward(layer, x, c, grads);
    const double eps = 1e-6;
    auto params = parameters(layer);
    ASSERT_EQ(params.size(), 4u);
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p]->size(); ++i) {
            const double keep = (*params[p])[i];
            (*params[p])[i] = keep + eps;
            const double up = objective(layer, x);
            (*params[p])[i] = keep - eps;
            const double down = objective(layer, x);
            (*params[p])[i] = keep;
            EXPECT_NEAR(grads[p][i], (up - down) / (2 * eps), 1e-7);
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] += eps;
        xm[i] -= eps;
        EXPECT_NEAR(gx[i], (objective(layer, xp) - objective(layer, xm)) / (2 * eps), 1e-7);
    }
}

TEST(GradCheck, FullModelWithinTolerance) {
    const Model m = make_gradcheck_model(7);
    EXPECT_LE(m.parameter_count(), 1000u);
    const auto data = synthetic_leaf_dataset(m.labels, 1, 3, 6);
    for (const auto& s : data) EXPECT_LE(grad_check(m, s), 1e-4);
}

TEST(GradCheck, OracleErrorGrowsWithEpsilon) {
    const Model m = make_gradcheck_model(11);
    const auto s = synthetic_leaf_dataset(m.labels, 1, 5, 6).back();
    EXPECT_GT(grad_check(m, s, 1e-1), grad_check(m, s, 1e-5));
}

TEST(GradCheck, ZeroHeadGivesZeroUpstreamGradients) {
    Model m = dense_model(3);
    for (auto& layer : m.layers)
        for (Tensor* p : parameters(layer)) p->fill(0.0);
    Gradients g = zero_gradients(m);
    accumulate_gradients(m, Tensor({2}, {0.5, 0.5}), 0, g);
    for (std::size_t l = 0; l + 1 < g.size(); ++l)
        for (const auto& t : g[l])
            for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, DominantLogitWins) {
    const auto r = forward(forced_logits(0.0, 10.0), Tensor({2}, {0.3, 0.1}));
    EXPECT_EQ(r.class_index, 1u);
    EXPECT_EQ(r.label, "diseased");
    EXPECT_GT(r.confidence, 0.99);
}

TEST(Forward, ShiftInvariantArgmax) {
    const Tensor x({2}, {0.3, 0.1});
    const auto a = forward(forced_logits(1.0, 2.5), x);
    const auto b = forward(forced_logits(101.0, 102.5), x);
    EXPECT_EQ(a.class_index, b.class_index);
    EXPECT_NEAR(a.confidence, b.confidence, 1e-12);
}

TEST(Forward, LesionBoxOnlyForDiseased) {
    const Model m = make_leaf_model({"healthy", "early_blight"}, 2);
    const Tensor x = preprocess(sensors::capture_leaf(sensors::SceneLabel::diseased(1), 2));
    auto forced = m;
    auto& last = std::get<Dense>(forced.layers.back());
    last.weights.fill(0.0);
    last.bias = Tensor({2}, {0.0, 5.0});
    const auto sick = forward(forced, x, 640, 480);
    ASSERT_TRUE(sick.lesion_box);
    EXPECT_GE(sick.lesion_box->x, 0);
    EXPECT_GT(sick.lesion_box->width, 0);
    EXPECT_LE(sick.lesion_box->x + sick.lesion_box->width, 640);
    EXPECT_LE(sick.lesion_box->y + sick.lesion_box->height, 480);
    last.bias = Tensor({2}, {5.0, 0.0});
    EXPECT_FALSE(forward(forced, x, 640, 480).lesion_box);
}

TEST(TopDecileBox, CoversHotCells) {
    Tensor map({4, 4, 1});
    map.at(1, 2, 0) = 5.0;
    map.at(2, 2, 0) = 4.0;
    const auto box = top_decile_box(map, 40, 40);
    EXPECT_EQ(box, (BoundingBox{20, 10, 10, 20}));
}

TEST(Model, ValidationRules) {
    Model m = dense_model(1);
    EXPECT_NO_THROW(m.validate());
    m.labels.push_back("third");
    EXPECT_THROW(m.validate(), std::invalid_argument);
    Model two = dense_model(1);
    two.layers.erase(two.layers.begin(), two.layers.begin() + 2);
    two.input_shape = {8};
    EXPECT_THROW(two.validate(), std::invalid_argument);
}

TEST(Serialization, RoundTrip) {
    const Model m = make_leaf_model({"healthy", "early_blight", "leaf_rust"}, 5);
    const std::string bytes = serialize_model(m);
    EXPECT_EQ(bytes.substr(0, 5), "SCRP1");
    const Model back = deserialize_model(bytes);
    EXPECT_EQ(back.labels, m.labels);
    EXPECT_EQ(back.input_shape, m.input_shape);
    EXPECT_EQ(serialize_model(back), bytes);
    const Tensor x = preprocess(sensors::capture_leaf(sensors::SceneLabel::healthy(), 3));
    EXPECT_EQ(logits(back, x), logits(m, x));
    EXPECT_THROW(deserialize_model("SCRP0"), std::runtime_error);
    EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), std::runtime_error);
}

TEST(Confusion, HandTalliedFixture) {
    // (actual, predicted) pairs, tallied by hand:
    //   actual 0: [2 1 0]   actual 1: [0 3 1]   actual 2: [1 0 2]
    const std::pair<int, int> pairs[] = {{0, 0}, {0, 0}, {0, 1}, {1, 1}, {1, 1},
                                         {1, 1}, {1, 2}, {2, 2}, {2, 0}, {2, 2}};
    ConfusionMatrix cm(3);
    for (auto [a, p] : pairs) cm.add(a, p);
    const std::uint64_t expect[3][3] = {{2, 1, 0}, {0, 3, 1}, {1, 0, 2}};
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(cm.at(a, p), expect[a][p]);
    EXPECT_EQ(cm.row_sum(0), 3u);
    EXPECT_EQ(cm.row_sum(1), 4u);
    EXPECT_EQ(cm.row_sum(2), 3u);
    EXPECT_EQ(cm.trace(), 7u);
    EXPECT_EQ(cm.total(), 10u);
    EXPECT_EQ(cm.accuracy(), 0.7);
    EXPECT_THROW(cm.add(3, 0), std::out_of_range);
}

TEST(Evaluate, PerfectAndConstantPredictors) {
    Dataset balanced;
    for (int i = 0; i < 10; ++i) balanced.push_back({Tensor({2}, {0.1 * i, 0.0}), static_cast<std::size_t>(i % 2)});
    const auto constant = evaluate(forced_logits(0.0, 10.0), balanced);
    EXPECT_EQ(constant.accuracy, 0.5);
    EXPECT_EQ(constant.matrix.at(0, 1), 5u);

    // x0 - x1 decides the class exactly.
    Model perfect = dense_model(1);
    auto& d0 = std::get<Dense>(perfect.layers[0]);
    d0.weights.fill(0.0);
    d0.bias.fill(0.0);
    d0.weights.at(0, 0) = 1.0;
    d0.weights.at(0, 1) = -1.0;
    d0.weights.at(1, 0) = -1.0;
    d0.weights.at(1, 1) = 1.0;
    auto& d1 = std::get<Dense>(perfect.layers[2]);
    d1.weights.fill(0.0);
    d1.bias.fill(0.0);
    d1.weights.at(0, 0) = 1.0;
    d1.weights.at(1, 1) = 1.0;
    auto& d2 = std::get<Dense>(perfect.layers[4]);
    d2.weights.fill(0.0);
    d2.bias.fill(0.0);
    d2.weights.at(0, 1) = 100.0;
    d2.weights.at(1, 0) = 100.0;
    const auto pts = separable_points(50, 2);
    const auto e = evaluate(perfect, pts);
    EXPECT_EQ(e.accuracy, 1.0);
    EXPECT_EQ(e.matrix.at(0, 1) + e.matrix.at(1, 0), 0u);
}

TEST(Train, SeparableToySetConverges) {
    const auto data = separable_points(200, 3);
    const auto r = train(dense_model(4), data, {60, 0.05, 4});
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
    EXPECT_GE(evaluate(r.model, data).accuracy, 0.99);
}

TEST(Train, ZeroEpochsAndDeterminism) {
    const auto data = separable_points(40, 5);
    const Model m = dense_model(6);
    const auto none = train(m, data, {0, 0.05, 1});
    EXPECT_EQ(serialize_model(none.model), serialize_model(m));
    EXPECT_TRUE(none.loss_trace.empty());
    const auto a = train(m, data, {5, 0.05, 9});
    const auto b = train(m, data, {5, 0.05, 9});
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    EXPECT_THROW(train(m, {}, {}), std::invalid_argument);
}

TEST(Split, StratifiedFractions) {
    const auto data = synthetic_leaf_dataset({"healthy", "early_blight"}, 10, 1, 8);
    for (double frac : {0.8, 0.6, 0.4, 0.2}) {
        const auto s = split_dataset(data, frac, 3);
        EXPECT_EQ(s.train.size(), static_cast<std::size_t>(std::lround(20 * frac)));
        EXPECT_EQ(s.train.size() + s.validation.size(), 20u);
        const auto ones = std::count_if(s.train.begin(), s.train.end(), [](const Sample& x) { return x.label == 1; });
        EXPECT_EQ(static_cast<std::size_t>(ones), s.train.size() / 2);
    }
    EXPECT_THROW(split_dataset(data, 1.0, 1), std::invalid_argument);
}

TEST(Preprocess, DownscalesToUnitRange) {
    const auto img = sensors::capture_leaf(sensors::SceneLabel::healthy(), 1);
    const Tensor t = preprocess(img, 16);
    EXPECT_EQ(t.shape(), (Shape{16, 16, 1}));
    for (double v : t.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(preprocess(sensors::capture_leaf(sensors::SceneLabel::healthy(), 1, 1), 16).shape(), t.shape());
}

TEST(PredictPipeline, ScheduleCounts) {
    using namespace std::chrono_literals;
    const Model m = make_leaf_model({"healthy", "early_blight"}, 1, 16);
    cloud::TelemetryCloud store;
    EXPECT_TRUE(predict_pipeline(store, m, "n1", 24h, 0h, 72h).empty());
    const auto img = store.put_image("n1", sensors::encode_pnm(sensors::capture_leaf({}, 1)), 0h);
    const auto one = predict_pipeline(store, m, "n1", 24h, 0h, 24h);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].image_id, img);
    const auto three = predict_pipeline(store, m, "n1", 24h, 24h, 96h);
    EXPECT_EQ(three.size(), 3u);
    EXPECT_EQ(store.get_latest_prediction("n1").id, three.back().id);
}
