#include "scrop/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scrop::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void shape_error(const std::string& what, const Shape& got) {
    throw std::invalid_argument(what + " (got " + shape_string(got) + ")");
}

// Maps output position m and kernel tap j to input row m*stride + sign*j + base.
struct ConvGeometry {
    std::size_t in_h, in_w, in_c, k_h, k_w, out_c, out_h, out_w, stride;
    long sign, base_r, base_c;

    long row(std::size_t m, std::size_t j) const {
        return static_cast<long>(m * stride) + sign * static_cast<long>(j) + base_r;
    }
    long col(std::size_t n, std::size_t k) const {
        return static_cast<long>(n * stride) + sign * static_cast<long>(k) + base_c;
    }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& w, std::size_t stride, Padding padding,
                           ConvMode mode) {
    if (in.size() != 3) shape_error("convolution input must be (H, W, C)", in);
    if (w.size() != 4) shape_error("convolution kernel must be (kh, kw, in, out)", w);
    if (w[2] != in[2]) {
        throw std::invalid_argument("kernel expects " + std::to_string(w[2]) +
                                    " input channels, input has " + std::to_string(in[2]));
    }
    if (stride == 0) throw std::invalid_argument("stride must be positive");
    if (w[0] == 0 || w[1] == 0) shape_error("empty kernel", w);

    ConvGeometry g{};
    g.in_h = in[0];
    g.in_w = in[1];
    g.in_c = in[2];
    g.k_h = w[0];
    g.k_w = w[1];
    g.out_c = w[3];
    g.stride = stride;
    const bool flip = mode == ConvMode::Convolution;
    g.sign = flip ? -1 : 1;
    if (padding == Padding::Valid) {
        if (g.in_h < g.k_h || g.in_w < g.k_w) {
            throw std::invalid_argument("input " + shape_string(in) +
                                        " smaller than kernel under valid padding");
        }
        g.out_h = (g.in_h - g.k_h) / stride + 1;
        g.out_w = (g.in_w - g.k_w) / stride + 1;
        g.base_r = flip ? static_cast<long>(g.k_h) - 1 : 0;
        g.base_c = flip ? static_cast<long>(g.k_w) - 1 : 0;
    } else {
        if (g.k_h % 2 == 0 || g.k_w % 2 == 0) {
            throw std::invalid_argument("same padding needs odd kernel dimensions");
        }
        g.out_h = (g.in_h + stride - 1) / stride;
        g.out_w = (g.in_w + stride - 1) / stride;
        const long ch = static_cast<long>(g.k_h - 1) / 2;
        const long cw = static_cast<long>(g.k_w - 1) / 2;
        g.base_r = flip ? ch : -ch;
        g.base_c = flip ? cw : -cw;
    }
    return g;
}

Tensor conv_core(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding,
                 ConvMode mode) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding, mode);
    Tensor y({g.out_h, g.out_w, g.out_c});
    for (std::size_t m = 0; m < g.out_h; ++m) {
        for (std::size_t n = 0; n < g.out_w; ++n) {
            double* out = &y.at(m, n, 0);
            for (std::size_t j = 0; j < g.k_h; ++j) {
                const long r = g.row(m, j);
                if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
                for (std::size_t k = 0; k < g.k_w; ++k) {
                    const long q = g.col(n, k);
                    if (q < 0 || q >= static_cast<long>(g.in_w)) continue;
                    const double* xin = &x.at(static_cast<std::size_t>(r), static_cast<std::size_t>(q), 0);
                    const double* wk = &w.at(j, k, 0, 0);
                    for (std::size_t c = 0; c < g.in_c; ++c) {
                        const double xv = xin[c];
                        const double* wrow = wk + c * g.out_c;
                        for (std::size_t o = 0; o < g.out_c; ++o) out[o] += wrow[o] * xv;
                    }
                }
            }
        }
    }
    return y;
}

// Accumulates dL/dw into grad_w and returns dL/dx.
Tensor conv_core_backward(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding,
                          ConvMode mode, const Tensor& grad_y, Tensor& grad_w) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding, mode);
    if (grad_y.shape() != Shape{g.out_h, g.out_w, g.out_c}) {
        shape_error("convolution output gradient has the wrong shape", grad_y.shape());
    }
    Tensor grad_x(x.shape());
    for (std::size_t m = 0; m < g.out_h; ++m) {
        for (std::size_t n = 0; n < g.out_w; ++n) {
            const double* gy = &grad_y.at(m, n, 0);
            for (std::size_t j = 0; j < g.k_h; ++j) {
                const long r = g.row(m, j);
                if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
                for (std::size_t k = 0; k < g.k_w; ++k) {
                    const long q = g.col(n, k);
                    if (q < 0 || q >= static_cast<long>(g.in_w)) continue;
                    const auto ru = static_cast<std::size_t>(r);
                    const auto qu = static_cast<std::size_t>(q);
                    const double* xin = &x.at(ru, qu, 0);
                    double* gx = &grad_x.at(ru, qu, 0);
                    const double* wk = &w.at(j, k, 0, 0);
                    double* gwk = &grad_w.at(j, k, 0, 0);
                    for (std::size_t c = 0; c < g.in_c; ++c) {
                        const double* wrow = wk + c * g.out_c;
                        double* gwrow = gwk + c * g.out_c;
                        double acc = 0.0;
                        for (std::size_t o = 0; o < g.out_c; ++o) {
                            gwrow[o] += gy[o] * xin[c];
                            acc += gy[o] * wrow[o];
                        }
                        gx[c] += acc;
                    }
                }
            }
        }
    }
    return grad_x;
}

void add_channel_bias(Tensor& y, const Tensor& bias) {
    const std::size_t channels = y.shape().back();
    if (bias.size() != channels) shape_error("bias does not match channel count", bias.shape());
    auto data = y.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += bias[i % channels];
}

void accumulate_channel_bias(const Tensor& grad_y, Tensor& grad_b) {
    const std::size_t channels = grad_y.shape().back();
    auto data = grad_y.data();
    for (std::size_t i = 0; i < data.size(); ++i) grad_b[i % channels] += data[i];
}

Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_y) {
    Tensor g = grad_y;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(pre_activation[i] > 0.0)) g[i] = 0.0;
    }
    return g;
}

void check_residual(const ResidualBlock& b, const Shape& in) {
    if (in.size() != 3) shape_error("residual block input must be (H, W, C)", in);
    const std::size_t c = in[2];
    for (const Tensor* w : {&b.w1, &b.w2}) {
        const Shape& s = w->shape();
        if (s.size() != 4 || s[2] != c || s[3] != c || s[0] % 2 == 0 || s[1] % 2 == 0) {
            shape_error("residual kernels must be odd (kh, kw, C, C) for C = " + std::to_string(c),
                        s);
        }
    }
    if (b.b1.size() != c || b.b2.size() != c) {
        throw std::invalid_argument("residual biases must have one entry per channel");
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvKernel& kernel) {
    if (input.rank() == 2 && kernel.weights.rank() == 2) {
        const Tensor x = input.reshaped({input.dim(0), input.dim(1), 1});
        const Tensor w = kernel.weights.reshaped({kernel.weights.dim(0), kernel.weights.dim(1), 1, 1});
        const Tensor y = conv_core(x, w, kernel.stride, kernel.padding, kernel.mode);
        return y.reshaped({y.dim(0), y.dim(1)});
    }
    return conv_core(input, kernel.weights, kernel.stride, kernel.padding, kernel.mode);
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = std::max(0.0, v);
    return y;
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1 || logits.size() == 0) {
        shape_error("softmax expects a non-empty vector", logits.shape());
    }
    Tensor p = logits;
    const double peak = *std::max_element(p.data().begin(), p.data().end());
    double total = 0.0;
    for (double& v : p.data()) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : p.data()) v /= total;
    return p;
}

Tensor residual_forward(const Tensor& x, const ResidualBlock& block) {
    check_residual(block, x.shape());
    Tensor a = conv_core(x, block.w1, 1, Padding::Same, block.mode);
    add_channel_bias(a, block.b1);
    Tensor y = conv_core(relu(a), block.w2, 1, Padding::Same, block.mode);
    add_channel_bias(y, block.b2);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    return y;
}

Shape output_shape(const Layer& layer, const Shape& in) {
    return std::visit(
        overloaded{
            [&](const Conv2D& l) -> Shape {
                const auto g = conv_geometry(in, l.kernel.weights.shape(), l.kernel.stride,
                                             l.kernel.padding, l.kernel.mode);
                if (l.bias.size() != g.out_c) shape_error("conv bias size mismatch", l.bias.shape());
                return {g.out_h, g.out_w, g.out_c};
            },
            [&](const MaxPool2D& l) -> Shape {
                if (in.size() != 3) shape_error("max pool input must be (H, W, C)", in);
                if (l.size == 0 || in[0] < l.size || in[1] < l.size) {
                    shape_error("max pool window larger than input", in);
                }
                return {in[0] / l.size, in[1] / l.size, in[2]};
            },
            [&](const ReLU&) -> Shape { return in; },
            [&](const ResidualBlock& l) -> Shape {
                check_residual(l, in);
                return in;
            },
            [&](const Flatten&) -> Shape { return {shape_size(in)}; },
            [&](const Dense& l) -> Shape {
                const Shape& w = l.weights.shape();
                if (in.size() != 1) shape_error("dense input must be a vector", in);
                if (w.size() != 2 || w[1] != in[0]) {
                    shape_error("dense weights must be (out, " + std::to_string(in[0]) + ")", w);
                }
                if (l.bias.size() != w[0]) shape_error("dense bias size mismatch", l.bias.shape());
                return {w[0]};
            },
        },
        layer);
}

Tensor forward(const Layer& layer, const Tensor& x) {
    return std::visit(
        overloaded{
            [&](const Conv2D& l) {
                Tensor y = conv_core(x, l.kernel.weights, l.kernel.stride, l.kernel.padding,
                                     l.kernel.mode);
                add_channel_bias(y, l.bias);
                return y;
            },
            [&](const MaxPool2D& l) {
                const Shape out = output_shape(layer, x.shape());
                Tensor y(out);
                for (std::size_t m = 0; m < out[0]; ++m)
                    for (std::size_t n = 0; n < out[1]; ++n)
                        for (std::size_t c = 0; c < out[2]; ++c) {
                            double best = x.at(m * l.size, n * l.size, c);
                            for (std::size_t i = 0; i < l.size; ++i)
                                for (std::size_t j = 0; j < l.size; ++j)
                                    best = std::max(best, x.at(m * l.size + i, n * l.size + j, c));
                            y.at(m, n, c) = best;
                        }
                return y;
            },
            [&](const ReLU&) { return relu(x); },
            [&](const ResidualBlock& l) { return residual_forward(x, l); },
            [&](const Flatten&) { return x.reshaped({x.size()}); },
            [&](const Dense& l) {
                const Shape out = output_shape(layer, x.shape());
                Tensor y(out);
                const std::size_t in = x.size();
                for (std::size_t o = 0; o < out[0]; ++o) {
                    double acc = l.bias[o];
                    const double* w = &l.weights.at(o, 0);
                    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
                    y[o] = acc;
                }
                return y;
            },
        },
        layer);
}

Tensor backward(const Layer& layer, const Tensor& x, const Tensor& grad_y,
                std::vector<Tensor>& grads) {
    return std::visit(
        overloaded{
            [&](const Conv2D& l) {
                accumulate_channel_bias(grad_y, grads[1]);
                return conv_core_backward(x, l.kernel.weights, l.kernel.stride, l.kernel.padding,
                                          l.kernel.mode, grad_y, grads[0]);
            },
            [&](const MaxPool2D& l) {
                const Shape out = output_shape(layer, x.shape());
                Tensor gx(x.shape());
                for (std::size_t m = 0; m < out[0]; ++m)
                    for (std::size_t n = 0; n < out[1]; ++n)
                        for (std::size_t c = 0; c < out[2]; ++c) {
                            std::size_t bi = m * l.size;
                            std::size_t bj = n * l.size;
                            for (std::size_t i = 0; i < l.size; ++i)
                                for (std::size_t j = 0; j < l.size; ++j)
                                    if (x.at(m * l.size + i, n * l.size + j, c) > x.at(bi, bj, c)) {
                                        bi = m * l.size + i;
                                        bj = n * l.size + j;
                                    }
                            gx.at(bi, bj, c) += grad_y.at(m, n, c);
                        }
                return gx;
            },
            [&](const ReLU&) { return relu_backward(x, grad_y); },
            [&](const ResidualBlock& l) {
                Tensor a = conv_core(x, l.w1, 1, Padding::Same, l.mode);
                add_channel_bias(a, l.b1);
                const Tensor r = relu(a);
                accumulate_channel_bias(grad_y, grads[3]);
                const Tensor grad_r =
                    conv_core_backward(r, l.w2, 1, Padding::Same, l.mode, grad_y, grads[2]);
                const Tensor grad_a = relu_backward(a, grad_r);
                accumulate_channel_bias(grad_a, grads[1]);
                Tensor gx = conv_core_backward(x, l.w1, 1, Padding::Same, l.mode, grad_a, grads[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad_y[i];
                return gx;
            },
            [&](const Flatten&) { return grad_y.reshaped(x.shape()); },
            [&](const Dense& l) {
                const std::size_t out = l.weights.dim(0);
                const std::size_t in = l.weights.dim(1);
                Tensor gx(x.shape());
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = grad_y[o];
                    grads[1][o] += g;
                    if (g == 0.0) continue;
                    const double* w = &l.weights.at(o, 0);
                    double* gw = &grads[0].at(o, 0);
                    for (std::size_t i = 0; i < in; ++i) {
                        gw[i] += g * x[i];
                        gx[i] += g * w[i];
                    }
                }
                return gx;
            },
        },
        layer);
}

std::vector<Tensor*> parameters(Layer& layer) {
    return std::visit(overloaded{
                          [](Conv2D& l) -> std::vector<Tensor*> { return {&l.kernel.weights, &l.bias}; },
                          [](ResidualBlock& l) -> std::vector<Tensor*> {
                              return {&l.w1, &l.b1, &l.w2, &l.b2};
                          },
                          [](Dense& l) -> std::vector<Tensor*> { return {&l.weights, &l.bias}; },
                          [](auto&) -> std::vector<Tensor*> { return {}; },
                      },
                      layer);
}

std::vector<const Tensor*> parameters(const Layer& layer) {
    auto mutable_params = parameters(const_cast<Layer&>(layer));
    return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Tensor> zero_gradients(const Layer& layer) {
    std::vector<Tensor> grads;
    for (const Tensor* p : parameters(layer)) grads.emplace_back(p->shape());
    return grads;
}

}  // namespace scrop::nn
