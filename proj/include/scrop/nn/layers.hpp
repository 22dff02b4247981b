#pragma once

#include <variant>
#include <vector>

#include "scrop/nn/tensor.hpp"

namespace scrop::nn {

enum class Padding { Valid, Same };

/// Convolution flips the kernel, G[m,n] = sum_j sum_k h[j,k] f[m-j, n-k];
/// CrossCorrelation slides it unflipped.
enum class ConvMode { Convolution, CrossCorrelation };

/// Weights are (kh, kw, in, out), or (kh, kw) for single-channel 2-D use.
struct ConvKernel {
    Tensor weights;
    std::size_t stride = 1;
    Padding padding = Padding::Valid;
    ConvMode mode = ConvMode::Convolution;
};

/// Multi-channel 2-D convolution of an (H, W, C) input, or of an (H, W)
/// input with a (kh, kw) kernel. Throws std::invalid_argument on shape
/// mismatch, even kernels under same padding, or an input smaller than the
/// kernel under valid padding.
Tensor conv2d(const Tensor& input, const ConvKernel& kernel);

Tensor relu(const Tensor& x);

/// Probabilities from a rank-1 logit vector; max-subtracted for stability.
Tensor softmax(const Tensor& logits);

struct Conv2D {
    ConvKernel kernel;
    Tensor bias;  // (out)
};

struct MaxPool2D {
    std::size_t size = 2;
};

struct ReLU {};

/// H(x) = F(x) + x with F(x) = W2 * relu(W1 * x + b1) + b2. W1 and W2 are
/// same-padded, stride-1 (kh, kw, C, C) kernels so F(x) keeps x's shape.
struct ResidualBlock {
    Tensor w1, b1, w2, b2;
    ConvMode mode = ConvMode::Convolution;
};

struct Flatten {};

/// y = W x + b with W (out, in).
struct Dense {
    Tensor weights;
    Tensor bias;
};

using Layer = std::variant<Conv2D, MaxPool2D, ReLU, ResidualBlock, Flatten, Dense>;

/// Throws std::invalid_argument when the input shape does not fit.
Shape output_shape(const Layer& layer, const Shape& input);

Tensor forward(const Layer& layer, const Tensor& input);

Tensor residual_forward(const Tensor& x, const ResidualBlock& block);

/// Backpropagates `grad_output` through `layer` evaluated at `input`.
/// Parameter gradients are added into `param_grads`, which lines up with
/// parameters(layer). Returns the gradient with respect to the input.
Tensor backward(const Layer& layer, const Tensor& input, const Tensor& grad_output,
                std::vector<Tensor>& param_grads);

std::vector<Tensor*> parameters(Layer& layer);
std::vector<const Tensor*> parameters(const Layer& layer);

/// Zero tensors shaped like the layer's parameters.
std::vector<Tensor> zero_gradients(const Layer& layer);

}  // namespace scrop::nn
