#pragma once

#include <cstdint>
#include <vector>

#include "ctmr/tensor.hpp"

// Differentiable tensor operations. Every function here records itself on
// the thread's tape when an input needs a gradient. Spatial ops use NCHW.
namespace ctmr {

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Concatenate NCHW tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  float slope = 0.01f;  // leaky_relu only

  static Activation relu() { return {ActivationKind::relu, 0.0f}; }
  static Activation leaky_relu(float slope) { return {ActivationKind::leaky_relu, slope}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.0f}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0f}; }
};

Tensor activation(const Tensor& x, Activation act);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu()); }
inline Tensor leaky_relu(const Tensor& x, float slope) { return activation(x, Activation::leaky_relu(slope)); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh()); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid()); }

/// Inverted dropout: when active, each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). The mask is a pure
/// function of `seed`. Inactive dropout is the identity.
Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, bool active);

// Mean over elements of the numerically stable sigmoid cross-entropy
// t*softplus(-z) + (1-t)*softplus(z). Targets are constants.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// mean |a - b|
Tensor l1_loss(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

struct ConvTranspose2dOptions {
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
};

int conv_output_size(int in, int kernel, int stride, int padding, int dilation = 1);
int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding);

/// input [N,C,H,W], weight [F,C,kh,kw], bias [F] (may be undefined).
/// Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

/// Fractionally strided convolution, the adjoint of conv2d with the same
/// geometry. input [N,C,H,W], weight [C,F,kh,kw], bias [F] (may be undefined).
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        ConvTranspose2dOptions opts = {});

// ---------------------------------------------------------------------------
// Spatial

// Mirror padding that does not repeat the edge row/column.
Tensor reflection_pad2d(const Tensor& input, int pad);

// Per (n, c) plane normalization to zero mean and unit population
// variance. No affine parameters.
Tensor instance_norm2d(const Tensor& input, float eps = 1e-5f);

Tensor avg_pool2d(const Tensor& input, int kernel, int stride);

// Bin i covers [floor(i*H/bins), ceil((i+1)*H/bins)).
Tensor adaptive_avg_pool2d(const Tensor& input, int bins);

// Bilinear resampling, align_corners = false.
Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w);

}  // namespace ctmr
