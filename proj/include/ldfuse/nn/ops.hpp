#pragma once

#include <span>

#include "ldfuse/nn/autograd.hpp"

namespace ldfuse::nn {

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// Pointwise nonlinearities.
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var log(const Var& x);
Var exp(const Var& x);
Var abs(const Var& x);  // subgradient 0 at 0
Var square(const Var& x);

// Elementwise max; exact ties route the gradient to `a`.
Var maximum(const Var& a, const Var& b);

// x (C,H,W) + b (C,1,1) broadcast over space.
Var add_channel_bias(const Var& x, const Var& bias);

// out[c] = (1 + scale[c]) * x[c] + shift[c]. A shift of exactly zero is not
// added, so zero parameters reproduce x bit for bit.
Var channel_affine(const Var& x, const Var& scale, const Var& shift);

// 2-D convolution, stride 1, zero padding `pad`. weight is (out, in, k*k)
// with square k; bias is (out, 1, 1).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad);

// 2x2 mean pooling (H, W must be even) and nearest-neighbour upsampling.
Var avg_pool2(const Var& x);
Var upsample_nearest(const Var& x, int factor);

Var concat(std::span<const Var> parts);
Var slice_channels(const Var& x, int first, int count);
// Replicate a 1-channel map into `channels` channels.
Var repeat_channels(const Var& x, int channels);

// y = W x + b for vectors (n, 1, 1); W is (out, in, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var sum(const Var& x);
Var mean(const Var& x);

// Per-channel 3x3 Sobel gradient magnitude sqrt(gx^2 + gy^2), replicate
// border. The subgradient at zero magnitude is zero.
Var sobel_magnitude(const Var& x);

// BT.601 luma of a 3-channel map.
Var luminance(const Var& rgb);

}  // namespace ldfuse::nn
