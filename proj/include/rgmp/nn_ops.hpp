#pragma once

#include <cmath>
#include <vector>

#include "rgmp/tensor.hpp"

namespace rgmp {

// ---- 2-D convolution -------------------------------------------------------

// x (Ci,H,W), w (Co,Ci,k,k), b (Co) -> y (Co,H',W'). Shapes are validated and
// mismatches name the offending axis.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec);

// Accumulates into any of gx/gw/gb that are non-null (shapes must already match
// x/w/b respectively; callers allocate zeroed tensors or reuse Parameter grads).
void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& spec,
                     const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb);

// ---- activations -----------------------------------------------------------

inline double srelu(double v) {
  double r = v > 0.0 ? v : 0.0;
  return r * r;
}
inline double srelu_grad(double v) { return v > 0.0 ? 2.0 * v : 0.0; }

inline double sigmoid(double v) {
  if (v >= 0.0) {
    double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(v);
  return e / (1.0 + e);
}
// derivative expressed through the activation output s = sigmoid(v)
inline double sigmoid_grad_from_out(double s) { return s * (1.0 - s); }

Tensor srelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- bilinear upsample -----------------------------------------------------

// Integer factor >= 1, half-pixel centers, edge-clamped taps (no corner
// alignment, no overshoot: every output is a convex combination of inputs).
Tensor bilinear_upsample(const Tensor& x, int factor);
void bilinear_upsample_backward(const Tensor& gy, int in_h, int in_w, int factor,
                                Tensor* gx);

// ---- 2x2 max-pool (stride 2) -----------------------------------------------

// Even extents required. argmax records the winning corner (0..3, first max on
// ties) per output element so the backward routes deterministically.
Tensor maxpool2(const Tensor& x, std::vector<int>* argmax);
void maxpool2_backward(const Tensor& gy, const std::vector<int>& argmax, Tensor* gx);

// ---- per-channel affine (batch-norm replacement) -----------------------------

Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);
void channel_affine_backward(const Tensor& x, const Tensor& scale, const Tensor& gy,
                             Tensor* gx, Tensor* gscale, Tensor* gshift);

// ---- global average pool / linear ------------------------------------------

Tensor global_avg_pool(const Tensor& x);  // (C,H,W) -> (C)
void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor* gx);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // w (O,I)
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx,
                     Tensor* gw, Tensor* gb);

}  // namespace rgmp
