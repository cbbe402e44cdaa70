#pragma once

#include <vector>

#include "rgmp/tensor.hpp"

namespace rgmp {

// 2-D rotary table over an HxW grid for an even channel count C. Channel pairs
// (2j, 2j+1) rotate by angle(h,w,j) = theta_j*h + theta_j*w with
// theta_j = 10000^(-2j/C), j in [0, C/2).
struct RopeTable {
  int H = 0, W = 0, C = 0;
  std::vector<double> cosv, sinv;  // H*W*(C/2), position-major

  std::size_t idx(int h, int w, int j) const {
    return (static_cast<std::size_t>(h) * W + w) * (C / 2) + j;
  }
  double angle(int h, int w, int j) const;  // recomputed from the formula
};

RopeTable build_rope_table(int H, int W, int C);

// x (C,H,W) -> same shape; rotation is norm-preserving per position.
Tensor apply_rope(const Tensor& x, const RopeTable& t);

// Gradient of apply_rope: rotate by the negated angles (the transpose).
Tensor apply_rope_backward(const Tensor& gy, const RopeTable& t);

}  // namespace rgmp
