#include "rgmp/rope.hpp"

#include <cmath>
#include <string>

#include "rgmp/errors.hpp"

namespace rgmp {

double RopeTable::angle(int h, int w, int j) const {
  const double theta = std::pow(10000.0, -2.0 * j / C);
  return theta * h + theta * w;
}

RopeTable build_rope_table(int H, int W, int C) {
  if (H <= 0 || W <= 0) throw ValidationError("rope grid extents must be positive");
  if (C <= 0 || C % 2 != 0) {
    throw ValidationError("rope channel count must be positive and even, got " +
                          std::to_string(C));
  }
  RopeTable t;
  t.H = H;
  t.W = W;
  t.C = C;
  const int J = C / 2;
  t.cosv.resize(static_cast<std::size_t>(H) * W * J);
  t.sinv.resize(static_cast<std::size_t>(H) * W * J);
  for (int j = 0; j < J; ++j) {
    const double theta = std::pow(10000.0, -2.0 * j / C);
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const double a = theta * (h + w);
        t.cosv[t.idx(h, w, j)] = std::cos(a);
        t.sinv[t.idx(h, w, j)] = std::sin(a);
      }
    }
  }
  return t;
}

namespace {

Tensor rotate(const Tensor& x, const RopeTable& t, double sin_sign) {
  if (x.rank() != 3 || x.dim(0) != t.C || x.dim(1) != t.H || x.dim(2) != t.W) {
    throw ValidationError("rope input " + x.shape_str() + " does not match table (" +
                          std::to_string(t.C) + "," + std::to_string(t.H) + "," +
                          std::to_string(t.W) + ")");
  }
  Tensor y(x.shape());
  const int J = t.C / 2;
  const std::size_t plane = static_cast<std::size_t>(t.H) * t.W;
  for (int j = 0; j < J; ++j) {
    const double* xa = x.data() + static_cast<std::size_t>(2 * j) * plane;
    const double* xb = x.data() + static_cast<std::size_t>(2 * j + 1) * plane;
    double* ya = y.data() + static_cast<std::size_t>(2 * j) * plane;
    double* yb = y.data() + static_cast<std::size_t>(2 * j + 1) * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const double c = t.cosv[p * J + j];
      const double s = sin_sign * t.sinv[p * J + j];
      ya[p] = c * xa[p] - s * xb[p];
      yb[p] = s * xa[p] + c * xb[p];
    }
  }
  return y;
}

}  // namespace

Tensor apply_rope(const Tensor& x, const RopeTable& t) { return rotate(x, t, 1.0); }

Tensor apply_rope_backward(const Tensor& gy, const RopeTable& t) {
  return rotate(gy, t, -1.0);
}

}  // namespace rgmp
