#include "rgmp/nn_ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <vector>

#include "rgmp/errors.hpp"

namespace rgmp {

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor* b,
                       const ConvSpec& s) {
  s.validate();
  if (x.rank() != 3) {
    throw ValidationError("conv input must be rank-3 (C,H,W), got " + x.shape_str());
  }
  if (x.dim(0) != s.in_ch) {
    throw ValidationError("conv input axis 0 (channels): expected " +
                          std::to_string(s.in_ch) + ", got " + std::to_string(x.dim(0)));
  }
  if (w.rank() != 4 || w.dim(0) != s.out_ch || w.dim(1) != s.in_ch ||
      w.dim(2) != s.kernel || w.dim(3) != s.kernel) {
    throw ValidationError("conv weight shape mismatch: got " + w.shape_str());
  }
  if (b != nullptr && (b->rank() != 1 || b->dim(0) != s.out_ch)) {
    throw ValidationError("conv bias axis 0: expected " + std::to_string(s.out_ch) +
                          ", got " + b->shape_str());
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;

// Unfold x into a (in_ch*k*k) x (OH*OW) patch matrix whose row order matches the
// weight layout (ci, ky, kx); out-of-image taps are zero.
void im2col(const Tensor& x, const ConvSpec& s, int OH, int OW, std::vector<double>* buf) {
  const int H = x.dim(1), W = x.dim(2);
  const int k = s.kernel, st = s.stride, p = s.pad();
  const std::size_t n = static_cast<std::size_t>(OH) * OW;
  buf->assign(static_cast<std::size_t>(s.in_ch) * k * k * n, 0.0);
  double* out = buf->data();
  for (int ci = 0; ci < s.in_ch; ++ci) {
    const double* xc = x.data() + static_cast<std::size_t>(ci) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = out + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * st + ky - p;
          if (iy < 0 || iy >= H) continue;
          const double* xrow = xc + static_cast<std::size_t>(iy) * W;
          double* orow = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * st + kx - p;
            if (ix >= 0 && ix < W) orow[ox] = xrow[ix];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  check_conv_shapes(x, w, &b, s);
  const int H = x.dim(1), W = x.dim(2);
  const int OH = s.out_extent(H), OW = s.out_extent(W);
  if (OH <= 0 || OW <= 0) {
    throw ValidationError("conv output would be empty for input " + x.shape_str());
  }
  Tensor y({s.out_ch, OH, OW});

  const int r = s.in_ch * s.kernel * s.kernel;
  const std::size_t n = static_cast<std::size_t>(OH) * OW;
  std::vector<double> cols;
  im2col(x, s, OH, OW, &cols);
  MapRowC wm(w.data(), s.out_ch, r);
  MapRowC cm(cols.data(), r, static_cast<Eigen::Index>(n));
  MapRow ym(y.data(), s.out_ch, static_cast<Eigen::Index>(n));
  ym.noalias() = wm * cm;
  for (int co = 0; co < s.out_ch; ++co) ym.row(co).array() += b.at(co);
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& s,
                     const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb) {
  check_conv_shapes(x, w, nullptr, s);
  const int H = x.dim(1), W = x.dim(2);
  const int k = s.kernel, st = s.stride, p = s.pad();
  const int OH = s.out_extent(H), OW = s.out_extent(W);
  if (gy.rank() != 3 || gy.dim(0) != s.out_ch || gy.dim(1) != OH || gy.dim(2) != OW) {
    throw ValidationError("conv grad-output shape mismatch: got " + gy.shape_str());
  }

  const int r = s.in_ch * k * k;
  const std::size_t n = static_cast<std::size_t>(OH) * OW;
  MapRowC gym(gy.data(), s.out_ch, static_cast<Eigen::Index>(n));

  if (gb != nullptr) {
    for (int co = 0; co < s.out_ch; ++co) gb->at(co) += gym.row(co).sum();
  }

  if (gw != nullptr) {
    std::vector<double> cols;
    im2col(x, s, OH, OW, &cols);
    MapRowC cm(cols.data(), r, static_cast<Eigen::Index>(n));
    MapRow gwm(gw->data(), s.out_ch, r);
    gwm.noalias() += gym * cm.transpose();
  }

  if (gx != nullptr) {
    std::vector<double> gcols(static_cast<std::size_t>(r) * n);
    MapRow gcm(gcols.data(), r, static_cast<Eigen::Index>(n));
    MapRowC wm(w.data(), s.out_ch, r);
    gcm.noalias() = wm.transpose() * gym;
    // fold the patch-gradient matrix back onto the (accumulating) input grad
    for (int ci = 0; ci < s.in_ch; ++ci) {
      double* gxc = gx->data() + static_cast<std::size_t>(ci) * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double* row =
              gcols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * st + ky - p;
            if (iy < 0 || iy >= H) continue;
            double* gxrow = gxc + static_cast<std::size_t>(iy) * W;
            const double* grow = row + static_cast<std::size_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * st + kx - p;
              if (ix >= 0 && ix < W) gxrow[ix] += grow[ox];
            }
          }
        }
      }
    }
  }
}

Tensor srelu(const Tensor& x) {
  Tensor y(x.shape());
  const double* xp = x.data();
  double* yp = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) yp[i] = srelu(xp[i]);
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  const double* xp = x.data();
  double* yp = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) yp[i] = sigmoid(xp[i]);
  return y;
}

namespace {

struct Tap {
  int i0, i1;
  double t;  // weight of i1
};

inline Tap bilinear_tap(int o, int factor, int extent) {
  double src = (o + 0.5) / factor - 0.5;
  double fl = std::floor(src);
  Tap tap;
  tap.t = src - fl;
  int i0 = static_cast<int>(fl);
  tap.i0 = std::clamp(i0, 0, extent - 1);
  tap.i1 = std::clamp(i0 + 1, 0, extent - 1);
  return tap;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (x.rank() != 3) {
    throw ValidationError("upsample input must be rank-3 (C,H,W), got " + x.shape_str());
  }
  if (factor < 1) {
    throw ValidationError("upsample factor must be >= 1, got " + std::to_string(factor));
  }
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int OH = H * factor, OW = W * factor;
  Tensor y({C, OH, OW});

  std::vector<Tap> ty(OH), tx(OW);
  for (int oy = 0; oy < OH; ++oy) ty[oy] = bilinear_tap(oy, factor, H);
  for (int ox = 0; ox < OW; ++ox) tx[ox] = bilinear_tap(ox, factor, W);

  for (int c = 0; c < C; ++c) {
    const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
    double* yc = y.data() + static_cast<std::size_t>(c) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      const Tap& a = ty[oy];
      const double* r0 = xc + static_cast<std::size_t>(a.i0) * W;
      const double* r1 = xc + static_cast<std::size_t>(a.i1) * W;
      double* yrow = yc + static_cast<std::size_t>(oy) * OW;
      for (int ox = 0; ox < OW; ++ox) {
        const Tap& bb = tx[ox];
        double top = (1.0 - bb.t) * r0[bb.i0] + bb.t * r0[bb.i1];
        double bot = (1.0 - bb.t) * r1[bb.i0] + bb.t * r1[bb.i1];
        yrow[ox] = (1.0 - a.t) * top + a.t * bot;
      }
    }
  }
  return y;
}

void bilinear_upsample_backward(const Tensor& gy, int in_h, int in_w, int factor,
                                Tensor* gx) {
  const int C = gy.dim(0), OH = gy.dim(1), OW = gy.dim(2);
  if (OH != in_h * factor || OW != in_w * factor) {
    throw ValidationError("upsample grad-output extents do not match factor");
  }
  std::vector<Tap> ty(OH), tx(OW);
  for (int oy = 0; oy < OH; ++oy) ty[oy] = bilinear_tap(oy, factor, in_h);
  for (int ox = 0; ox < OW; ++ox) tx[ox] = bilinear_tap(ox, factor, in_w);

  for (int c = 0; c < C; ++c) {
    const double* gyc = gy.data() + static_cast<std::size_t>(c) * OH * OW;
    double* gxc = gx->data() + static_cast<std::size_t>(c) * in_h * in_w;
    for (int oy = 0; oy < OH; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < OW; ++ox) {
        const Tap& bb = tx[ox];
        const double g = gyc[static_cast<std::size_t>(oy) * OW + ox];
        gxc[static_cast<std::size_t>(a.i0) * in_w + bb.i0] += (1.0 - a.t) * (1.0 - bb.t) * g;
        gxc[static_cast<std::size_t>(a.i0) * in_w + bb.i1] += (1.0 - a.t) * bb.t * g;
        gxc[static_cast<std::size_t>(a.i1) * in_w + bb.i0] += a.t * (1.0 - bb.t) * g;
        gxc[static_cast<std::size_t>(a.i1) * in_w + bb.i1] += a.t * bb.t * g;
      }
    }
  }
}

Tensor maxpool2(const Tensor& x, std::vector<int>* argmax) {
  if (x.rank() != 3) {
    throw ValidationError("maxpool input must be rank-3 (C,H,W), got " + x.shape_str());
  }
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 != 0) {
    throw ValidationError("maxpool axis 1 (height) must be even, got " + std::to_string(H));
  }
  if (W % 2 != 0) {
    throw ValidationError("maxpool axis 2 (width) must be even, got " + std::to_string(W));
  }
  const int OH = H / 2, OW = W / 2;
  Tensor y({C, OH, OW});
  if (argmax != nullptr) argmax->assign(static_cast<std::size_t>(C) * OH * OW, 0);

  for (int c = 0; c < C; ++c) {
    const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
    double* yc = y.data() + static_cast<std::size_t>(c) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const double v00 = xc[static_cast<std::size_t>(2 * oy) * W + 2 * ox];
        const double v01 = xc[static_cast<std::size_t>(2 * oy) * W + 2 * ox + 1];
        const double v10 = xc[static_cast<std::size_t>(2 * oy + 1) * W + 2 * ox];
        const double v11 = xc[static_cast<std::size_t>(2 * oy + 1) * W + 2 * ox + 1];
        int arg = 0;
        double best = v00;
        if (v01 > best) { best = v01; arg = 1; }
        if (v10 > best) { best = v10; arg = 2; }
        if (v11 > best) { best = v11; arg = 3; }
        yc[static_cast<std::size_t>(oy) * OW + ox] = best;
        if (argmax != nullptr) {
          (*argmax)[(static_cast<std::size_t>(c) * OH + oy) * OW + ox] = arg;
        }
      }
    }
  }
  return y;
}

void maxpool2_backward(const Tensor& gy, const std::vector<int>& argmax, Tensor* gx) {
  const int C = gy.dim(0), OH = gy.dim(1), OW = gy.dim(2);
  const int H = gx->dim(1), W = gx->dim(2);
  for (int c = 0; c < C; ++c) {
    const double* gyc = gy.data() + static_cast<std::size_t>(c) * OH * OW;
    double* gxc = gx->data() + static_cast<std::size_t>(c) * H * W;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const int arg = argmax[(static_cast<std::size_t>(c) * OH + oy) * OW + ox];
        const int iy = 2 * oy + (arg >> 1);
        const int ix = 2 * ox + (arg & 1);
        gxc[static_cast<std::size_t>(iy) * W + ix] +=
            gyc[static_cast<std::size_t>(oy) * OW + ox];
      }
    }
  }
}

Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (scale.dim(0) != C || shift.dim(0) != C) {
    throw ValidationError("affine axis 0 (channels): expected " + std::to_string(C));
  }
  Tensor y(x.shape());
  for (int c = 0; c < C; ++c) {
    const double s = scale.at(c), b = shift.at(c);
    const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
    double* yc = y.data() + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < H * W; ++i) yc[i] = s * xc[i] + b;
  }
  return y;
}

void channel_affine_backward(const Tensor& x, const Tensor& scale, const Tensor& gy,
                             Tensor* gx, Tensor* gscale, Tensor* gshift) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  for (int c = 0; c < C; ++c) {
    const double s = scale.at(c);
    const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
    const double* gyc = gy.data() + static_cast<std::size_t>(c) * H * W;
    double ds = 0.0, db = 0.0;
    double* gxc = gx ? gx->data() + static_cast<std::size_t>(c) * H * W : nullptr;
    for (int i = 0; i < H * W; ++i) {
      ds += gyc[i] * xc[i];
      db += gyc[i];
      if (gxc != nullptr) gxc[i] += s * gyc[i];
    }
    if (gscale != nullptr) gscale->at(c) += ds;
    if (gshift != nullptr) gshift->at(c) += db;
  }
}

Tensor global_avg_pool(const Tensor& x) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor y({C});
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int c = 0; c < C; ++c) {
    const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
    double acc = 0.0;
    for (int i = 0; i < H * W; ++i) acc += xc[i];
    y.at(c) = acc * inv;
  }
  return y;
}

void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor* gx) {
  const int C = gy.dim(0);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int c = 0; c < C; ++c) {
    const double g = gy.at(c) * inv;
    double* gxc = gx->data() + static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < h * w; ++i) gxc[i] += g;
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int I = x.dim(0);
  const int O = w.dim(0);
  if (w.rank() != 2 || w.dim(1) != I) {
    throw ValidationError("linear weight axis 1: expected " + std::to_string(I) +
                          ", got " + w.shape_str());
  }
  Tensor y({O});
  for (int o = 0; o < O; ++o) {
    double acc = b.at(o);
    const double* wr = w.data() + static_cast<std::size_t>(o) * I;
    for (int i = 0; i < I; ++i) acc += wr[i] * x.at(i);
    y.at(o) = acc;
  }
  return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx,
                     Tensor* gw, Tensor* gb) {
  const int I = x.dim(0), O = w.dim(0);
  for (int o = 0; o < O; ++o) {
    const double g = gy.at(o);
    if (gb != nullptr) gb->at(o) += g;
    const double* wr = w.data() + static_cast<std::size_t>(o) * I;
    double* gwr = gw ? gw->data() + static_cast<std::size_t>(o) * I : nullptr;
    for (int i = 0; i < I; ++i) {
      if (gwr != nullptr) gwr[i] += g * x.at(i);
      if (gx != nullptr) gx->at(i) += g * wr[i];
    }
  }
}

}  // namespace rgmp
