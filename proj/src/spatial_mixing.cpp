#include "rgmp/spatial_mixing.hpp"

#include <cmath>
#include <string>

#include "rgmp/errors.hpp"
#include "rgmp/nn_ops.hpp"

namespace rgmp {

SpatialBlockParams::SpatialBlockParams(int C, const std::string& prefix)
    : channels(C),
      adm3_w(prefix + ".adm3.w", {C, C, 3, 3}),
      adm3_b(prefix + ".adm3.b", {C}),
      adm1_w(prefix + ".adm1.w", {C, C, 1, 1}),
      adm1_b(prefix + ".adm1.b", {C}),
      key_w(prefix + ".key.w", {C, C, 1, 1}),
      key_b(prefix + ".key.b", {C}),
      val_w(prefix + ".val.w", {C, C, 1, 1}),
      val_b(prefix + ".val.b", {C}),
      rec_w(prefix + ".rec.w", {C, C, 1, 1}),
      rec_b(prefix + ".rec.b", {C}),
      u_raw(prefix + ".u_raw", {C}) {}

std::vector<Parameter*> SpatialBlockParams::params() {
  return {&adm3_w, &adm3_b, &adm1_w, &adm1_b, &key_w, &key_b,
          &val_w,  &val_b,  &rec_w,  &rec_b,  &u_raw};
}

PatchSequence slice_patches(const Tensor& x, int P) {
  if (x.rank() != 3) {
    throw ValidationError("patch slicing expects rank-3 (C,H,W), got " + x.shape_str());
  }
  if (P <= 0) throw ValidationError("patch size must be positive");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % P != 0) {
    throw ValidationError("axis 1 (height " + std::to_string(H) +
                          ") not divisible by patch size " + std::to_string(P));
  }
  if (W % P != 0) {
    throw ValidationError("axis 2 (width " + std::to_string(W) +
                          ") not divisible by patch size " + std::to_string(P));
  }
  PatchSequence s;
  s.C = C;
  s.P = P;
  s.gh = H / P;
  s.gw = W / P;
  s.T = s.gh * s.gw;
  s.D = C * P * P;
  s.v.resize(static_cast<std::size_t>(s.T) * s.D);
  for (int ty = 0; ty < s.gh; ++ty) {
    for (int tx = 0; tx < s.gw; ++tx) {
      const int t = ty * s.gw + tx;
      double* dst = s.v.data() + static_cast<std::size_t>(t) * s.D;
      for (int c = 0; c < C; ++c) {
        const double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
        for (int py = 0; py < P; ++py) {
          const double* row = xc + static_cast<std::size_t>(ty * P + py) * W + tx * P;
          double* drow = dst + (static_cast<std::size_t>(c) * P + py) * P;
          for (int px = 0; px < P; ++px) drow[px] = row[px];
        }
      }
    }
  }
  return s;
}

Tensor unslice_patches(const PatchSequence& s) {
  const int H = s.gh * s.P, W = s.gw * s.P;
  Tensor x({s.C, H, W});
  for (int ty = 0; ty < s.gh; ++ty) {
    for (int tx = 0; tx < s.gw; ++tx) {
      const int t = ty * s.gw + tx;
      const double* src = s.v.data() + static_cast<std::size_t>(t) * s.D;
      for (int c = 0; c < s.C; ++c) {
        double* xc = x.data() + static_cast<std::size_t>(c) * H * W;
        for (int py = 0; py < s.P; ++py) {
          double* row = xc + static_cast<std::size_t>(ty * s.P + py) * W + tx * s.P;
          const double* srow = src + (static_cast<std::size_t>(c) * s.P + py) * s.P;
          for (int px = 0; px < s.P; ++px) row[px] = srow[px];
        }
      }
    }
  }
  return x;
}

namespace {

inline double clamp_den(double x, double eps) {
  if (std::fabs(x) >= eps) return x;
  return x >= 0.0 ? eps : -eps;
}

}  // namespace

WkvTrace wkv_scan(const PatchSequence& k, const PatchSequence& v,
                  const std::vector<double>& w, const std::vector<double>& u,
                  const WkvParams& cfg) {
  if (k.T != v.T || k.D != v.D) {
    throw ValidationError("wkv scan: K and V patch sequences disagree in shape");
  }
  if (k.T < 1) throw ValidationError("wkv scan needs at least one patch");
  const int T = k.T, D = k.D, C = k.C, PP = k.P * k.P;
  const std::size_t wexpect = cfg.decay_mode == DecayMode::PerPatch
                                  ? static_cast<std::size_t>(T) * D
                                  : static_cast<std::size_t>(C);
  if (w.size() != wexpect) {
    throw ValidationError("wkv scan: decay vector has size " + std::to_string(w.size()) +
                          ", expected " + std::to_string(wexpect));
  }
  if (u.size() != static_cast<std::size_t>(C)) {
    throw ValidationError("wkv scan: u vector must have one entry per channel");
  }
  if (cfg.eps <= 0.0) throw ValidationError("wkv scan: eps must be positive");

  WkvTrace tr;
  tr.T = T;
  tr.D = D;
  tr.C = C;
  tr.P = k.P;
  tr.cfg = cfg;
  tr.k = k.v;
  tr.v = v.v;
  tr.eu.resize(C);
  for (int c = 0; c < C; ++c) tr.eu[c] = std::exp(u[c]);
  tr.decay.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) tr.decay[i] = std::exp(-w[i]);

  const std::size_t td = static_cast<std::size_t>(T) * D;
  tr.n.resize(td);
  tr.d.resize(td);
  tr.den_raw.resize(td);
  tr.y.resize(td);

  for (int i = 0; i < T; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * D;
    bool finite = true;
    for (int e = 0; e < D; ++e) {
      const double ke = tr.k[off + e];
      const double ve = tr.v[off + e];
      double ni, di;
      if (i == 0) {
        if (cfg.init == ScanInit::K) {
          ni = ke;
          di = ke;
        } else {
          ni = ke * ve;
          di = ke;
        }
      } else {
        const double a = cfg.decay_mode == DecayMode::PerPatch ? tr.decay[off + e]
                                                               : tr.decay[e / PP];
        ni = tr.n[off - D + e] * a + ke * ve;
        di = tr.d[off - D + e] * a + ke;
      }
      tr.n[off + e] = ni;
      tr.d[off + e] = di;
      const double eu = tr.eu[e / PP];
      const double num = ni + eu * ke * ve;
      const double den = di + eu * ke;
      tr.den_raw[off + e] = den;
      const double yv = num / clamp_den(den, cfg.eps);
      tr.y[off + e] = yv;
      finite = finite && std::isfinite(yv) && std::isfinite(ni) && std::isfinite(di);
    }
    if (!finite) {
      throw NumericalError("wkv scan produced a non-finite value at step " +
                           std::to_string(i));
    }
  }
  return tr;
}

void wkv_scan_backward(const WkvTrace& t, const std::vector<double>& gy,
                       std::vector<double>* gk, std::vector<double>* gv,
                       std::vector<double>* gw, std::vector<double>* gu) {
  const int T = t.T, D = t.D, PP = t.P * t.P;
  const double eps = t.cfg.eps;
  std::vector<double> dn(D, 0.0), dd(D, 0.0);

  for (int i = T - 1; i >= 0; --i) {
    const std::size_t off = static_cast<std::size_t>(i) * D;
    for (int e = 0; e < D; ++e) {
      const int c = e / PP;
      const double eu = t.eu[c];
      const double ke = t.k[off + e];
      const double ve = t.v[off + e];
      // output stage: y = (n_i + eu*k*v) / clamp(d_i + eu*k)
      const double num = t.n[off + e] + eu * ke * ve;
      const double den = t.den_raw[off + e];
      const double dcl = clamp_den(den, eps);
      const double g = gy[off + e];
      const double dnum = g / dcl;
      const double dden = std::fabs(den) >= eps ? -g * num / (dcl * dcl) : 0.0;
      dn[e] += dnum;
      dd[e] += dden;
      (*gu)[c] += (dnum * ke * ve + dden * ke) * eu;
      (*gk)[off + e] += dnum * eu * ve + dden * eu;
      (*gv)[off + e] += dnum * eu * ke;

      if (i >= 1) {
        // recursion: n_i = n_{i-1}*a + k_i*v_i ; d_i = d_{i-1}*a + k_i
        const double a = t.cfg.decay_mode == DecayMode::PerPatch ? t.decay[off + e]
                                                                 : t.decay[c];
        const double da = dn[e] * t.n[off - D + e] + dd[e] * t.d[off - D + e];
        (*gk)[off + e] += dn[e] * ve + dd[e];
        (*gv)[off + e] += dn[e] * ke;
        const double gwv = -a * da;  // through a = exp(-w)
        if (t.cfg.decay_mode == DecayMode::PerPatch) {
          (*gw)[off + e] += gwv;
        } else {
          (*gw)[c] += gwv;
        }
        dn[e] *= a;
        dd[e] *= a;
      } else {
        // step-0 seeding
        if (t.cfg.init == ScanInit::K) {
          (*gk)[e] += dn[e] + dd[e];
        } else {
          (*gk)[e] += dn[e] * ve + dd[e];
          (*gv)[e] += dn[e] * ke;
        }
      }
    }
  }
}

std::vector<double> wkv_unrolled_reference(const PatchSequence& k, const PatchSequence& v,
                                           const std::vector<double>& w,
                                           const std::vector<double>& u,
                                           const WkvParams& cfg) {
  if (k.T != v.T || k.D != v.D) {
    throw ValidationError("wkv reference: K and V patch sequences disagree in shape");
  }
  if (k.T < 1) throw ValidationError("wkv reference needs at least one patch");
  const int T = k.T, D = k.D, C = k.C, PP = k.P * k.P;
  const std::size_t wexpect = cfg.decay_mode == DecayMode::PerPatch
                                  ? static_cast<std::size_t>(T) * D
                                  : static_cast<std::size_t>(C);
  if (w.size() != wexpect || u.size() != static_cast<std::size_t>(C)) {
    throw ValidationError("wkv reference: decay/compensation vector sizes are wrong");
  }
  if (cfg.eps <= 0.0) throw ValidationError("wkv reference: eps must be positive");

  // With a_t the decay factor applied at step t, the accumulators at step i are
  //   N_i = N_0 * prod_{t=1..i} a_t + sum_{j=1..i} k_j v_j * prod_{t=j+1..i} a_t
  // (likewise for the denominator with k_j alone), so each output can be summed
  // from scratch rather than carried forward.
  auto decay_at = [&](int t, int e) {
    const double we = cfg.decay_mode == DecayMode::PerPatch
                          ? w[static_cast<std::size_t>(t) * D + e]
                          : w[static_cast<std::size_t>(e / PP)];
    return std::exp(-we);
  };

  std::vector<double> y(static_cast<std::size_t>(T) * D);
  for (int e = 0; e < D; ++e) {
    const double eu = std::exp(u[static_cast<std::size_t>(e / PP)]);
    for (int i = 0; i < T; ++i) {
      double num, den;
      {
        const double k0 = k.v[e];
        num = cfg.init == ScanInit::K ? k0 : k0 * v.v[e];
        den = k0;
        double tail = 1.0;
        for (int t = 1; t <= i; ++t) tail *= decay_at(t, e);
        num *= tail;
        den *= tail;
      }
      for (int j = 1; j <= i; ++j) {
        double tail = 1.0;
        for (int t = j + 1; t <= i; ++t) tail *= decay_at(t, e);
        const std::size_t je = static_cast<std::size_t>(j) * D + e;
        num += k.v[je] * v.v[je] * tail;
        den += k.v[je] * tail;
      }
      const std::size_t ie = static_cast<std::size_t>(i) * D + e;
      num += eu * k.v[ie] * v.v[ie];
      den += eu * k.v[ie];
      if (std::fabs(den) < cfg.eps) den = den >= 0.0 ? cfg.eps : -cfg.eps;
      y[ie] = num / den;
      if (!std::isfinite(y[ie])) {
        throw NumericalError("wkv reference produced a non-finite value at step " +
                             std::to_string(i));
      }
    }
  }
  return y;
}

Tensor adm_decay(const Tensor& f0, const SpatialBlockParams& p) {
  const int C = p.channels;
  const ConvSpec s3{C, C, 3, 1};
  const ConvSpec s1{C, C, 1, 1};
  Tensor mid = srelu(conv2d(f0, p.adm3_w.value, p.adm3_b.value, s3));
  return sigmoid(conv2d(mid, p.adm1_w.value, p.adm1_b.value, s1));
}

void project_kvr(const Tensor& f0, const SpatialBlockParams& p, Tensor* ks, Tensor* vs,
                 Tensor* rs) {
  const int C = p.channels;
  const ConvSpec s1{C, C, 1, 1};
  if (ks != nullptr) *ks = conv2d(f0, p.key_w.value, p.key_b.value, s1);
  if (vs != nullptr) *vs = conv2d(f0, p.val_w.value, p.val_b.value, s1);
  if (rs != nullptr) *rs = conv2d(f0, p.rec_w.value, p.rec_b.value, s1);
}

Tensor spatial_block_forward(const Tensor& f0, const SpatialBlockParams& p,
                             const RopeTable& rope, int patch, const WkvParams& cfg,
                             SpatialBlockTrace* tr) {
  const int C = p.channels;
  if (f0.rank() != 3 || f0.dim(0) != C) {
    throw ValidationError("spatial block input axis 0 (channels): expected " +
                          std::to_string(C) + ", got " + f0.shape_str());
  }
  const int H = f0.dim(1), W = f0.dim(2);
  const ConvSpec s3{C, C, 3, 1};
  const ConvSpec s1{C, C, 1, 1};

  SpatialBlockTrace local;
  SpatialBlockTrace& T = tr != nullptr ? *tr : local;
  T.f0 = f0;
  T.rope = &rope;

  // decay generator
  T.adm_pre3 = conv2d(f0, p.adm3_w.value, p.adm3_b.value, s3);
  T.adm_mid = srelu(T.adm_pre3);
  T.adm_pre1 = conv2d(T.adm_mid, p.adm1_w.value, p.adm1_b.value, s1);
  T.wmap = sigmoid(T.adm_pre1);

  // Projections; only the value stream is rotated. Rotating keys would sweep
  // their sign with position, letting the scan denominator d_i + e^u*k_i cross
  // zero and hit the clamp floor, which turns the division into a pole. Keys
  // stay un-rotated so the positive-bias init keeps denominators sign-definite,
  // while positional phase still reaches the output through the rotated values.
  project_kvr(f0, p, &T.ks, &T.vs, &T.rs);
  T.vr = apply_rope(T.vs, rope);

  PatchSequence pk = slice_patches(T.ks, patch);
  PatchSequence pv = slice_patches(T.vr, patch);

  std::vector<double> w;
  if (cfg.decay_mode == DecayMode::PerPatch) {
    w = slice_patches(T.wmap, patch).v;
  } else {
    w.assign(C, 0.0);
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int c = 0; c < C; ++c) {
      const double* wc = T.wmap.data() + static_cast<std::size_t>(c) * H * W;
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += wc[i];
      w[c] = acc * inv;
    }
  }

  T.u.resize(C);
  for (int c = 0; c < C; ++c) T.u[c] = sigmoid(p.u_raw.value.at(c));

  T.scan = wkv_scan(pk, pv, w, T.u, cfg);

  PatchSequence ys = pk;  // reuse the grid metadata
  ys.v = T.scan.y;
  T.wkv_map = unslice_patches(ys);

  T.gate = sigmoid(T.rs);

  Tensor out(f0.shape());
  const double* f0p = f0.data();
  const double* gp = T.gate.data();
  const double* wkvp = T.wkv_map.data();
  double* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) op[i] = f0p[i] + gp[i] * wkvp[i];
  return out;
}

void spatial_block_backward(const Tensor& gout, SpatialBlockParams& p,
                            const SpatialBlockTrace& tr, Tensor* gf0) {
  const int C = p.channels;
  const int H = tr.f0.dim(1), W = tr.f0.dim(2);
  const ConvSpec s3{C, C, 3, 1};
  const ConvSpec s1{C, C, 1, 1};

  // residual: F_res = F0 + gate .* WKV
  {
    const double* gp = gout.data();
    double* gf = gf0->data();
    for (std::size_t i = 0; i < gout.size(); ++i) gf[i] += gp[i];
  }

  Tensor ggate(tr.gate.shape());
  Tensor gwkv(tr.wkv_map.shape());
  {
    const double* gp = gout.data();
    const double* gatep = tr.gate.data();
    const double* wkvp = tr.wkv_map.data();
    double* ggp = ggate.data();
    double* gwp = gwkv.data();
    for (std::size_t i = 0; i < gout.size(); ++i) {
      ggp[i] = gp[i] * wkvp[i];
      gwp[i] = gp[i] * gatep[i];
    }
  }

  // receptance gate: gate = sigmoid(R_s)
  Tensor grs(tr.rs.shape());
  {
    const double* ggp = ggate.data();
    const double* gatep = tr.gate.data();
    double* grp = grs.data();
    for (std::size_t i = 0; i < grs.size(); ++i) {
      grp[i] = ggp[i] * sigmoid_grad_from_out(gatep[i]);
    }
  }

  // scan
  const int patch = tr.scan.P;
  PatchSequence gy_seq = slice_patches(gwkv, patch);
  const std::size_t td = static_cast<std::size_t>(tr.scan.T) * tr.scan.D;
  std::vector<double> gk(td, 0.0), gv(td, 0.0), gu(C, 0.0);
  std::vector<double> gw(tr.scan.cfg.decay_mode == DecayMode::PerPatch ? td
                                                                       : static_cast<std::size_t>(C),
                         0.0);
  wkv_scan_backward(tr.scan, gy_seq.v, &gk, &gv, &gw, &gu);

  PatchSequence gk_seq = gy_seq;
  gk_seq.v = gk;
  PatchSequence gv_seq = gy_seq;
  gv_seq.v = gv;
  Tensor gks = unslice_patches(gk_seq);
  Tensor gvr = unslice_patches(gv_seq);

  Tensor gwmap({C, H, W});
  if (tr.scan.cfg.decay_mode == DecayMode::PerPatch) {
    PatchSequence gw_seq = gy_seq;
    gw_seq.v = gw;
    gwmap = unslice_patches(gw_seq);
  } else {
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int c = 0; c < C; ++c) {
      double* wc = gwmap.data() + static_cast<std::size_t>(c) * H * W;
      const double g = gw[c] * inv;
      for (int i = 0; i < H * W; ++i) wc[i] = g;
    }
  }

  // u_raw through the squash
  for (int c = 0; c < C; ++c) {
    p.u_raw.grad.at(c) += gu[c] * sigmoid_grad_from_out(tr.u[c]);
  }

  // rotation is linear: transpose-rotate the value gradient (keys are not rotated)
  Tensor gvs = apply_rope_backward(gvr, *tr.rope);

  // projections
  conv2d_backward(tr.f0, p.key_w.value, s1, gks, gf0, &p.key_w.grad, &p.key_b.grad);
  conv2d_backward(tr.f0, p.val_w.value, s1, gvs, gf0, &p.val_w.grad, &p.val_b.grad);
  conv2d_backward(tr.f0, p.rec_w.value, s1, grs, gf0, &p.rec_w.grad, &p.rec_b.grad);

  // decay generator chain
  Tensor gadm_pre1(tr.adm_pre1.shape());
  {
    const double* gwp = gwmap.data();
    const double* wp = tr.wmap.data();
    double* gp = gadm_pre1.data();
    for (std::size_t i = 0; i < gadm_pre1.size(); ++i) {
      gp[i] = gwp[i] * sigmoid_grad_from_out(wp[i]);
    }
  }
  Tensor gadm_mid(tr.adm_mid.shape());
  conv2d_backward(tr.adm_mid, p.adm1_w.value, s1, gadm_pre1, &gadm_mid, &p.adm1_w.grad,
                  &p.adm1_b.grad);
  Tensor gadm_pre3(tr.adm_pre3.shape());
  {
    const double* gmp = gadm_mid.data();
    const double* prep = tr.adm_pre3.data();
    double* gp = gadm_pre3.data();
    for (std::size_t i = 0; i < gadm_pre3.size(); ++i) {
      gp[i] = gmp[i] * srelu_grad(prep[i]);
    }
  }
  conv2d_backward(tr.f0, p.adm3_w.value, s3, gadm_pre3, gf0, &p.adm3_w.grad,
                  &p.adm3_b.grad);
}

}  // namespace rgmp
