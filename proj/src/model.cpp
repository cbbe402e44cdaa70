#include "rgmp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rgmp/dataset.hpp"
#include "rgmp/errors.hpp"
#include "rgmp/nn_ops.hpp"
#include "rgmp/rng.hpp"

namespace rgmp {

double mse_loss(const ActionVector& a, const ActionVector& g) {
  double acc = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double d = a[i] - g[i];
    acc += d * d;
  }
  return acc / 6.0;
}

ActionVector mse_loss_grad(const ActionVector& a, const ActionVector& g) {
  ActionVector out{};
  for (int i = 0; i < 6; ++i) out[i] = (2.0 / 6.0) * (a[i] - g[i]);
  return out;
}

ChannelMixParams::ChannelMixParams(int C, const std::string& prefix)
    : channels(C),
      c3_w(prefix + ".c3.w", {C, C, 3, 3}),
      c3_b(prefix + ".c3.b", {C}),
      c1_w(prefix + ".c1.w", {C, C, 1, 1}),
      c1_b(prefix + ".c1.b", {C}) {}

std::vector<Parameter*> ChannelMixParams::params() {
  return {&c3_w, &c3_b, &c1_w, &c1_b};
}

void ModelConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (widths[i] <= 0 || widths[i] % 2 != 0) {
      throw ValidationError("stage width " + std::to_string(i) +
                            " must be positive and even (rotary channel pairs), got " +
                            std::to_string(widths[i]));
    }
  }
  if (patch < 1) throw ValidationError("patch size must be >= 1");
  if (eps_den <= 0.0) throw ValidationError("denominator floor must be positive");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epoch count must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch < 0) throw ValidationError("batch size must be >= 0 (0 = full batch)");
  if (use_momentum && (momentum < 0.0 || momentum >= 1.0)) {
    throw ValidationError("momentum must lie in [0,1)");
  }
  if (use_adaptive && use_momentum) {
    throw ValidationError("adaptive steps carry their own first moment; disable momentum");
  }
  if (use_adaptive) {
    if (adapt_beta1 < 0.0 || adapt_beta1 >= 1.0 || adapt_beta2 < 0.0 || adapt_beta2 >= 1.0) {
      throw ValidationError("adaptive moment decays must lie in [0,1)");
    }
    if (!(adapt_eps > 0.0)) throw ValidationError("adaptive epsilon must be positive");
  }
}

Tensor channel_mixing(const Tensor& fres, const ChannelMixParams& p, ChannelMixTrace* tr) {
  const int C = p.channels;
  if (fres.rank() != 3 || fres.dim(0) != C) {
    throw ValidationError("channel mixing input axis 0 (channels): expected " +
                          std::to_string(C) + ", got " + fres.shape_str());
  }
  const ConvSpec s3{C, C, 3, 1};
  const ConvSpec s1{C, C, 1, 1};
  ChannelMixTrace local;
  ChannelMixTrace& T = tr != nullptr ? *tr : local;
  T.fin = fres;
  T.pre3 = conv2d(fres, p.c3_w.value, p.c3_b.value, s3);
  T.s2 = srelu(T.pre3);
  T.pre1 = conv2d(fres, p.c1_w.value, p.c1_b.value, s1);
  T.gate = sigmoid(T.pre1);

  Tensor out(fres.shape());
  const double* gp = T.gate.data();
  const double* sp = T.s2.data();
  double* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) op[i] = gp[i] * sp[i];
  return out;
}

void channel_mixing_backward(const Tensor& gout, ChannelMixParams& p,
                             const ChannelMixTrace& tr, Tensor* gfres) {
  const int C = p.channels;
  const ConvSpec s3{C, C, 3, 1};
  const ConvSpec s1{C, C, 1, 1};

  Tensor ggate(tr.gate.shape());
  Tensor gs2(tr.s2.shape());
  {
    const double* gp = gout.data();
    const double* gatep = tr.gate.data();
    const double* sp = tr.s2.data();
    double* ggp = ggate.data();
    double* gsp = gs2.data();
    for (std::size_t i = 0; i < gout.size(); ++i) {
      ggp[i] = gp[i] * sp[i];
      gsp[i] = gp[i] * gatep[i];
    }
  }

  Tensor gpre1(tr.pre1.shape());
  {
    const double* ggp = ggate.data();
    const double* gatep = tr.gate.data();
    double* gp = gpre1.data();
    for (std::size_t i = 0; i < gpre1.size(); ++i) {
      gp[i] = ggp[i] * sigmoid_grad_from_out(gatep[i]);
    }
  }
  Tensor gpre3(tr.pre3.shape());
  {
    const double* gsp = gs2.data();
    const double* prep = tr.pre3.data();
    double* gp = gpre3.data();
    for (std::size_t i = 0; i < gpre3.size(); ++i) {
      gp[i] = gsp[i] * srelu_grad(prep[i]);
    }
  }
  conv2d_backward(tr.fin, p.c1_w.value, s1, gpre1, gfres, &p.c1_w.grad, &p.c1_b.grad);
  conv2d_backward(tr.fin, p.c3_w.value, s3, gpre3, gfres, &p.c3_w.grad, &p.c3_b.grad);
}

Tensor stem_forward(const Tensor& img, const StemParams& p, StemTrace* tr) {
  if (img.rank() != 3) {
    throw ValidationError("stem input must be rank-3 (C,H,W), got " + img.shape_str());
  }
  const int C = p.conv_w.value.dim(0);
  const ConvSpec spec{img.dim(0), C, 3, 2};
  StemTrace local;
  StemTrace& T = tr != nullptr ? *tr : local;
  T.x = img;
  T.pre = conv2d(img, p.conv_w.value, p.conv_b.value, spec);
  T.aff = channel_affine(T.pre, p.aff_scale.value, p.aff_shift.value);
  T.act = srelu(T.aff);
  T.act_h = T.act.dim(1);
  T.act_w = T.act.dim(2);
  return maxpool2(T.act, &T.argmax);
}

void stem_backward(const Tensor& gout, StemParams& p, const StemTrace& tr) {
  const int C = p.conv_w.value.dim(0);
  const ConvSpec spec{tr.x.dim(0), C, 3, 2};
  Tensor gact({gout.dim(0), tr.act_h, tr.act_w});
  maxpool2_backward(gout, tr.argmax, &gact);
  Tensor gaff(tr.aff.shape());
  {
    const double* gp = gact.data();
    const double* affp = tr.aff.data();
    double* op = gaff.data();
    for (std::size_t i = 0; i < gaff.size(); ++i) op[i] = gp[i] * srelu_grad(affp[i]);
  }
  Tensor gpre(tr.pre.shape());
  channel_affine_backward(tr.pre, p.aff_scale.value, gaff, &gpre, &p.aff_scale.grad,
                          &p.aff_shift.grad);
  conv2d_backward(tr.x, p.conv_w.value, spec, gpre, nullptr, &p.conv_w.grad,
                  &p.conv_b.grad);
}

Tensor fuse_multiscale(const Tensor& f1, const Tensor& f2, const Tensor& f3,
                       const FusionParams& p, int fusion_width, FusionTrace* tr) {
  if (f3.dim(0) != fusion_width) {
    throw ValidationError(
        "fusion axis 0 of F3: the unprojected branch requires the fusion width " +
        std::to_string(fusion_width) + ", got " + std::to_string(f3.dim(0)));
  }
  if (f2.dim(1) * 2 != f1.dim(1) || f3.dim(1) * 4 != f1.dim(1)) {
    throw ValidationError("fusion axis 1 (height): F1/F2/F3 must relate 1:1/2:1/4");
  }
  if (f2.dim(2) * 2 != f1.dim(2) || f3.dim(2) * 4 != f1.dim(2)) {
    throw ValidationError("fusion axis 2 (width): F1/F2/F3 must relate 1:1/2:1/4");
  }
  FusionTrace local;
  FusionTrace& T = tr != nullptr ? *tr : local;
  T.f1 = f1;
  T.f2 = f2;
  T.f3 = f3;

  const ConvSpec s1{f1.dim(0), fusion_width, 1, 1};
  const ConvSpec s2{f2.dim(0), fusion_width, 1, 1};
  T.q1 = conv2d(f1, p.p1_w.value, p.p1_b.value, s1);
  T.up2 = bilinear_upsample(f2, 2);
  T.q2 = conv2d(T.up2, p.p2_w.value, p.p2_b.value, s2);
  T.up3 = bilinear_upsample(f3, 4);

  const double a1 = p.alpha.value.at(0), a2 = p.alpha.value.at(1), a3 = p.alpha.value.at(2);
  Tensor ff(T.q1.shape());
  const double* q1p = T.q1.data();
  const double* q2p = T.q2.data();
  const double* u3p = T.up3.data();
  double* fp = ff.data();
  for (std::size_t i = 0; i < ff.size(); ++i) {
    fp[i] = a1 * q1p[i] + a2 * q2p[i] + a3 * u3p[i];
  }
  return ff;
}

void fuse_multiscale_backward(const Tensor& gff, FusionParams& p, const FusionTrace& tr,
                              Tensor* gf1, Tensor* gf2, Tensor* gf3) {
  const int fusion_width = tr.q1.dim(0);
  const ConvSpec s1{tr.f1.dim(0), fusion_width, 1, 1};
  const ConvSpec s2{tr.f2.dim(0), fusion_width, 1, 1};
  const double a1 = p.alpha.value.at(0), a2 = p.alpha.value.at(1), a3 = p.alpha.value.at(2);

  double da1 = 0.0, da2 = 0.0, da3 = 0.0;
  const double* gp = gff.data();
  const double* q1p = tr.q1.data();
  const double* q2p = tr.q2.data();
  const double* u3p = tr.up3.data();
  Tensor gq1(tr.q1.shape());
  Tensor gq2(tr.q2.shape());
  Tensor gu3(tr.up3.shape());
  double* gq1p = gq1.data();
  double* gq2p = gq2.data();
  double* gu3p = gu3.data();
  for (std::size_t i = 0; i < gff.size(); ++i) {
    da1 += gp[i] * q1p[i];
    da2 += gp[i] * q2p[i];
    da3 += gp[i] * u3p[i];
    gq1p[i] = a1 * gp[i];
    gq2p[i] = a2 * gp[i];
    gu3p[i] = a3 * gp[i];
  }
  p.alpha.grad.at(0) += da1;
  p.alpha.grad.at(1) += da2;
  p.alpha.grad.at(2) += da3;

  conv2d_backward(tr.f1, p.p1_w.value, s1, gq1, gf1, &p.p1_w.grad, &p.p1_b.grad);
  Tensor gup2(tr.up2.shape());
  conv2d_backward(tr.up2, p.p2_w.value, s2, gq2, &gup2, &p.p2_w.grad, &p.p2_b.grad);
  if (gf2 != nullptr) bilinear_upsample_backward(gup2, tr.f2.dim(1), tr.f2.dim(2), 2, gf2);
  if (gf3 != nullptr) bilinear_upsample_backward(gu3, tr.f3.dim(1), tr.f3.dim(2), 4, gf3);
}

ActionVector action_head(const Tensor& ff, const HeadParams& p, HeadTrace* tr) {
  const int C = p.conv_w.value.dim(0);
  const ConvSpec spec{ff.dim(0), C, 3, 1};
  HeadTrace local;
  HeadTrace& T = tr != nullptr ? *tr : local;
  T.ff = ff;
  T.pre = conv2d(ff, p.conv_w.value, p.conv_b.value, spec);
  T.pooled = global_avg_pool(T.pre);
  Tensor a = linear(T.pooled, p.lin_w.value, p.lin_b.value);
  ActionVector out{};
  for (int i = 0; i < 6; ++i) out[i] = a.at(i);
  return out;
}

void action_head_backward(const ActionVector& gout, HeadParams& p, const HeadTrace& tr,
                          Tensor* gff) {
  const int C = p.conv_w.value.dim(0);
  const ConvSpec spec{tr.ff.dim(0), C, 3, 1};
  Tensor ga({6});
  for (int i = 0; i < 6; ++i) ga.at(i) = gout[i];
  Tensor gpooled({tr.pooled.dim(0)});
  linear_backward(tr.pooled, p.lin_w.value, ga, &gpooled, &p.lin_w.grad, &p.lin_b.grad);
  Tensor gpre(tr.pre.shape());
  global_avg_pool_backward(gpooled, tr.pre.dim(1), tr.pre.dim(2), &gpre);
  conv2d_backward(tr.ff, p.conv_w.value, spec, gpre, gff, &p.conv_w.grad, &p.conv_b.grad);
}

PolicyModel::PolicyModel(ModelConfig c, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
  const int fw = cfg.fusion_width();

  stem.conv_w = Parameter("stem.conv.w", {w0, 3, 3, 3});
  stem.conv_b = Parameter("stem.conv.b", {w0});
  stem.aff_scale = Parameter("stem.affine.scale", {w0});
  stem.aff_shift = Parameter("stem.affine.shift", {w0});

  const std::array<int, 3> in_w{w0, w1, w2};
  const std::array<int, 3> out_w{w1, w2, fw};
  for (int s = 0; s < 3; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1);
    for (int b = 0; b < 2; ++b) {
      const std::string bp = sp + ".block" + std::to_string(b + 1);
      stages[s].blocks[b].smb = SpatialBlockParams(in_w[s], bp + ".spatial");
      stages[s].blocks[b].cmb = ChannelMixParams(in_w[s], bp + ".channel");
    }
    stages[s].down.w = Parameter(sp + ".down.w", {out_w[s], in_w[s], 3, 3});
    stages[s].down.b = Parameter(sp + ".down.b", {out_w[s]});
  }

  fusion.p1_w = Parameter("fusion.p1.w", {fw, w1, 1, 1});
  fusion.p1_b = Parameter("fusion.p1.b", {fw});
  fusion.p2_w = Parameter("fusion.p2.w", {fw, w2, 1, 1});
  fusion.p2_b = Parameter("fusion.p2.b", {fw});
  fusion.alpha = Parameter("fusion.alpha", {3});

  head.conv_w = Parameter("head.conv.w", {fw, fw, 3, 3});
  head.conv_b = Parameter("head.conv.b", {fw});
  head.lin_w = Parameter("head.linear.w", {6, fw});
  head.lin_b = Parameter("head.linear.b", {6});

  init_params(seed);
}

namespace {

// fan-in scaled uniform init: U(-sqrt(1/fan_in), +sqrt(1/fan_in)) * gain
void init_fan_in(Parameter& p, Rng& rng, double gain = 1.0) {
  int fan_in = 0;
  if (p.value.rank() == 4) {
    fan_in = p.value.dim(1) * p.value.dim(2) * p.value.dim(3);
  } else if (p.value.rank() == 2) {
    fan_in = p.value.dim(1);
  } else {
    throw ValidationError("fan-in init expects rank-2 or rank-4 weights");
  }
  const double s = gain * std::sqrt(1.0 / fan_in);
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-s, s);
}

// The key projection feeds the scan denominators, which must start well away
// from the stabilization floor (see the note at the bias fill below): damp the
// signed spread so bias + spread stays positive at any stage width.
constexpr double kKeyInitGain[3] = {0.1, 0.04, 0.02};
constexpr double kKeyInitBias[3] = {1.0, 2.0, 4.0};
// The value and receptance projections run at plain fan-in scale. Earlier
// revisions boosted them to lift the (tiny) translation-variant signal over
// the pooled noise floor, but every extra factor here also multiplies the
// gradient flowing back through the squared-ReLU chains, and single-rate
// gradient descent cannot serve parameter groups whose sensitivities differ
// by orders of magnitude. Amplification now lives in the head conv, outside
// every nonlinear loop, where it is dynamics-free.
constexpr double kValInitGain[3] = {1.0, 1.0, 1.0};
constexpr double kValInitBias[3] = {1.0, 0.3, 0.1};
constexpr double kRecInitGain[3] = {1.0, 1.0, 1.0};
constexpr double kAdmInitBias[3] = {-4.0, 0.0, 0.0};
constexpr double kChanInitGain = 1.0;
// Head conv spread multiplier; see the note at its init site.
constexpr double kHeadConvGain = 2048.0;

}  // namespace

void PolicyModel::init_params(std::uint64_t seed) {
  Rng rng(splitmix64(seed));
  init_fan_in(stem.conv_w, rng);
  // The stem feeds every downstream squared-ReLU chain, so its parameters see
  // the largest accumulated gradient in the network; a unit affine start keeps
  // that sensitivity as small as the architecture allows. Feature visibility
  // is recovered at the head conv instead, which amplifies without feeding
  // anything nonlinear.
  stem.aff_scale.value.fill(1.0);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    auto& st = stages[si];
    for (auto& blk : st.blocks) {
      init_fan_in(blk.smb.adm3_w, rng);
      init_fan_in(blk.smb.adm1_w, rng);
      init_fan_in(blk.smb.key_w, rng, kKeyInitGain[si]);
      init_fan_in(blk.smb.val_w, rng, kValInitGain[si]);
      init_fan_in(blk.smb.rec_w, rng, kRecInitGain[si]);
      init_fan_in(blk.cmb.c3_w, rng, kChanInitGain);
      init_fan_in(blk.cmb.c1_w, rng);
      // The scan divides by decayed sums of keys. A positive key-bias start
      // (same idea as an LSTM forget-gate bias) keeps every denominator
      // bounded away from the stabilization floor, so early gradients and
      // activations stay finite-scaled; a zero start puts sign-crossing
      // denominators next to the floor and the squared-ReLU chain amplifies
      // the resulting spikes beyond recovery.
      blk.smb.key_b.value.fill(kKeyInitBias[si]);
      // A nonzero value-bias start matters for a different reason: every path
      // around the scan is translation-equivariant and the head pools globally,
      // so target position can only reach the output through the rotary phases.
      // Rotating a constant value bias imprints position-dependent waves onto
      // the values at full bias amplitude, giving gradient descent a usable
      // position signal from step one instead of one buried orders of
      // magnitude under the pooled DC level.
      blk.smb.val_b.value.fill(kValInitBias[si]);
      // Long-memory decay start: a strongly negative pre-squash bias puts the
      // forgetting rate near zero, so early in training the scan's running
      // averages carry target content across the whole patch sequence instead
      // of a two-patch window. Position readout then scales with sequence
      // coverage rather than with the (tiny) target-area fraction.
      blk.smb.adm1_b.value.fill(kAdmInitBias[si]);
    }
    init_fan_in(st.down.w, rng);
  }
  init_fan_in(fusion.p1_w, rng);
  init_fan_in(fusion.p2_w, rng);
  fusion.alpha.value.fill(1.0 / 3.0);
  // The head conv feeds only the global pool and the linear readout — nothing
  // squared or divided sits after it — so a large gain here amplifies the
  // between-sample feature differences the readout must resolve without
  // touching the stability budget of the recurrent stages. Without the boost,
  // those differences sit orders of magnitude below the readout's unit-scale
  // bias direction and plain gradient descent cannot close the gap in any
  // realistic step budget.
  init_fan_in(head.conv_w, rng, kHeadConvGain);
  // Zero readout: predictions start at the (zero) readout bias, the first
  // steps fit the label mean, and gradient flow back into the feature stack
  // grows only as the readout weights themselves grow. A random start here
  // would multiply the boosted head conv and pump early, destabilizing
  // gradient into the recurrent stages before the readout is even oriented.
  head.lin_w.value.fill(0.0);
}

std::vector<Parameter*> PolicyModel::parameters() {
  std::vector<Parameter*> out{&stem.conv_w, &stem.conv_b, &stem.aff_scale,
                              &stem.aff_shift};
  for (auto& st : stages) {
    for (auto& blk : st.blocks) {
      for (Parameter* p : blk.smb.params()) out.push_back(p);
      for (Parameter* p : blk.cmb.params()) out.push_back(p);
    }
    out.push_back(&st.down.w);
    out.push_back(&st.down.b);
  }
  out.push_back(&fusion.p1_w);
  out.push_back(&fusion.p1_b);
  out.push_back(&fusion.p2_w);
  out.push_back(&fusion.p2_b);
  out.push_back(&fusion.alpha);
  out.push_back(&head.conv_w);
  out.push_back(&head.conv_b);
  out.push_back(&head.lin_w);
  out.push_back(&head.lin_b);
  return out;
}

std::vector<const Parameter*> PolicyModel::parameters() const {
  auto* self = const_cast<PolicyModel*>(this);
  std::vector<Parameter*> mut = self->parameters();
  return {mut.begin(), mut.end()};
}

void PolicyModel::zero_grads() {
  for (Parameter* p : parameters()) p->zero_grad();
}

RopeSet PolicyModel::make_rope_set(int img_h, int img_w) const {
  if (img_h % 4 != 0) {
    throw ValidationError("input axis 1 (height " + std::to_string(img_h) +
                          ") must be divisible by 4");
  }
  if (img_w % 4 != 0) {
    throw ValidationError("input axis 2 (width " + std::to_string(img_w) +
                          ") must be divisible by 4");
  }
  RopeSet rs;
  int h = img_h / 4, w = img_w / 4;
  for (int s = 0; s < 3; ++s) {
    if (h % cfg.patch != 0 || w % cfg.patch != 0 || h == 0 || w == 0) {
      throw ValidationError("stage " + std::to_string(s + 1) + " extent " +
                            std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch size " + std::to_string(cfg.patch));
    }
    rs.t[s] = build_rope_table(h, w, cfg.widths[s]);
    h /= 2;
    w /= 2;
  }
  return rs;
}

ActionVector PolicyModel::forward(const Tensor& image, const RopeSet& rope,
                                  ModelTrace* tr) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ValidationError("model input axis 0 (channels): expected 3, got " +
                          image.shape_str());
  }
  ModelTrace local;
  ModelTrace& T = tr != nullptr ? *tr : local;

  Tensor f = stem_forward(image, stem, &T.stem);
  const WkvParams wkv = cfg.wkv();

  std::array<Tensor*, 3> staged{&T.f1, &T.f2, &T.f3};
  for (int s = 0; s < 3; ++s) {
    const StageParams& st = stages[s];
    for (int b = 0; b < 2; ++b) {
      BlockTrace& bt = T.stages[s].blocks[b];
      Tensor fres = spatial_block_forward(f, st.blocks[b].smb, rope.t[s], cfg.patch, wkv,
                                          &bt.smb);
      Tensor fc0 = channel_mixing(fres, st.blocks[b].cmb, &bt.cmb);
      // block output: residual around the channel-mix sublayer
      Tensor out(fres.shape());
      const double* rp = fres.data();
      const double* cp = fc0.data();
      double* op = out.data();
      for (std::size_t i = 0; i < out.size(); ++i) op[i] = rp[i] + cp[i];
      f = std::move(out);
    }
    T.stages[s].down_in = f;
    const ConvSpec dspec{st.down.w.value.dim(1), st.down.w.value.dim(0), 3, 2};
    f = conv2d(f, st.down.w.value, st.down.b.value, dspec);
    *staged[s] = f;
  }

  Tensor ff = fuse_multiscale(T.f1, T.f2, T.f3, fusion, cfg.fusion_width(), &T.fusion);
  T.out = action_head(ff, head, &T.head);
  for (double v : T.out) {
    if (!std::isfinite(v)) throw NumericalError("forward pass produced non-finite action");
  }
  return T.out;
}

void PolicyModel::backward(const ActionVector& gout, ModelTrace& tr) {
  Tensor gff({cfg.fusion_width(), tr.head.ff.dim(1), tr.head.ff.dim(2)});
  action_head_backward(gout, head, tr.head, &gff);

  Tensor gf1(tr.f1.shape());
  Tensor gf2(tr.f2.shape());
  Tensor gf3(tr.f3.shape());
  fuse_multiscale_backward(gff, fusion, tr.fusion, &gf1, &gf2, &gf3);

  std::array<Tensor*, 3> staged{&gf1, &gf2, &gf3};
  Tensor carry;  // gradient flowing into the next-lower stage output
  for (int s = 2; s >= 0; --s) {
    Tensor gstage = std::move(*staged[s]);
    if (s < 2 && !carry.empty()) {
      double* gp = gstage.data();
      const double* cp = carry.data();
      for (std::size_t i = 0; i < gstage.size(); ++i) gp[i] += cp[i];
    }
    StageParams& st = stages[s];
    const ConvSpec dspec{st.down.w.value.dim(1), st.down.w.value.dim(0), 3, 2};
    Tensor gdown_in(tr.stages[s].down_in.shape());
    conv2d_backward(tr.stages[s].down_in, st.down.w.value, dspec, gstage, &gdown_in,
                    &st.down.w.grad, &st.down.b.grad);

    Tensor g = std::move(gdown_in);
    for (int b = 1; b >= 0; --b) {
      BlockTrace& bt = tr.stages[s].blocks[b];
      // block output = F_res + channel_mixing(F_res): identity path seeds gfres
      Tensor gfres = g;
      channel_mixing_backward(g, st.blocks[b].cmb, bt.cmb, &gfres);
      Tensor gf0(bt.smb.f0.shape());
      spatial_block_backward(gfres, st.blocks[b].smb, bt.smb, &gf0);
      g = std::move(gf0);
    }
    if (s == 0) {
      stem_backward(g, stem, tr.stem);
    } else {
      carry = std::move(g);
    }
  }
}

ActionVector predict(const PolicyModel& m, const Tensor& image) {
  RopeSet rope = m.make_rope_set(image.dim(1), image.dim(2));
  return m.forward(image, rope, nullptr);
}

TrainResult train_policy(PolicyModel& m, const std::vector<TrainSample>& data,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  const int n = static_cast<int>(data.size());
  const int h = data[0].image.dim(1), w = data[0].image.dim(2);
  for (const TrainSample& s : data) {
    if (s.image.dim(1) != h || s.image.dim(2) != w) {
      throw ValidationError("training images disagree in extent");
    }
    for (double v : s.label) {
      if (!std::isfinite(v)) throw ValidationError("training label is non-finite");
    }
  }
  const int bsz = cfg.batch == 0 ? n : std::min(cfg.batch, n);
  RopeSet rope = m.make_rope_set(h, w);

  // Flat-field zero reference. The scan lays a deterministic positional
  // texture over every input, so the pooled head features share a large
  // sample-independent offset; with a plain-GD update the readout would spend
  // most of the step budget fighting that common mode before it could touch
  // the much smaller between-sample differences. Folding the network's pooled
  // response to an empty scene (a frame at the generator's base background
  // level) into the head conv bias removes the offset exactly once, before
  // the first step, and depends only on the input extent — not on the data.
  {
    Tensor flat({3, h, w});
    flat.fill(kBackgroundBase / 255.0);
    ModelTrace tr;
    (void)m.forward(flat, rope, &tr);
    for (int c = 0; c < m.head.conv_b.value.dim(0); ++c) {
      m.head.conv_b.value.at(c) -= tr.head.pooled.at(c);
    }
  }

  std::vector<Tensor> velocity;
  if (cfg.use_momentum) {
    for (Parameter* p : m.parameters()) velocity.emplace_back(p->value.shape());
  }
  std::vector<Tensor> moment1, moment2;
  if (cfg.use_adaptive) {
    for (Parameter* p : m.parameters()) {
      moment1.emplace_back(p->value.shape());
      moment2.emplace_back(p->value.shape());
    }
  }
  long long adaptive_t = 0;

  TrainResult result;
  double last_finite = 0.0;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(splitmix64(cfg.seed + 0x5eedULL + static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[i], order[j]);
    }

    double epoch_acc = 0.0;
    for (int b0 = 0; b0 < n; b0 += bsz) {
      const int bn = std::min(bsz, n - b0);
      m.zero_grads();
      double batch_loss = 0.0;
      for (int bi = 0; bi < bn; ++bi) {
        const TrainSample& s = data[static_cast<std::size_t>(order[b0 + bi])];
        ModelTrace tr;
        ActionVector a = m.forward(s.image, rope, &tr);
        batch_loss += mse_loss(a, s.label);
        ActionVector ga = mse_loss_grad(a, s.label);
        for (double& gv : ga) gv /= bn;
        m.backward(ga, tr);
      }
      batch_loss /= bn;
      epoch_acc += batch_loss * bn;

      auto params = m.parameters();
      if (cfg.use_adaptive) ++adaptive_t;
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        double* vp = p->value.data();
        const double* gp = p->grad.data();
        if (cfg.use_adaptive) {
          double* m1 = moment1[pi].data();
          double* m2 = moment2[pi].data();
          const double c1 = 1.0 - std::pow(cfg.adapt_beta1, static_cast<double>(adaptive_t));
          const double c2 = 1.0 - std::pow(cfg.adapt_beta2, static_cast<double>(adaptive_t));
          for (std::size_t i = 0; i < p->value.size(); ++i) {
            m1[i] = cfg.adapt_beta1 * m1[i] + (1.0 - cfg.adapt_beta1) * gp[i];
            m2[i] = cfg.adapt_beta2 * m2[i] + (1.0 - cfg.adapt_beta2) * gp[i] * gp[i];
            vp[i] -= cfg.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adapt_eps);
          }
        } else if (cfg.use_momentum) {
          double* vel = velocity[pi].data();
          for (std::size_t i = 0; i < p->value.size(); ++i) {
            vel[i] = cfg.momentum * vel[i] + gp[i];
            vp[i] -= cfg.lr * vel[i];
          }
        } else {
          for (std::size_t i = 0; i < p->value.size(); ++i) vp[i] -= cfg.lr * gp[i];
        }
      }
    }
    const double epoch_loss = epoch_acc / n;
    if (!std::isfinite(epoch_loss)) {
      std::ostringstream os;
      os << "training diverged at epoch " << epoch << "; last finite loss " << last_finite;
      throw NumericalError(os.str());
    }
    last_finite = epoch_loss;
    result.epoch_loss.push_back(epoch_loss);
  }
  return result;
}

}  // namespace rgmp
