#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rgmp/spatial_mixing.hpp"
#include "rgmp/tensor.hpp"

namespace rgmp {

using ActionVector = std::array<double, 6>;

// Mean squared error over the 6 action coordinates.
double mse_loss(const ActionVector& a, const ActionVector& g);
ActionVector mse_loss_grad(const ActionVector& a, const ActionVector& g);

// ---- parameter groups --------------------------------------------------------

struct StemParams {
  Parameter conv_w, conv_b;      // 3x3 stride-2
  Parameter aff_scale, aff_shift;  // per-channel affine
};

struct ChannelMixParams {
  int channels = 0;
  Parameter c3_w, c3_b;  // 3x3 branch (squared-ReLU side)
  Parameter c1_w, c1_b;  // 1x1 branch (gate side)

  ChannelMixParams() = default;
  ChannelMixParams(int C, const std::string& prefix);
  std::vector<Parameter*> params();
};

struct DownParams {
  Parameter w, b;  // 3x3 stride-2
};

struct FusionParams {
  Parameter p1_w, p1_b;  // 1x1 on F1
  Parameter p2_w, p2_b;  // 1x1 on Up(F2)
  Parameter alpha;       // 3 learnable branch weights; Up(F3) enters unprojected
};

struct HeadParams {
  Parameter conv_w, conv_b;  // 3x3
  Parameter lin_w, lin_b;    // dense readout to 6 joints
};

// ---- configuration -----------------------------------------------------------

struct ModelConfig {
  std::array<int, 3> widths{32, 64, 128};  // block widths of the three stages
  int patch = 16;                          // desk-scale runs pass 8
  DecayMode decay_mode = DecayMode::PerPatch;
  ScanInit scan_init = ScanInit::K;
  double eps_den = 1e-8;

  // The fused map and F3 share the stage-1 width: the third fusion branch adds
  // Up(F3) without a projection, so F3 must already be at the fusion width.
  int fusion_width() const { return widths[0]; }
  void validate() const;
  WkvParams wkv() const { return WkvParams{decay_mode, scan_init, eps_den}; }
};

struct TrainConfig {
  int epochs = 60;
  double lr = 0.05;
  int batch = 8;  // capped at the dataset size; 0 means full-batch
  std::uint64_t seed = 0;
  // documented extension, off by default: classical momentum on top of the
  // plain gradient-descent update
  bool use_momentum = false;
  double momentum = 0.9;
  // documented extension, off by default: adaptive per-parameter step sizes
  // (Adam-style first/second-moment normalization with bias correction).
  // The network's parameter groups differ in loss curvature by several orders
  // of magnitude — a global-average-pooled readout over a recurrent body puts
  // the informative directions far below the nuisance directions — and a
  // single global step size cannot serve both; normalized steps can.
  // Mutually exclusive with use_momentum (it has its own first moment).
  bool use_adaptive = false;
  double adapt_beta1 = 0.9;
  double adapt_beta2 = 0.999;
  // Larger than the textbook 1e-8 on purpose: parameters whose gradients run
  // below this scale (the scan's key projections near a well-conditioned
  // denominator) keep proportional rather than normalized steps, so the
  // normalizer cannot march them into the denominator floor on noise alone.
  double adapt_eps = 1e-4;

  void validate() const;
};

// ---- per-sample forward traces ------------------------------------------------

struct StemTrace {
  Tensor x, pre, aff, act;
  std::vector<int> argmax;
  int act_h = 0, act_w = 0;
};

struct ChannelMixTrace {
  Tensor fin, pre3, s2, pre1, gate;
};

struct BlockTrace {
  SpatialBlockTrace smb;
  ChannelMixTrace cmb;
};

struct StageTrace {
  std::array<BlockTrace, 2> blocks;
  Tensor down_in;  // input of the stride-2 downsample conv
};

struct FusionTrace {
  Tensor f1, f2, f3, up2, up3, q1, q2;
};

struct HeadTrace {
  Tensor ff, pre, pooled;
};

struct ModelTrace {
  StemTrace stem;
  std::array<StageTrace, 3> stages;
  Tensor f1, f2, f3;
  FusionTrace fusion;
  HeadTrace head;
  ActionVector out{};
};

// Rotary tables for the three stage extents of one input size.
struct RopeSet {
  std::array<RopeTable, 3> t;
};

// ---- standalone ops ------------------------------------------------------------

// F_C0 = sigmoid(conv1x1(F_res)) .* srelu(conv3x3(F_res)); shape-preserving.
Tensor channel_mixing(const Tensor& fres, const ChannelMixParams& p, ChannelMixTrace* tr);
void channel_mixing_backward(const Tensor& gout, ChannelMixParams& p,
                             const ChannelMixTrace& tr, Tensor* gfres);

// conv3x3(s2) + per-channel affine + srelu + 2x2 max-pool: image -> quarter scale.
Tensor stem_forward(const Tensor& img, const StemParams& p, StemTrace* tr);
void stem_backward(const Tensor& gout, StemParams& p, const StemTrace& tr);

// F_f = a1*conv1x1(F1) + a2*conv1x1(Up2(F2)) + a3*Up4(F3)
Tensor fuse_multiscale(const Tensor& f1, const Tensor& f2, const Tensor& f3,
                       const FusionParams& p, int fusion_width, FusionTrace* tr);
void fuse_multiscale_backward(const Tensor& gff, FusionParams& p, const FusionTrace& tr,
                              Tensor* gf1, Tensor* gf2, Tensor* gf3);

// a = linear(global_avg_pool(conv3x3(F_f)))
ActionVector action_head(const Tensor& ff, const HeadParams& p, HeadTrace* tr);
void action_head_backward(const ActionVector& gout, HeadParams& p, const HeadTrace& tr,
                          Tensor* gff);

// ---- the policy network ---------------------------------------------------------

struct ArgnBlockParams {
  SpatialBlockParams smb;
  ChannelMixParams cmb;
};

struct StageParams {
  std::array<ArgnBlockParams, 2> blocks;
  DownParams down;
};

class PolicyModel {
 public:
  PolicyModel(ModelConfig cfg, std::uint64_t seed);

  ModelConfig cfg;
  StemParams stem;
  std::array<StageParams, 3> stages;
  FusionParams fusion;
  HeadParams head;

  // Stable traversal order (checkpoint layout, optimizer, grad-check).
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grads();

  // Validates input extents (divisible by 4 and by per-stage patch needs).
  RopeSet make_rope_set(int img_h, int img_w) const;

  ActionVector forward(const Tensor& image, const RopeSet& rope, ModelTrace* tr) const;
  // Accumulates parameter gradients for one sample given dLoss/dAction.
  void backward(const ActionVector& gout, ModelTrace& tr);

 private:
  void init_params(std::uint64_t seed);
};

// Deterministic forward pass on one image; finite 6-vector or NumericalError.
ActionVector predict(const PolicyModel& m, const Tensor& image);

// ---- training --------------------------------------------------------------------

struct TrainSample {
  Tensor image;
  ActionVector label{};
};

struct TrainResult {
  std::vector<double> epoch_loss;  // pre-update mean sample loss per epoch
};

// Mini-batch plain gradient descent; deterministic for a fixed seed. Throws
// NumericalError naming the epoch if the loss leaves the finite range.
TrainResult train_policy(PolicyModel& m, const std::vector<TrainSample>& data,
                         const TrainConfig& cfg);

}  // namespace rgmp
