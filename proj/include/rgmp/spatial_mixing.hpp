#pragma once

#include <string>
#include <vector>

#include "rgmp/rope.hpp"
#include "rgmp/tensor.hpp"

namespace rgmp {

// Decay exponents per scan step: an own slice of the decay map per patch, or a
// single spatially-averaged per-channel value shared by every step.
enum class DecayMode { PerPatch, Shared };

// State seeding for step 0: copy k_0 into both accumulators, or k_0*v_0 into
// the numerator state.
enum class ScanInit { K, KV };

// Learnables of one spatial mixing block over C channels.
struct SpatialBlockParams {
  int channels = 0;
  Parameter adm3_w, adm3_b;  // 3x3 stage of the decay generator
  Parameter adm1_w, adm1_b;  // 1x1 head of the decay generator
  Parameter key_w, key_b;    // K projection
  Parameter val_w, val_b;    // V projection
  Parameter rec_w, rec_b;    // receptance projection; sigmoid(R_s) gates the output
  Parameter u_raw;           // per-channel current-step compensation, pre-squash

  SpatialBlockParams() = default;
  SpatialBlockParams(int C, const std::string& prefix);
  std::vector<Parameter*> params();
};

// Row-major patch scan order over the patch grid; inside a patch the layout is
// channel-major (c, py, px), so element e belongs to channel e / (P*P).
struct PatchSequence {
  int T = 0, D = 0;       // step count, flattened patch length C*P*P
  int C = 0, P = 0;       // channels, patch edge
  int gh = 0, gw = 0;     // patch grid extents
  std::vector<double> v;  // T*D
};

// Requires both spatial extents divisible by P (error names the axis).
PatchSequence slice_patches(const Tensor& x, int P);
Tensor unslice_patches(const PatchSequence& s);

// Running numerator/denominator accumulators of the recursive scan.
struct ScanState {
  std::vector<double> n, d;
  int step = -1;
};

struct WkvParams {
  DecayMode decay_mode = DecayMode::PerPatch;
  ScanInit init = ScanInit::K;
  double eps = 1e-8;  // sign-preserving denominator floor
};

// Everything the hand-written backward needs from the forward scan.
struct WkvTrace {
  int T = 0, D = 0, C = 0, P = 0;
  WkvParams cfg;
  std::vector<double> k, v;      // T*D inputs
  std::vector<double> decay;     // exp(-w): T*D per-patch, C shared
  std::vector<double> n, d;      // post-update accumulators per step, T*D each
  std::vector<double> den_raw;   // pre-clamp denominators, T*D
  std::vector<double> eu;        // exp(u) per channel
  std::vector<double> y;         // T*D outputs
};

// k/v: post-rotation patch sequences. w: decay exponents, length T*D in
// per-patch mode or C in shared mode. u: per-channel compensation values.
// Throws NumericalError naming the first non-finite step.
WkvTrace wkv_scan(const PatchSequence& k, const PatchSequence& v,
                  const std::vector<double>& w, const std::vector<double>& u,
                  const WkvParams& cfg);

// Accumulates into gk/gv (T*D), gw (same length as the forward w), gu (C).
void wkv_scan_backward(const WkvTrace& t, const std::vector<double>& gy,
                       std::vector<double>* gk, std::vector<double>* gv,
                       std::vector<double>* gw, std::vector<double>* gu);

// Closed-form evaluation of the same outputs with every step resummed from
// scratch (O(T^2)); exists solely to cross-check the recursive scan.
std::vector<double> wkv_unrolled_reference(const PatchSequence& k, const PatchSequence& v,
                                           const std::vector<double>& w,
                                           const std::vector<double>& u,
                                           const WkvParams& cfg);

// Forward intermediates of one block (kept for the backward pass). The rope
// table is caller-owned and must outlive the trace.
struct SpatialBlockTrace {
  Tensor f0;
  Tensor adm_pre3, adm_mid, adm_pre1, wmap;  // decay generator chain
  Tensor ks, vs, rs;                         // projections of F0
  Tensor vr;                                 // rotated V
  Tensor gate;                               // sigmoid(R_s)
  Tensor wkv_map;                            // scan output back on the grid
  std::vector<double> u;                     // sigmoid(u_raw)
  const RopeTable* rope = nullptr;
  WkvTrace scan;
};

// F0 -> F_res = F0 + sigmoid(R_s) .* WKV
Tensor spatial_block_forward(const Tensor& f0, const SpatialBlockParams& p,
                             const RopeTable& rope, int patch, const WkvParams& cfg,
                             SpatialBlockTrace* tr);

// Parameter grads accumulate into p; input grads accumulate into *gf0.
void spatial_block_backward(const Tensor& gout, SpatialBlockParams& p,
                            const SpatialBlockTrace& tr, Tensor* gf0);

// The decay generator alone: sigmoid(conv1x1(srelu(conv3x3(F0)))), in (0,1).
Tensor adm_decay(const Tensor& f0, const SpatialBlockParams& p);

// The three shape-preserving 1x1 projections of F0.
void project_kvr(const Tensor& f0, const SpatialBlockParams& p, Tensor* ks, Tensor* vs,
                 Tensor* rs);

}  // namespace rgmp
