#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rgmp/gss.hpp"
#include "rgmp/model.hpp"

namespace rgmp {

// Where target centers come from: anywhere in the reachable area, or one of six
// canonical stations (plus sub-pixel jitter). Stations give the multimodal
// action distribution the mixture refiner is built around; uniform placement
// exercises the regressor across the whole workspace.
enum class Placement { Uniform, Modal };

// Normalized (x, y) station centers shared by every modal dataset.
extern const std::array<std::pair<double, double>, 6> kModalStations;

// Base background intensity of every generated scene, on the 0..255 byte
// scale; speckle noise is centered on this level. Exposed so consumers can
// build a flat reference frame that matches an empty scene.
inline constexpr int kBackgroundBase = 90;

struct SceneSpec {
  int img_w = 128;
  int img_h = 128;
  double r_min = 6.0;   // target disk radius range, pixels
  double r_max = 12.0;
  double noise_amp = 0.05;  // background speckle amplitude, fraction of full scale
  std::uint64_t seed = 0;
  Placement placement = Placement::Uniform;
  double modal_jitter_px = 1.0;

  void validate() const;  // throws ValidationError
};

// One (image, joints) pair; the generating center rides along so labels can be
// re-derived and audited.
struct Demonstration {
  Tensor image;  // (3,H,W), values k/255 for integer k
  ActionVector joints{};
  double cx = 0.0, cy = 0.0;
  Skill skill = Skill::LiftUp;
};

struct Dataset {
  int capacity = 0;  // M; item count never exceeds it
  Skill skill = Skill::LiftUp;
  std::uint64_t seed = 0;
  SceneSpec spec;
  std::vector<Demonstration> items;

  void validate() const;
};

// n synthetic scenes: a filled skill-colored disk over uniform speckle noise,
// labels from the kinematic map. Deterministic for a fixed spec.
Dataset generate_dataset(int n, const SceneSpec& spec, Skill skill);

// Directory layout: meta.json (generation parameters), manifest.jsonl (one
// record per sample: image path, joints, center, skill; full double precision),
// and 8-bit PNGs. Images and labels round-trip bit-exactly.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::vector<TrainSample> to_train_samples(const Dataset& ds);

}  // namespace rgmp
