#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rgmp/tensor.hpp"

namespace rgmp {

// ---- core vocabulary ---------------------------------------------------------

enum class ShapeCategory { Cylindrical, Squashed, ThinSmall, Other };
enum class Skill { SideGrasp, LiftUp, TopPinch };

const char* to_string(ShapeCategory s);
const char* to_string(Skill s);

// Case-insensitive, tolerant of spaces/underscores/hyphens ("side Grasp",
// "top_pinch"); "crushed" is accepted as an alias for squashed.
std::optional<Skill> parse_skill(const std::string& text);
std::optional<ShapeCategory> parse_shape(const std::string& text);

// Pixel rectangle with exclusive upper edges: x in [x1, x2), y in [y1, y2).
struct BoundingBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  void validate(int img_w, int img_h) const;  // throws ValidationError
};

struct Instruction {
  std::string text;
  void validate() const;  // non-empty
};

// Image in [0,1] (3,H,W); an optional externally supplied shape label short-
// circuits the heuristic classifier.
struct Observation {
  Tensor image;
  std::optional<ShapeCategory> shape_label;
};

// ---- scene occupancy -----------------------------------------------------------

// Approach-corridor summary for one target: is a 10 px strip beside it (either
// side) free of other objects, and the strip above it?
struct SceneOccupancy {
  bool side_clear = true;
  bool top_clear = true;
};

struct SceneSummary {
  SceneOccupancy occ;
  int img_w = 640;
  int img_h = 480;
};

// ---- rule catalog ----------------------------------------------------------------

// Everything a rule predicate may consult.
struct RuleContext {
  ShapeCategory shape = ShapeCategory::Other;
  BoundingBox box;
  SceneOccupancy occ;
  int img_w = 640;
  int img_h = 480;

  double area_fraction() const {
    return static_cast<double>(box.area()) / (static_cast<double>(img_w) * img_h);
  }
  bool small() const { return area_fraction() < 0.01; }
  bool oversized() const { return area_fraction() > 0.60; }
  bool tall() const { return box.height() >= 2 * box.width(); }
  bool wide() const { return box.width() >= 2 * box.height(); }
  bool touches_border() const {
    return box.x1 == 0 || box.y1 == 0 || box.x2 == img_w || box.y2 == img_h;
  }
};

struct Rule {
  int priority = 0;  // unique; lower fires first
  std::string name;
  std::function<bool(const RuleContext&)> pred;
  Skill skill = Skill::LiftUp;
  std::string rationale;
  double confidence = 0.5;
};

// The shipped catalog: exactly 20 rules with unique priorities 1..20 and a
// catch-all at the end, so dispatch is total.
const std::vector<Rule>& default_rule_catalog();

struct SkillDecision {
  Skill skill = Skill::LiftUp;
  BoundingBox box;
  double confidence = 0.0;
  std::string rationale;
};

// First matching rule by ascending priority wins; the rationale names the fired
// rule. Throws ValidationError when the catalog is empty or nothing matches.
SkillDecision select_skill(const BoundingBox& box, ShapeCategory shape,
                           const SceneSummary& scene, const std::vector<Rule>& rules);

// ---- shape classification -----------------------------------------------------

// A provided label is passed through. Otherwise the crop is segmented against
// the crop-border background color (foreground = max-channel deviation > 0.1)
// and classified from the mask: aspect h/w >= 1.4 with fill >= 0.6 ->
// cylindrical; aspect <= 0.7 -> squashed; mask under 2% of the image ->
// thin_small; else other. An all-background crop is a ValidationError.
ShapeCategory classify_shape(const Observation& o, const BoundingBox& box);

// ---- selection metric ------------------------------------------------------------

// Acc = Acc_s * Acc_t; both factors validated into [0,1].
double compute_accuracy(double acc_s, double acc_t);

// ---- mock scenes --------------------------------------------------------------------

struct SceneObject {
  std::string name;
  BoundingBox box;
  ShapeCategory shape = ShapeCategory::Other;
};

struct SceneManifest {
  int img_w = 640;
  int img_h = 480;
  std::vector<SceneObject> objects;
};

// JSON file: {"width": W, "height": H, "objects": [{"name", "box": [x1,y1,x2,y2],
// "shape"}...]}. Unreadable/unparsable files raise IoError, schema violations
// ValidationError.
SceneManifest load_scene_manifest(const std::string& path);

// Occupancy of one manifest object versus all others: a side corridor (margin
// wide, either flank) and the corridor above, tested for box overlap.
SceneOccupancy derive_occupancy(const SceneManifest& scene, std::size_t target,
                                int margin_px = 10);

// ---- conformance ----------------------------------------------------------------------

// One cell of the pinned (shape x side-clear x size) decision table; top
// approach clear throughout.
struct ConformanceCell {
  ShapeCategory shape;
  bool side_clear;
  bool small;
  Skill expected;
};

// The 16-row table the shipped catalog must reproduce.
const std::vector<ConformanceCell>& pinned_decision_table();

// Fraction of table cells where the catalog's decision matches; the skill-
// selection accuracy Acc_s reported by evaluation runs.
double rule_conformance_rate(const std::vector<Rule>& rules);

}  // namespace rgmp
