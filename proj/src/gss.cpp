#include "rgmp/gss.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rgmp/errors.hpp"

namespace rgmp {

namespace {

std::string normalize_token(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == ' ' || c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

const char* to_string(ShapeCategory s) {
  switch (s) {
    case ShapeCategory::Cylindrical: return "cylindrical";
    case ShapeCategory::Squashed: return "squashed";
    case ShapeCategory::ThinSmall: return "thin_small";
    case ShapeCategory::Other: return "other";
  }
  return "other";
}

const char* to_string(Skill s) {
  switch (s) {
    case Skill::SideGrasp: return "SideGrasp";
    case Skill::LiftUp: return "LiftUp";
    case Skill::TopPinch: return "TopPinch";
  }
  return "LiftUp";
}

std::optional<Skill> parse_skill(const std::string& text) {
  const std::string t = normalize_token(text);
  if (t == "sidegrasp") return Skill::SideGrasp;
  if (t == "liftup") return Skill::LiftUp;
  if (t == "toppinch") return Skill::TopPinch;
  return std::nullopt;
}

std::optional<ShapeCategory> parse_shape(const std::string& text) {
  const std::string t = normalize_token(text);
  if (t == "cylindrical") return ShapeCategory::Cylindrical;
  if (t == "squashed" || t == "crushed") return ShapeCategory::Squashed;
  if (t == "thinsmall") return ShapeCategory::ThinSmall;
  if (t == "other") return ShapeCategory::Other;
  return std::nullopt;
}

void BoundingBox::validate(int img_w, int img_h) const {
  if (!(0 <= x1 && x1 < x2 && x2 <= img_w)) {
    throw ValidationError("bounding box x-range [" + std::to_string(x1) + ", " +
                          std::to_string(x2) + ") invalid for width " +
                          std::to_string(img_w));
  }
  if (!(0 <= y1 && y1 < y2 && y2 <= img_h)) {
    throw ValidationError("bounding box y-range [" + std::to_string(y1) + ", " +
                          std::to_string(y2) + ") invalid for height " +
                          std::to_string(img_h));
  }
}

void Instruction::validate() const {
  if (text.empty()) throw ValidationError("instruction text is empty");
}

namespace {

Rule make_rule(int priority, std::string name, Skill skill, double confidence,
               std::string rationale, std::function<bool(const RuleContext&)> pred) {
  Rule r;
  r.priority = priority;
  r.name = std::move(name);
  r.pred = std::move(pred);
  r.skill = skill;
  r.rationale = std::move(rationale);
  r.confidence = confidence;
  return r;
}

std::vector<Rule> build_catalog() {
  using S = ShapeCategory;
  std::vector<Rule> rules;
  rules.push_back(make_rule(
      1, "edge-clipped", Skill::LiftUp, 0.70,
      "object is cut off at the image border; lifting straight up avoids dragging "
      "it through unseen space",
      [](const RuleContext& c) { return c.touches_border(); }));
  rules.push_back(make_rule(
      2, "oversized", Skill::LiftUp, 0.70,
      "object covers more than 60% of the view; side and pinch approaches have no "
      "room, lift vertically",
      [](const RuleContext& c) { return c.oversized(); }));
  rules.push_back(make_rule(
      3, "thin-top-pinch", Skill::TopPinch, 0.95,
      "thin or small item (napkin-like) with a free top approach takes the pinch",
      [](const RuleContext& c) { return c.shape == S::ThinSmall && c.occ.top_clear; }));
  rules.push_back(make_rule(
      4, "thin-side-slide", Skill::SideGrasp, 0.80,
      "thin item with the top blocked but a side corridor open; slide in from the side",
      [](const RuleContext& c) {
        return c.shape == S::ThinSmall && !c.occ.top_clear && c.occ.side_clear;
      }));
  rules.push_back(make_rule(
      5, "thin-boxed-in", Skill::LiftUp, 0.60,
      "thin item with every corridor blocked; vertical lift is the only exit",
      [](const RuleContext& c) {
        return c.shape == S::ThinSmall && !c.occ.top_clear && !c.occ.side_clear;
      }));
  rules.push_back(make_rule(
      6, "small-top-pinch", Skill::TopPinch, 0.90,
      "small footprint (under 1% of the view) with a free top approach suits the pinch",
      [](const RuleContext& c) { return c.small() && c.occ.top_clear; }));
  rules.push_back(make_rule(
      7, "small-side-grasp", Skill::SideGrasp, 0.75,
      "small object, top blocked, side corridor open; grasp from the flank",
      [](const RuleContext& c) {
        return c.small() && !c.occ.top_clear && c.occ.side_clear;
      }));
  rules.push_back(make_rule(
      8, "small-boxed-in", Skill::LiftUp, 0.60,
      "small object with both corridors blocked; lift vertically",
      [](const RuleContext& c) {
        return c.small() && !c.occ.top_clear && !c.occ.side_clear;
      }));
  rules.push_back(make_rule(
      9, "tall-cylinder-side", Skill::SideGrasp, 0.95,
      "strongly elongated upright cylinder with a clear flank; the side grasp wraps "
      "the barrel",
      [](const RuleContext& c) {
        return c.shape == S::Cylindrical && c.tall() && c.occ.side_clear;
      }));
  rules.push_back(make_rule(
      10, "cylinder-side-clear", Skill::SideGrasp, 0.95,
      "upright cylinder (can-like) with a free side approach takes the side grasp",
      [](const RuleContext& c) { return c.shape == S::Cylindrical && c.occ.side_clear; }));
  rules.push_back(make_rule(
      11, "cylinder-side-blocked", Skill::LiftUp, 0.85,
      "cylinder hemmed in at the sides; approach from above and lift",
      [](const RuleContext& c) {
        return c.shape == S::Cylindrical && !c.occ.side_clear && c.occ.top_clear;
      }));
  rules.push_back(make_rule(
      12, "cylinder-boxed-in", Skill::LiftUp, 0.55,
      "cylinder with side and top corridors blocked; vertical extraction is the "
      "least-collision option",
      [](const RuleContext& c) {
        return c.shape == S::Cylindrical && !c.occ.side_clear && !c.occ.top_clear;
      }));
  rules.push_back(make_rule(
      13, "squashed-wide", Skill::LiftUp, 0.90,
      "flattened object with a wide footprint; fingers cannot wrap it, lift it up",
      [](const RuleContext& c) { return c.shape == S::Squashed && c.wide(); }));
  rules.push_back(make_rule(
      14, "squashed-side-clear", Skill::LiftUp, 0.90,
      "crushed object (flattened can); lifting from above is reliable even with "
      "free flanks",
      [](const RuleContext& c) { return c.shape == S::Squashed && c.occ.side_clear; }));
  rules.push_back(make_rule(
      15, "squashed-side-blocked", Skill::LiftUp, 0.85,
      "crushed object with blocked flanks; lift from above",
      [](const RuleContext& c) { return c.shape == S::Squashed && !c.occ.side_clear; }));
  rules.push_back(make_rule(
      16, "unknown-wide", Skill::LiftUp, 0.65,
      "unclassified wide object; treat like a flat item and lift",
      [](const RuleContext& c) { return c.shape == S::Other && c.wide(); }));
  rules.push_back(make_rule(
      17, "unknown-open", Skill::LiftUp, 0.70,
      "unclassified object with open corridors; the overhead lift is the safe default",
      [](const RuleContext& c) {
        return c.shape == S::Other && c.occ.side_clear && c.occ.top_clear;
      }));
  rules.push_back(make_rule(
      18, "unknown-side-blocked", Skill::LiftUp, 0.65,
      "unclassified object with blocked flanks; lift from above",
      [](const RuleContext& c) { return c.shape == S::Other && !c.occ.side_clear; }));
  rules.push_back(make_rule(
      19, "unknown-top-blocked", Skill::LiftUp, 0.60,
      "unclassified object with the top corridor blocked; lift clear of the "
      "obstruction",
      [](const RuleContext& c) { return c.shape == S::Other && !c.occ.top_clear; }));
  rules.push_back(make_rule(
      20, "catch-all", Skill::LiftUp, 0.50,
      "no specific geometric prior applies; default to the vertical lift",
      [](const RuleContext&) { return true; }));
  return rules;
}

}  // namespace

const std::vector<Rule>& default_rule_catalog() {
  static const std::vector<Rule> catalog = build_catalog();
  return catalog;
}

SkillDecision select_skill(const BoundingBox& box, ShapeCategory shape,
                           const SceneSummary& scene, const std::vector<Rule>& rules) {
  if (rules.empty()) throw ValidationError("rule catalog is empty");
  box.validate(scene.img_w, scene.img_h);
  RuleContext ctx;
  ctx.shape = shape;
  ctx.box = box;
  ctx.occ = scene.occ;
  ctx.img_w = scene.img_w;
  ctx.img_h = scene.img_h;

  const Rule* fired = nullptr;
  for (const Rule& r : rules) {
    if ((fired == nullptr || r.priority < fired->priority) && r.pred(ctx)) fired = &r;
  }
  if (fired == nullptr) throw ValidationError("no applicable skill for this context");

  SkillDecision d;
  d.skill = fired->skill;
  d.box = box;
  d.confidence = fired->confidence;
  d.rationale = "rule " + std::to_string(fired->priority) + " (" + fired->name +
                "): " + fired->rationale;
  return d;
}

ShapeCategory classify_shape(const Observation& o, const BoundingBox& box) {
  if (o.shape_label.has_value()) return *o.shape_label;
  if (o.image.rank() != 3 || o.image.dim(0) != 3) {
    throw ValidationError("shape classifier needs a (3,H,W) image or a provided label");
  }
  const int H = o.image.dim(1), W = o.image.dim(2);
  box.validate(W, H);

  // Background estimate: mean color over the crop's 1-pixel border ring.
  double bg[3] = {0.0, 0.0, 0.0};
  int border_n = 0;
  for (int y = box.y1; y < box.y2; ++y) {
    for (int x = box.x1; x < box.x2; ++x) {
      const bool on_ring = y == box.y1 || y == box.y2 - 1 || x == box.x1 || x == box.x2 - 1;
      if (!on_ring) continue;
      for (int c = 0; c < 3; ++c) bg[c] += o.image.at(c, y, x);
      ++border_n;
    }
  }
  for (double& v : bg) v /= border_n;

  // Foreground mask: max-channel deviation above 0.1.
  int area = 0;
  int mx1 = W, my1 = H, mx2 = -1, my2 = -1;
  for (int y = box.y1; y < box.y2; ++y) {
    for (int x = box.x1; x < box.x2; ++x) {
      double dev = 0.0;
      for (int c = 0; c < 3; ++c) {
        dev = std::max(dev, std::fabs(o.image.at(c, y, x) - bg[c]));
      }
      if (dev > 0.1) {
        ++area;
        mx1 = std::min(mx1, x);
        my1 = std::min(my1, y);
        mx2 = std::max(mx2, x);
        my2 = std::max(my2, y);
      }
    }
  }
  if (area == 0) {
    throw ValidationError("empty crop: no foreground stands out from the border "
                          "background in [" +
                          std::to_string(box.x1) + "," + std::to_string(box.y1) + "," +
                          std::to_string(box.x2) + "," + std::to_string(box.y2) + "]");
  }
  const double mask_h = my2 - my1 + 1;
  const double mask_w = mx2 - mx1 + 1;
  const double aspect = mask_h / mask_w;
  const double fill = static_cast<double>(area) / (mask_h * mask_w);
  const double image_frac = static_cast<double>(area) / (static_cast<double>(W) * H);

  if (aspect >= 1.4 && fill >= 0.6) return ShapeCategory::Cylindrical;
  if (aspect <= 0.7) return ShapeCategory::Squashed;
  if (image_frac < 0.02) return ShapeCategory::ThinSmall;
  return ShapeCategory::Other;
}

double compute_accuracy(double acc_s, double acc_t) {
  if (!(acc_s >= 0.0 && acc_s <= 1.0)) {
    throw ValidationError("skill-selection rate must lie in [0,1]");
  }
  if (!(acc_t >= 0.0 && acc_t <= 1.0)) {
    throw ValidationError("execution rate must lie in [0,1]");
  }
  return acc_s * acc_t;
}

SceneManifest load_scene_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open scene manifest " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scene manifest " + path + " is not valid JSON: " + e.what());
  }
  SceneManifest m;
  try {
    m.img_w = j.value("width", 640);
    m.img_h = j.value("height", 480);
    if (m.img_w <= 0 || m.img_h <= 0) {
      throw ValidationError("scene extents must be positive");
    }
    if (!j.contains("objects") || !j["objects"].is_array()) {
      throw ValidationError("scene manifest needs an \"objects\" array");
    }
    for (const auto& jo : j["objects"]) {
      SceneObject obj;
      obj.name = jo.at("name").get<std::string>();
      const auto& b = jo.at("box");
      if (!b.is_array() || b.size() != 4) {
        throw ValidationError("object \"" + obj.name + "\" box must be [x1,y1,x2,y2]");
      }
      obj.box = BoundingBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(),
                            b[3].get<int>()};
      obj.box.validate(m.img_w, m.img_h);
      const std::string shape = jo.at("shape").get<std::string>();
      const auto parsed = parse_shape(shape);
      if (!parsed.has_value()) {
        throw ValidationError("object \"" + obj.name + "\" has unknown shape \"" +
                              shape + "\"");
      }
      obj.shape = *parsed;
      m.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scene manifest " + path + " schema error: " + e.what());
  }
  return m;
}

namespace {

bool rects_overlap(int ax1, int ay1, int ax2, int ay2, const BoundingBox& b) {
  return ax1 < b.x2 && b.x1 < ax2 && ay1 < b.y2 && b.y1 < ay2;
}

}  // namespace

SceneOccupancy derive_occupancy(const SceneManifest& scene, std::size_t target,
                                int margin_px) {
  if (target >= scene.objects.size()) {
    throw ValidationError("occupancy target index out of range");
  }
  if (margin_px < 1) throw ValidationError("occupancy margin must be >= 1 px");
  const BoundingBox& t = scene.objects[target].box;

  // Corridors clipped to the image; an empty corridor counts as clear.
  const int lx1 = std::max(0, t.x1 - margin_px), lx2 = t.x1;
  const int rx1 = t.x2, rx2 = std::min(scene.img_w, t.x2 + margin_px);
  const int ty1 = std::max(0, t.y1 - margin_px), ty2 = t.y1;

  bool left_clear = true, right_clear = true, top_clear = true;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i == target) continue;
    const BoundingBox& b = scene.objects[i].box;
    if (lx1 < lx2 && rects_overlap(lx1, t.y1, lx2, t.y2, b)) left_clear = false;
    if (rx1 < rx2 && rects_overlap(rx1, t.y1, rx2, t.y2, b)) right_clear = false;
    if (ty1 < ty2 && rects_overlap(t.x1, ty1, t.x2, ty2, b)) top_clear = false;
  }
  SceneOccupancy occ;
  occ.side_clear = left_clear || right_clear;
  occ.top_clear = top_clear;
  return occ;
}

const std::vector<ConformanceCell>& pinned_decision_table() {
  using S = ShapeCategory;
  static const std::vector<ConformanceCell> table = {
      {S::Cylindrical, true, false, Skill::SideGrasp},
      {S::Cylindrical, true, true, Skill::TopPinch},
      {S::Cylindrical, false, false, Skill::LiftUp},
      {S::Cylindrical, false, true, Skill::TopPinch},
      {S::Squashed, true, false, Skill::LiftUp},
      {S::Squashed, true, true, Skill::TopPinch},
      {S::Squashed, false, false, Skill::LiftUp},
      {S::Squashed, false, true, Skill::TopPinch},
      {S::ThinSmall, true, false, Skill::TopPinch},
      {S::ThinSmall, true, true, Skill::TopPinch},
      {S::ThinSmall, false, false, Skill::TopPinch},
      {S::ThinSmall, false, true, Skill::TopPinch},
      {S::Other, true, false, Skill::LiftUp},
      {S::Other, true, true, Skill::TopPinch},
      {S::Other, false, false, Skill::LiftUp},
      {S::Other, false, true, Skill::TopPinch},
  };
  return table;
}

double rule_conformance_rate(const std::vector<Rule>& rules) {
  // Representative boxes inside a 640x480 view: the "normal" box is 100x150
  // (4.9% of the image, neither tall, wide, small, nor oversized); the "small"
  // box is 40x50 (0.65%). Top approach clear throughout, per the table.
  const BoundingBox normal_box{200, 150, 300, 300};
  const BoundingBox small_box{300, 200, 340, 250};

  int agree = 0;
  const auto& table = pinned_decision_table();
  for (const ConformanceCell& cell : table) {
    SceneSummary scene;
    scene.img_w = 640;
    scene.img_h = 480;
    scene.occ.side_clear = cell.side_clear;
    scene.occ.top_clear = true;
    const BoundingBox& box = cell.small ? small_box : normal_box;
    const SkillDecision d = select_skill(box, cell.shape, scene, rules);
    if (d.skill == cell.expected) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(table.size());
}

}  // namespace rgmp
