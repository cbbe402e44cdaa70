#include "rgmp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rgmp/errors.hpp"
#include "rgmp/kinematics.hpp"
#include "rgmp/png_io.hpp"
#include "rgmp/rng.hpp"

namespace rgmp {

const std::array<std::pair<double, double>, 6> kModalStations = {{
    {0.20, 0.20},
    {0.80, 0.20},
    {0.50, 0.45},
    {0.20, 0.80},
    {0.80, 0.80},
    {0.35, 0.60},
}};

void SceneSpec::validate() const {
  if (img_w <= 0 || img_h <= 0) throw ValidationError("scene extents must be positive");
  if (!(r_min > 0.0) || !(r_max >= r_min)) {
    throw ValidationError("disk radius range must satisfy 0 < r_min <= r_max");
  }
  if (2.0 * r_max >= std::min(img_w, img_h)) {
    throw ValidationError("disk radius range exceeds the image");
  }
  if (noise_amp < 0.0 || noise_amp > 1.0) {
    throw ValidationError("noise amplitude must lie in [0,1]");
  }
  if (modal_jitter_px < 0.0) throw ValidationError("station jitter must be >= 0");
}

void Dataset::validate() const {
  if (static_cast<int>(items.size()) > capacity) {
    throw ValidationError("dataset holds " + std::to_string(items.size()) +
                          " samples, capacity is " + std::to_string(capacity));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Demonstration& d = items[i];
    if (d.image.rank() != 3 || d.image.dim(0) != 3 || d.image.dim(1) != spec.img_h ||
        d.image.dim(2) != spec.img_w) {
      throw ValidationError("sample " + std::to_string(i) +
                            " image extents disagree with the scene spec");
    }
    if (!action_in_bounds(d.joints)) {
      throw ValidationError("sample " + std::to_string(i) + " joints leave the workspace");
    }
  }
}

namespace {

void skill_color(Skill s, std::uint8_t out[3]) {
  switch (s) {
    case Skill::SideGrasp: out[0] = 230; out[1] = 120; out[2] = 30; break;   // can orange
    case Skill::LiftUp:    out[0] = 200; out[1] = 40;  out[2] = 40; break;   // crushed red
    case Skill::TopPinch:  out[0] = 240; out[1] = 240; out[2] = 220; break;  // napkin white
  }
}

}  // namespace

Dataset generate_dataset(int n, const SceneSpec& spec, Skill skill) {
  if (n < 1) throw ValidationError("sample count must be >= 1");
  spec.validate();

  const int W = spec.img_w, H = spec.img_h;
  const int amp = static_cast<int>(std::lround(spec.noise_amp * 255.0));
  std::uint8_t color[3] = {0, 0, 0};
  skill_color(skill, color);

  Dataset ds;
  ds.capacity = n;
  ds.skill = skill;
  ds.seed = spec.seed;
  ds.spec = spec;
  ds.items.reserve(static_cast<std::size_t>(n));

  const std::uint64_t stream = splitmix64(spec.seed);
  for (int i = 0; i < n; ++i) {
    Rng rng(splitmix64(stream + static_cast<std::uint64_t>(i)));
    const double r = rng.uniform(spec.r_min, spec.r_max);

    double cx, cy;
    if (spec.placement == Placement::Uniform) {
      cx = rng.uniform(spec.r_max, W - spec.r_max);
      cy = rng.uniform(spec.r_max, H - spec.r_max);
    } else {
      const auto& st = kModalStations[static_cast<std::size_t>(i) % kModalStations.size()];
      const double j = spec.modal_jitter_px;
      cx = st.first * W + rng.uniform(-j, j);
      cy = st.second * H + rng.uniform(-j, j);
    }

    Demonstration d;
    d.cx = cx;
    d.cy = cy;
    d.skill = skill;
    d.joints = kinematic_map(cx, cy, W, H);
    d.image = Tensor({3, H, W});

    // Background speckle first (independent of the disk), then the disk paint;
    // every value is an exact k/255 so PNG round trips are bit-identical.
    const double r2 = r * r;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        int px[3];
        for (int c = 0; c < 3; ++c) {
          const int noise = amp > 0 ? rng.uniform_int(2 * amp + 1) - amp : 0;
          px[c] = std::clamp(kBackgroundBase + noise, 0, 255);
        }
        const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
        if (dx * dx + dy * dy <= r2) {
          px[0] = color[0];
          px[1] = color[1];
          px[2] = color[2];
        }
        for (int c = 0; c < 3; ++c) d.image.at(c, y, x) = px[c] / 255.0;
      }
    }
    ds.items.push_back(std::move(d));
  }
  ds.validate();
  return ds;
}

namespace {

const char* placement_name(Placement p) {
  return p == Placement::Uniform ? "uniform" : "modal";
}

Placement parse_placement(const std::string& s) {
  if (s == "uniform") return Placement::Uniform;
  if (s == "modal") return Placement::Modal;
  throw ValidationError("unknown placement \"" + s + "\"");
}

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04d.png", i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

  nlohmann::json meta;
  meta["width"] = ds.spec.img_w;
  meta["height"] = ds.spec.img_h;
  meta["capacity"] = ds.capacity;
  meta["skill"] = to_string(ds.skill);
  meta["seed"] = ds.seed;
  meta["placement"] = placement_name(ds.spec.placement);
  meta["r_min"] = ds.spec.r_min;
  meta["r_max"] = ds.spec.r_max;
  meta["noise_amp"] = ds.spec.noise_amp;
  meta["modal_jitter_px"] = ds.spec.modal_jitter_px;
  meta["count"] = ds.items.size();
  {
    std::ofstream f(dir + "/meta.json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + dir + "/meta.json");
    f << meta.dump(2) << "\n";
  }

  std::ofstream manifest(dir + "/manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + dir + "/manifest.jsonl");
  const int W = ds.spec.img_w, H = ds.spec.img_h;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const Demonstration& d = ds.items[i];

    Rgb8Image raster;
    raster.w = W;
    raster.h = H;
    raster.bytes.resize(static_cast<std::size_t>(W) * H * 3);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = d.image.at(c, y, x);
          raster.bytes[(static_cast<std::size_t>(y) * W + x) * 3 +
                       static_cast<std::size_t>(c)] =
              static_cast<std::uint8_t>(std::clamp<long>(std::lround(v * 255.0), 0, 255));
        }
      }
    }
    const std::string name = image_name(static_cast<int>(i));
    write_png_rgb8(dir + "/" + name, raster);

    nlohmann::json rec;
    rec["image"] = name;
    rec["joints"] = d.joints;  // full shortest-round-trip precision
    rec["center"] = {d.cx, d.cy};
    rec["skill"] = to_string(d.skill);
    manifest << rec.dump() << "\n";
  }
  if (!manifest) throw IoError("short write to " + dir + "/manifest.jsonl");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/meta.json");
  if (!mf) throw IoError("cannot open " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir + "/meta.json is not valid JSON: " + e.what());
  }

  Dataset ds;
  try {
    ds.spec.img_w = meta.at("width").get<int>();
    ds.spec.img_h = meta.at("height").get<int>();
    ds.capacity = meta.at("capacity").get<int>();
    const auto skill = parse_skill(meta.at("skill").get<std::string>());
    if (!skill.has_value()) throw ValidationError("meta.json names an unknown skill");
    ds.skill = *skill;
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.spec.seed = ds.seed;
    ds.spec.placement = parse_placement(meta.at("placement").get<std::string>());
    ds.spec.r_min = meta.at("r_min").get<double>();
    ds.spec.r_max = meta.at("r_max").get<double>();
    ds.spec.noise_amp = meta.at("noise_amp").get<double>();
    ds.spec.modal_jitter_px = meta.at("modal_jitter_px").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(dir + "/meta.json schema error: " + e.what());
  }

  std::ifstream manifest(dir + "/manifest.jsonl");
  if (!manifest) throw IoError("cannot open " + dir + "/manifest.jsonl");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(dir + "/manifest.jsonl line " + std::to_string(line_no) +
                    " is not valid JSON: " + e.what());
    }
    Demonstration d;
    try {
      const auto joints = rec.at("joints").get<std::vector<double>>();
      if (joints.size() != 6) throw ValidationError("joints must have 6 entries");
      std::copy(joints.begin(), joints.end(), d.joints.begin());
      const auto center = rec.at("center").get<std::vector<double>>();
      if (center.size() != 2) throw ValidationError("center must have 2 entries");
      d.cx = center[0];
      d.cy = center[1];
      const auto skill = parse_skill(rec.at("skill").get<std::string>());
      if (!skill.has_value()) throw ValidationError("unknown skill in manifest");
      d.skill = *skill;

      const Rgb8Image raster = read_png_rgb8(dir + "/" + rec.at("image").get<std::string>());
      if (raster.w != ds.spec.img_w || raster.h != ds.spec.img_h) {
        throw ValidationError("image extents disagree with meta.json");
      }
      d.image = Tensor({3, raster.h, raster.w});
      for (int y = 0; y < raster.h; ++y) {
        for (int x = 0; x < raster.w; ++x) {
          for (int c = 0; c < 3; ++c) {
            d.image.at(c, y, x) =
                raster.bytes[(static_cast<std::size_t>(y) * raster.w + x) * 3 +
                             static_cast<std::size_t>(c)] /
                255.0;
          }
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(dir + "/manifest.jsonl line " + std::to_string(line_no) +
                            " schema error: " + e.what());
    }
    ds.items.push_back(std::move(d));
  }
  ds.validate();
  return ds;
}

std::vector<TrainSample> to_train_samples(const Dataset& ds) {
  std::vector<TrainSample> out;
  out.reserve(ds.items.size());
  for (const Demonstration& d : ds.items) {
    out.push_back(TrainSample{d.image, d.joints});
  }
  return out;
}

}  // namespace rgmp
