#include "rgmp/vlm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstring>

#include <httplib.h>
#include <json.hpp>

#include "rgmp/errors.hpp"

namespace rgmp {

const char* const kLocatePromptTemplate =
    "Instruction: Identify target object in image and output bounding box "
    "[x1, y1, x2, y2]";

const char* const kSkillPromptTemplate =
    "You are a robot with three Skills: side Grasp, Lift up, and top Pinch. The "
    "image you are observing has a resolution of 640x480. Based on the "
    "observation, the Coordinates of the bounding box and the Shape information "
    "of the object, Choose the skill without collision.";

void PlanningContext::validate() const {
  if (locate_template.empty()) throw ValidationError("locate prompt template is empty");
  if (skill_template.empty()) throw ValidationError("skill prompt template is empty");
}

PlanningContext default_planning_context() {
  PlanningContext ctx;
  ctx.locate_template = kLocatePromptTemplate;
  ctx.skill_template = kSkillPromptTemplate;
  ctx.examples = {
      {"pass me the Fanta", "cylindrical", "SideGrasp"},
      {"pick up the crushed cola can", "squashed", "LiftUp"},
      {"hand me the napkin", "thin_small", "TopPinch"},
  };
  return ctx;
}

void SessionConfig::validate() const {
  if (max_rounds < 1) throw ValidationError("session needs at least one round");
}

namespace {

std::string lowercase(const std::string& s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

MockVlmClient::MockVlmClient(SceneManifest scene) : scene_(std::move(scene)) {}

std::string MockVlmClient::complete(const std::string& prompt,
                                    const std::vector<std::uint8_t>& image_png) {
  (void)image_png;
  const std::string p = lowercase(prompt);
  for (const SceneObject& obj : scene_.objects) {
    if (!obj.name.empty() && p.find(lowercase(obj.name)) != std::string::npos) {
      return "[" + std::to_string(obj.box.x1) + ", " + std::to_string(obj.box.y1) +
             ", " + std::to_string(obj.box.x2) + ", " + std::to_string(obj.box.y2) + "]";
    }
  }
  return "target not found";
}

RemoteVlmClient::RemoteVlmClient(std::string url, std::string token)
    : url_(std::move(url)), token_(std::move(token)) {
  if (url_.empty()) throw ValidationError("remote endpoint URL is empty");
}

RemoteVlmClient RemoteVlmClient::from_environment() {
  const char* url = std::getenv("RGMP_VLM_URL");
  if (url == nullptr || *url == '\0') {
    throw ValidationError("RGMP_VLM_URL is not set; the remote client needs an endpoint");
  }
  const char* token = std::getenv("RGMP_VLM_TOKEN");
  return RemoteVlmClient(url, token == nullptr ? "" : token);
}

std::string RemoteVlmClient::complete(const std::string& prompt,
                                      const std::vector<std::uint8_t>& image_png) {
  // Split "http://host[:port][/path]".
  std::string rest;
  if (url_.rfind("http://", 0) == 0) {
    rest = url_.substr(7);
  } else if (url_.rfind("https://", 0) == 0) {
    throw IoError("https endpoints are not supported by this build; use http");
  } else {
    rest = url_;
  }
  const std::size_t slash = rest.find('/');
  const std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : rest.substr(slash);

  httplib::Client cli(("http://" + hostport).c_str());
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(30, 0);

  nlohmann::json body;
  body["prompt"] = prompt;
  body["image_b64"] = base64_encode(image_png.data(), image_png.size());

  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  auto res = cli.Post(path.c_str(), headers, body.dump(), "application/json");
  if (!res) {
    throw IoError("request to " + url_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw IoError("endpoint " + url_ + " returned status " + std::to_string(res->status));
  }
  try {
    const nlohmann::json reply = nlohmann::json::parse(res->body);
    return reply.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("endpoint reply is not the expected {\"text\": ...} JSON: " +
                  std::string(e.what()));
  }
}

std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<std::uint32_t>(data[i + 1]) << 8;
    if (i + 2 < n) v |= static_cast<std::uint32_t>(data[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < n ? alphabet[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? alphabet[v & 63] : '=');
  }
  return out;
}

BoundingBox parse_box_reply(const std::string& reply, int img_w, int img_h,
                            bool* clipped) {
  if (lowercase(reply).find("target not found") != std::string::npos) {
    throw ValidationError("target not found: the scene has no object matching the "
                          "instruction");
  }
  const std::size_t open = reply.find('[');
  if (open == std::string::npos) {
    throw ValidationError("could not parse bounding box from reply: " + reply);
  }
  double vals[4];
  const char* s = reply.c_str() + open + 1;
  for (int i = 0; i < 4; ++i) {
    char* end = nullptr;
    vals[i] = std::strtod(s, &end);
    if (end == s) {
      throw ValidationError("could not parse bounding box from reply: " + reply);
    }
    s = end;
    while (*s == ' ' || *s == '\t') ++s;
    if (i < 3) {
      if (*s != ',') {
        throw ValidationError("could not parse bounding box from reply: " + reply);
      }
      ++s;
    }
  }
  while (*s == ' ' || *s == '\t') ++s;
  if (*s != ']') {
    throw ValidationError("could not parse bounding box from reply: " + reply);
  }

  const auto clamp = [](double v, int hi) {
    return std::max(0, std::min(hi, static_cast<int>(std::llround(v))));
  };
  BoundingBox box;
  box.x1 = clamp(vals[0], img_w);
  box.y1 = clamp(vals[1], img_h);
  box.x2 = clamp(vals[2], img_w);
  box.y2 = clamp(vals[3], img_h);
  if (clipped != nullptr) {
    *clipped = box.x1 != std::llround(vals[0]) || box.y1 != std::llround(vals[1]) ||
               box.x2 != std::llround(vals[2]) || box.y2 != std::llround(vals[3]);
  }
  if (box.x1 >= box.x2 || box.y1 >= box.y2) {
    throw ValidationError("bounding box from reply is degenerate after clipping: " +
                          reply);
  }
  return box;
}

std::optional<Skill> parse_skill_reply(const std::string& reply) {
  const std::string r = lowercase(reply);
  // Normalized spellings with and without separators.
  const struct {
    const char* needle;
    Skill skill;
  } table[] = {
      {"sidegrasp", Skill::SideGrasp}, {"side grasp", Skill::SideGrasp},
      {"side_grasp", Skill::SideGrasp}, {"liftup", Skill::LiftUp},
      {"lift up", Skill::LiftUp},       {"lift_up", Skill::LiftUp},
      {"toppinch", Skill::TopPinch},    {"top pinch", Skill::TopPinch},
      {"top_pinch", Skill::TopPinch},
  };
  std::size_t best_pos = std::string::npos;
  std::optional<Skill> best;
  for (const auto& entry : table) {
    const std::size_t pos = r.find(entry.needle);
    if (pos != std::string::npos && pos < best_pos) {
      best_pos = pos;
      best = entry.skill;
    }
  }
  return best;
}

BoundingBox locate_target(const Instruction& instr, const Observation& obs,
                          const PlanningContext& ctx, VlmClient& client,
                          const SessionConfig& session, LocateInfo* info) {
  instr.validate();
  ctx.validate();
  session.validate();

  int img_w = 640, img_h = 480;
  std::vector<std::uint8_t> png;
  if (obs.image.rank() == 3 && obs.image.dim(0) == 3) {
    img_h = obs.image.dim(1);
    img_w = obs.image.dim(2);
    Rgb8Image raster;
    raster.w = img_w;
    raster.h = img_h;
    raster.bytes.resize(static_cast<std::size_t>(img_w) * img_h * 3);
    for (int y = 0; y < img_h; ++y) {
      for (int x = 0; x < img_w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(obs.image.at(c, y, x), 0.0, 1.0);
          raster.bytes[(static_cast<std::size_t>(y) * img_w + x) * 3 +
                       static_cast<std::size_t>(c)] =
              static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    png = encode_png_rgb8(raster);
  }

  const std::string prompt = ctx.locate_template + "\nTarget: " + instr.text;

  std::string reply;
  int attempts = 0;
  for (int round = 1; round <= session.max_rounds; ++round) {
    ++attempts;
    try {
      reply = client.complete(prompt, png);
      break;
    } catch (const IoError&) {
      if (round == session.max_rounds) throw;
    }
  }

  bool clipped = false;
  BoundingBox box = parse_box_reply(reply, img_w, img_h, &clipped);
  if (info != nullptr) {
    info->attempts = attempts;
    info->clipped = clipped;
    info->raw_reply = reply;
  }
  return box;
}

Rgb8Image render_scene_image(const SceneManifest& scene) {
  Rgb8Image img;
  img.w = scene.img_w;
  img.h = scene.img_h;
  img.bytes.assign(static_cast<std::size_t>(img.w) * img.h * 3, 200);  // gray ground
  for (const SceneObject& obj : scene.objects) {
    std::uint8_t color[3] = {0, 0, 0};
    switch (obj.shape) {
      case ShapeCategory::Cylindrical: color[0] = 230; color[1] = 140; color[2] = 40; break;
      case ShapeCategory::Squashed:    color[0] = 160; color[1] = 60;  color[2] = 60; break;
      case ShapeCategory::ThinSmall:   color[0] = 245; color[1] = 245; color[2] = 230; break;
      case ShapeCategory::Other:       color[0] = 90;  color[1] = 120; color[2] = 200; break;
    }
    for (int y = obj.box.y1; y < obj.box.y2; ++y) {
      for (int x = obj.box.x1; x < obj.box.x2; ++x) {
        std::uint8_t* px = img.bytes.data() + (static_cast<std::size_t>(y) * img.w + x) * 3;
        px[0] = color[0];
        px[1] = color[1];
        px[2] = color[2];
      }
    }
  }
  return img;
}

namespace {

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const int ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  if (ix1 >= ix2 || iy1 >= iy2) return 0.0;
  const double inter = static_cast<double>(ix2 - ix1) * (iy2 - iy1);
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return inter / uni;
}

}  // namespace

SkillDecision gss_plan(const Instruction& instr, const SceneManifest& scene,
                       const PlanningContext& ctx, VlmClient& client,
                       const SessionConfig& session) {
  // Observation: the rendered scene raster in [0,1].
  const Rgb8Image raster = render_scene_image(scene);
  Observation obs;
  obs.image = Tensor({3, raster.h, raster.w});
  for (int y = 0; y < raster.h; ++y) {
    for (int x = 0; x < raster.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        obs.image.at(c, y, x) =
            raster.bytes[(static_cast<std::size_t>(y) * raster.w + x) * 3 +
                         static_cast<std::size_t>(c)] /
            255.0;
      }
    }
  }

  LocateInfo info;
  const BoundingBox box = locate_target(instr, obs, ctx, client, session, &info);

  // Match the located box back to the manifest for shape and occupancy.
  double best_iou = 0.0;
  std::size_t best = scene.objects.size();
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const double iou = box_iou(box, scene.objects[i].box);
    if (iou > best_iou) {
      best_iou = iou;
      best = i;
    }
  }

  ShapeCategory shape;
  SceneSummary summary;
  summary.img_w = scene.img_w;
  summary.img_h = scene.img_h;
  if (best < scene.objects.size() && best_iou > 0.0) {
    shape = scene.objects[best].shape;
    summary.occ = derive_occupancy(scene, best);
  } else {
    shape = classify_shape(obs, box);  // localization missed every manifest object
    summary.occ = SceneOccupancy{};
  }

  SkillDecision d = select_skill(box, shape, summary, default_rule_catalog());
  if (info.clipped) d.rationale += " [localization clipped to image bounds]";
  return d;
}

}  // namespace rgmp
