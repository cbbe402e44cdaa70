#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rgmp/gss.hpp"
#include "rgmp/png_io.hpp"

namespace rgmp {

// Prompt templates, mirrored byte-for-byte (plus trailing newline) by the text
// assets under assets/prompts/.
extern const char* const kLocatePromptTemplate;
extern const char* const kSkillPromptTemplate;

// One in-context priming example: an instruction, the object's shape label, and
// the skill that handled it.
struct IcExample {
  std::string instruction;
  std::string shape;
  std::string skill;
};

struct PlanningContext {
  std::string locate_template;
  std::string skill_template;
  std::vector<IcExample> examples;

  void validate() const;  // both templates non-empty
};

// Templates plus a small set of canonical examples (can -> side grasp, crushed
// can -> lift up, napkin -> top pinch).
PlanningContext default_planning_context();

struct SessionConfig {
  int max_rounds = 3;  // client attempts before the transport error propagates
  enum class Client { Mock, Remote } client = Client::Mock;

  void validate() const;  // max_rounds >= 1
};

// ---- clients -------------------------------------------------------------------

// One request-response against a vision-language backend: a prompt and the
// PNG-encoded observation in, raw reply text out. Transport failures raise
// IoError (retried by locate_target up to the session's round limit).
class VlmClient {
 public:
  virtual ~VlmClient() = default;
  virtual std::string complete(const std::string& prompt,
                               const std::vector<std::uint8_t>& image_png) = 0;
};

// Offline deterministic client: resolves the first scene object whose name
// appears in the prompt (case-insensitive) to "[x1, y1, x2, y2]", otherwise
// replies "target not found".
class MockVlmClient : public VlmClient {
 public:
  explicit MockVlmClient(SceneManifest scene);
  std::string complete(const std::string& prompt,
                       const std::vector<std::uint8_t>& image_png) override;

 private:
  SceneManifest scene_;
};

// HTTP client: POST {"prompt": ..., "image_b64": ...} as JSON, reply {"text": ...}.
class RemoteVlmClient : public VlmClient {
 public:
  RemoteVlmClient(std::string url, std::string token);
  // Reads RGMP_VLM_URL (required) and RGMP_VLM_TOKEN (optional).
  static RemoteVlmClient from_environment();

  std::string complete(const std::string& prompt,
                       const std::vector<std::uint8_t>& image_png) override;

 private:
  std::string url_;
  std::string token_;
};

std::string base64_encode(const std::uint8_t* data, std::size_t n);

// ---- wire-format parsing ----------------------------------------------------------

// Accepts "[x1, y1, x2, y2]" with optional whitespace anywhere in the reply;
// coordinates are clipped to the image (clipped flag reported). Unparsable or
// degenerate replies raise ValidationError; a "target not found" reply raises
// ValidationError carrying that phrase.
BoundingBox parse_box_reply(const std::string& reply, int img_w, int img_h,
                            bool* clipped);

// First case-insensitive skill name found in the reply.
std::optional<Skill> parse_skill_reply(const std::string& reply);

// ---- pipeline ----------------------------------------------------------------------

struct LocateInfo {
  int attempts = 0;
  bool clipped = false;
  std::string raw_reply;
};

// Stage 1 of the selector: prompt assembly, client round(s), box parsing.
BoundingBox locate_target(const Instruction& instr, const Observation& obs,
                          const PlanningContext& ctx, VlmClient& client,
                          const SessionConfig& session, LocateInfo* info = nullptr);

// Deterministic raster of a scene manifest (gray ground, one flat-colored
// rectangle per object, color keyed by shape) - the observation image used when
// a scene arrives as a manifest rather than a camera frame.
Rgb8Image render_scene_image(const SceneManifest& scene);

// Full pipeline over a mock scene: locate -> manifest match -> occupancy ->
// shape -> rule dispatch. The decision rationale names the fired rule and notes
// a clipped localization.
SkillDecision gss_plan(const Instruction& instr, const SceneManifest& scene,
                       const PlanningContext& ctx, VlmClient& client,
                       const SessionConfig& session);

}  // namespace rgmp
