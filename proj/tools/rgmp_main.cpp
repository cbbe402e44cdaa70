// Command-line front end to the visuomotor policy stack: dataset synthesis,
// policy training, mixture fitting, evaluation, single-image inference, the
// skill-selection pipeline, and two self-checks (scan algebra, gradients).
//
// Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 numerical failure.
// Progress and logs go to stderr; artifacts and JSON results go to stdout.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgmp/checkpoint.hpp"
#include "rgmp/dataset.hpp"
#include "rgmp/errors.hpp"
#include "rgmp/evaluate.hpp"
#include "rgmp/gmm.hpp"
#include "rgmp/grad_check.hpp"
#include "rgmp/gss.hpp"
#include "rgmp/model.hpp"
#include "rgmp/png_io.hpp"
#include "rgmp/rng.hpp"
#include "rgmp/spatial_mixing.hpp"
#include "rgmp/vlm_client.hpp"

namespace {

using namespace rgmp;

Skill skill_from_flag(const std::string& s) {
  const auto parsed = parse_skill(s);
  if (!parsed.has_value()) throw ValidationError("unknown skill \"" + s + "\"");
  return *parsed;
}

Tensor tensor_from_image(const Rgb8Image& img) {
  Tensor t({3, img.h, img.w});
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) =
            img.bytes[(static_cast<std::size_t>(y) * img.w + x) * 3 +
                      static_cast<std::size_t>(c)] /
            255.0;
      }
    }
  }
  return t;
}

// ---- gen-data -------------------------------------------------------------

int cmd_gen_data(int n, std::uint64_t seed, const std::string& out, int size,
                 const std::string& placement, const std::string& skill) {
  SceneSpec spec;
  spec.img_w = size;
  spec.img_h = size;
  spec.seed = seed;
  if (placement == "uniform") {
    spec.placement = Placement::Uniform;
  } else if (placement == "modal") {
    spec.placement = Placement::Modal;
  } else {
    throw ValidationError("--placement must be uniform or modal");
  }

  const Dataset ds = generate_dataset(n, spec, skill_from_flag(skill));
  save_dataset(ds, out);
  std::cerr << "wrote " << ds.items.size() << " samples to " << out << "\n";

  nlohmann::json j;
  j["out"] = out;
  j["count"] = ds.items.size();
  j["placement"] = placement;
  j["size"] = size;
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const std::string& data, int epochs, double lr, std::uint64_t seed,
              const std::string& out, int patch, int batch, bool momentum, bool adaptive) {
  const Dataset ds = load_dataset(data);
  const std::vector<TrainSample> samples = to_train_samples(ds);
  std::cerr << "loaded " << samples.size() << " samples from " << data << "\n";

  ModelConfig mcfg;
  mcfg.patch = patch;
  PolicyModel model(mcfg, seed);

  TrainConfig tcfg;
  tcfg.epochs = epochs;
  tcfg.lr = lr;
  tcfg.batch = batch;
  tcfg.seed = seed;
  tcfg.use_momentum = momentum;
  tcfg.use_adaptive = adaptive;

  const TrainResult result = train_policy(model, samples, tcfg);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    if ((e + 1) % 5 == 0 || e == 0 || e + 1 == result.epoch_loss.size()) {
      std::cerr << "epoch " << (e + 1) << "/" << result.epoch_loss.size()
                << " loss " << result.epoch_loss[e] << "\n";
    }
  }

  save_model_checkpoint(out, model);
  std::cerr << "saved model to " << out << "\n";

  nlohmann::json j;
  j["out"] = out;
  j["epochs"] = result.epoch_loss.size();
  j["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- fit-gmm ----------------------------------------------------------------

int cmd_fit_gmm(const std::string& data, int k, double tol, std::uint64_t seed,
                const std::string& out, double ridge, int max_iter) {
  const Dataset ds = load_dataset(data);
  if (ds.items.empty()) throw ValidationError("dataset " + data + " is empty");

  Eigen::MatrixXd X(static_cast<Eigen::Index>(ds.items.size()), 6);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    for (int j = 0; j < 6; ++j) {
      X(static_cast<Eigen::Index>(i), j) = ds.items[i].joints[j];
    }
  }

  EmOptions opt;
  opt.seed = seed;
  opt.tol = tol;
  opt.ridge = ridge;
  opt.max_iter = max_iter;
  const EmResult fit = em_fit(X, k, opt);
  std::cerr << "EM finished after " << fit.iterations << " iterations"
            << (fit.converged ? " (converged)" : " (iteration cap)") << ", "
            << fit.reseeds << " reseeds, final log-likelihood "
            << (fit.ll_trace.empty() ? 0.0 : fit.ll_trace.back()) << "\n";

  save_gmm_checkpoint(out, fit.params);
  std::cerr << "saved mixture to " << out << "\n";

  nlohmann::json j;
  j["out"] = out;
  j["k"] = k;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["reseeds"] = fit.reseeds;
  j["final_ll"] = fit.ll_trace.empty() ? 0.0 : fit.ll_trace.back();
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& gmm_path,
             const std::string& data, const std::string& mode_flag, double tol) {
  RefineMode mode;
  if (mode_flag == "nearest") {
    mode = RefineMode::Nearest;
  } else if (mode_flag == "aggregate") {
    mode = RefineMode::Aggregate;
  } else {
    throw ValidationError("--mode must be nearest or aggregate");
  }

  const PolicyModel model = load_model_checkpoint(model_path);
  const GmmParams gmm = load_gmm_checkpoint(gmm_path);
  const std::vector<TrainSample> test = to_train_samples(load_dataset(data));
  std::cerr << "evaluating " << test.size() << " samples (" << mode_flag
            << ", tol " << tol << ")\n";

  const double acc_s = rule_conformance_rate(default_rule_catalog());
  const Metrics m = evaluate_policy(model, gmm, test, mode, tol, acc_s);
  std::cout << metrics_to_json(m) << "\n";
  return kExitOk;
}

// ---- infer ------------------------------------------------------------------

int cmd_infer(const std::string& model_path, const std::string& gmm_path,
              const std::string& image_path) {
  const PolicyModel model = load_model_checkpoint(model_path);
  const GmmParams gmm = load_gmm_checkpoint(gmm_path);
  const Tensor image = tensor_from_image(read_png_rgb8(image_path));

  const ActionVector raw = predict(model, image);
  const ActionVector refined = refine(raw, gmm, RefineMode::Nearest);

  nlohmann::json j = refined;
  std::cout << j.dump() << "\n";
  return kExitOk;
}

// ---- wkv-check ----------------------------------------------------------------

int cmd_wkv_check(std::uint64_t seed, int patches) {
  if (patches < 1) throw ValidationError("--patches must be >= 1");
  constexpr double kThreshold = 1e-10;
  constexpr int C = 4, P = 2;

  double worst = 0.0;
  int combo = 0;
  for (DecayMode dm : {DecayMode::PerPatch, DecayMode::Shared}) {
    for (ScanInit init : {ScanInit::K, ScanInit::KV}) {
      Rng rng(splitmix64(seed + static_cast<std::uint64_t>(combo++)));

      PatchSequence k, v;
      k.T = v.T = patches;
      k.C = v.C = C;
      k.P = v.P = P;
      k.D = v.D = C * P * P;
      k.gh = v.gh = patches;
      k.gw = v.gw = 1;
      const std::size_t td = static_cast<std::size_t>(patches) * k.D;
      k.v.resize(td);
      v.v.resize(td);
      // Positive keys keep the denominators away from the clamp, so the two
      // evaluation orders are compared on well-conditioned values.
      for (auto& x : k.v) x = rng.uniform(0.1, 1.5);
      for (auto& x : v.v) x = rng.uniform(-2.0, 2.0);

      WkvParams cfg;
      cfg.decay_mode = dm;
      cfg.init = init;
      std::vector<double> w(dm == DecayMode::PerPatch ? td
                                                      : static_cast<std::size_t>(C));
      for (auto& x : w) x = rng.uniform(0.05, 2.0);
      std::vector<double> u(C);
      for (auto& x : u) x = rng.uniform(-1.0, 1.0);

      const WkvTrace scan = wkv_scan(k, v, w, u, cfg);
      const std::vector<double> ref = wkv_unrolled_reference(k, v, w, u, cfg);

      double max_rel = 0.0;
      for (std::size_t i = 0; i < td; ++i) {
        const double denom =
            std::max({std::fabs(scan.y[i]), std::fabs(ref[i]), 1e-12});
        max_rel = std::max(max_rel, std::fabs(scan.y[i] - ref[i]) / denom);
      }
      worst = std::max(worst, max_rel);
      std::cout << "decay=" << (dm == DecayMode::PerPatch ? "per_patch" : "shared")
                << " init=" << (init == ScanInit::K ? "k" : "kv")
                << " steps=" << patches << " max_rel_err=" << max_rel << "\n";
    }
  }

  if (worst >= kThreshold) {
    std::cout << "WKV scan agreement: FAIL (max relative error " << worst
              << ", threshold " << kThreshold << ")\n";
    throw NumericalError("recursive scan disagrees with the unrolled form");
  }
  std::cout << "WKV scan agreement: PASS (max relative error " << worst
            << ", threshold " << kThreshold << ")\n";
  return kExitOk;
}

// ---- gss-sim ------------------------------------------------------------------

int cmd_gss_sim(const std::string& scene_path, const std::string& instruction,
                const std::string& client_flag) {
  const SceneManifest scene = load_scene_manifest(scene_path);
  Instruction instr{instruction};

  SessionConfig session;
  std::unique_ptr<VlmClient> client;
  if (client_flag == "mock") {
    session.client = SessionConfig::Client::Mock;
    client = std::make_unique<MockVlmClient>(scene);
  } else if (client_flag == "remote") {
    session.client = SessionConfig::Client::Remote;
    client = std::make_unique<RemoteVlmClient>(RemoteVlmClient::from_environment());
  } else {
    throw ValidationError("--client must be mock or remote");
  }

  const SkillDecision d =
      gss_plan(instr, scene, default_planning_context(), *client, session);

  nlohmann::json j;
  j["skill"] = to_string(d.skill);
  j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
  j["confidence"] = d.confidence;
  j["rationale"] = d.rationale;
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- grad-check ------------------------------------------------------------------

int cmd_grad_check(std::uint64_t seed, double eps, int entries) {
  constexpr double kTol = 1e-4;
  constexpr int kSide = 32;

  ModelConfig cfg;
  cfg.widths = {8, 12, 16};
  cfg.patch = 2;
  PolicyModel model(cfg, seed);

  Rng rng(splitmix64(seed + 0x9d5ULL));
  Tensor image({3, kSide, kSide});
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = rng.uniform(0.0, 1.0);
  ActionVector label{};
  for (double& x : label) x = rng.uniform(-1.0, 1.0);

  const RopeSet rope = model.make_rope_set(kSide, kSide);
  auto loss_and_grad = [&]() {
    ModelTrace tr;
    const ActionVector a = model.forward(image, rope, &tr);
    model.backward(mse_loss_grad(a, label), tr);
    return mse_loss(a, label);
  };
  auto loss_only = [&]() {
    return mse_loss(model.forward(image, rope, nullptr), label);
  };

  std::cerr << "checking gradients (widths 8/12/16, " << kSide << "x" << kSide
            << " input, eps " << eps << ", " << entries << " entries/param)\n";
  const GradCheckReport report =
      grad_check(loss_and_grad, loss_only, model.parameters(), eps, entries, seed);

  std::printf("%-36s %12s %8s\n", "parameter", "max_rel_err", "checked");
  for (const GradCheckEntry& e : report.per_param) {
    std::printf("%-36s %12.3e %8d\n", e.param.c_str(), e.max_rel_err, e.checked);
  }
  std::printf("overall max relative error: %.3e (tolerance %.1e)\n",
              report.max_rel_err, kTol);

  if (!report.ok(kTol)) {
    throw NumericalError("gradient check failed: max relative error " +
                         std::to_string(report.max_rel_err));
  }
  std::cout << "gradient check: PASS\n";
  return kExitOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Desk-scale visuomotor policy toolkit"};
  app.require_subcommand(1);

  // gen-data
  int gd_n = 40, gd_size = 128;
  std::uint64_t gd_seed = 0;
  std::string gd_out, gd_placement = "uniform", gd_skill = "LiftUp";
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic demonstration dataset");
  gen->add_option("--n", gd_n, "Sample count")->capture_default_str();
  gen->add_option("--seed", gd_seed, "Generation seed")->capture_default_str();
  gen->add_option("--out", gd_out, "Output directory")->required();
  gen->add_option("--size", gd_size, "Square image edge, pixels")->capture_default_str();
  gen->add_option("--placement", gd_placement, "Center placement: uniform|modal")
      ->capture_default_str();
  gen->add_option("--skill", gd_skill, "Skill tag: SideGrasp|LiftUp|TopPinch")
      ->capture_default_str();

  // train
  std::string tr_data, tr_out;
  int tr_epochs = 60, tr_patch = 8, tr_batch = 8;
  double tr_lr = 0.05;
  std::uint64_t tr_seed = 0;
  auto* train = app.add_subcommand("train", "Train the policy on a dataset directory");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--epochs", tr_epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", tr_lr, "Learning rate")->capture_default_str();
  train->add_option("--seed", tr_seed, "Init and shuffle seed")->capture_default_str();
  train->add_option("--out", tr_out, "Model checkpoint path")->required();
  train->add_option("--patch", tr_patch, "Spatial-mixing patch edge")->capture_default_str();
  train->add_option("--batch", tr_batch, "Mini-batch size (0 = full batch)")
      ->capture_default_str();
  bool tr_momentum = false;
  train->add_flag("--momentum", tr_momentum, "Enable heavy-ball momentum (0.9)");
  bool tr_adaptive = false;
  train->add_flag("--adaptive", tr_adaptive,
                  "Enable adaptive per-parameter step sizes (Adam-style)");

  // fit-gmm
  std::string fg_data, fg_out;
  int fg_k = 6, fg_max_iter = 200;
  double fg_tol = 1e-6, fg_ridge = 1e-6;
  std::uint64_t fg_seed = 0;
  auto* fit = app.add_subcommand("fit-gmm", "Fit the action-space mixture to dataset labels");
  fit->add_option("--data", fg_data, "Dataset directory")->required();
  fit->add_option("--k", fg_k, "Component count")->capture_default_str();
  fit->add_option("--tol", fg_tol, "Log-likelihood convergence threshold")
      ->capture_default_str();
  fit->add_option("--seed", fg_seed, "Seeding RNG")->capture_default_str();
  fit->add_option("--out", fg_out, "Mixture checkpoint path")->required();
  fit->add_option("--ridge", fg_ridge, "Covariance ridge")->capture_default_str();
  fit->add_option("--max-iter", fg_max_iter, "EM iteration cap")->capture_default_str();

  // eval
  std::string ev_model, ev_gmm, ev_data, ev_mode = "nearest";
  double ev_tol = 0.05;
  auto* ev = app.add_subcommand("eval", "Evaluate model + mixture on a dataset");
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--gmm", ev_gmm, "Mixture checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--mode", ev_mode, "Refinement mode: nearest|aggregate")
      ->capture_default_str();
  ev->add_option("--tol", ev_tol, "Per-joint success tolerance, radians")
      ->capture_default_str();

  // infer
  std::string in_model, in_gmm, in_image;
  auto* infer = app.add_subcommand("infer", "Refined action for one PNG image");
  infer->add_option("--model", in_model, "Model checkpoint")->required();
  infer->add_option("--gmm", in_gmm, "Mixture checkpoint")->required();
  infer->add_option("--image", in_image, "Input PNG")->required();

  // wkv-check
  std::uint64_t wk_seed = 0;
  int wk_patches = 16;
  auto* wkv = app.add_subcommand(
      "wkv-check", "Cross-check the recursive scan against its unrolled form");
  wkv->add_option("--seed", wk_seed, "Input RNG seed")->capture_default_str();
  wkv->add_option("--patches", wk_patches, "Sequence length")->capture_default_str();

  // gss-sim
  std::string gs_scene, gs_instruction, gs_client = "mock";
  auto* gss = app.add_subcommand("gss-sim", "Run the skill selector on a scene manifest");
  gss->add_option("--scene", gs_scene, "Scene manifest JSON")->required();
  gss->add_option("--instruction", gs_instruction, "Natural-language target")->required();
  gss->add_option("--client", gs_client, "Language-model client: mock|remote")
      ->capture_default_str();

  // grad-check
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-4;
  int gc_entries = 2;
  auto* gc = app.add_subcommand(
      "grad-check", "Verify hand-written gradients with central differences");
  gc->add_option("--seed", gc_seed, "Model init and probe seed")->capture_default_str();
  gc->add_option("--eps", gc_eps, "Finite-difference step")->capture_default_str();
  gc->add_option("--entries", gc_entries, "Probed entries per parameter")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (gen->parsed()) return cmd_gen_data(gd_n, gd_seed, gd_out, gd_size, gd_placement, gd_skill);
  if (train->parsed())
    return cmd_train(tr_data, tr_epochs, tr_lr, tr_seed, tr_out, tr_patch, tr_batch, tr_momentum,
                     tr_adaptive);
  if (fit->parsed()) return cmd_fit_gmm(fg_data, fg_k, fg_tol, fg_seed, fg_out, fg_ridge, fg_max_iter);
  if (ev->parsed()) return cmd_eval(ev_model, ev_gmm, ev_data, ev_mode, ev_tol);
  if (infer->parsed()) return cmd_infer(in_model, in_gmm, in_image);
  if (wkv->parsed()) return cmd_wkv_check(wk_seed, wk_patches);
  if (gss->parsed()) return cmd_gss_sim(gs_scene, gs_instruction, gs_client);
  if (gc->parsed()) return cmd_grad_check(gc_seed, gc_eps, gc_entries);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rgmp::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return rgmp::kExitValidation;
  } catch (const rgmp::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return rgmp::kExitIo;
  } catch (const rgmp::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return rgmp::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
