// unipose command-line front end over the C API. The exit code is the
// library status: 0 ok, 1 internal, 2 validation, 3 estimation, 4 provider.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unipose/unipose.h"

namespace {

using nlohmann::json;

int report(up_status st) {
  if (st != UP_OK) std::cerr << "error: " << up_last_error() << "\n";
  return static_cast<int>(st);
}

struct ConfigOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string provider;
  std::string provider_cmd;
  std::optional<int> iters;
  std::optional<int> steps;
  bool no_refine = false;

  void add_to(CLI::App* app, bool refine_options) {
    app->add_option("--config", config_path, "Pipeline configuration JSON")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Random seed for every stage");
    app->add_option("--provider", provider, "Feature provider: auto, files, subprocess or synthetic");
    app->add_option("--provider-cmd", provider_cmd, "Shell command of the provider process (subprocess mode)");
    app->add_option("--iters", iters, "Coarse re-render iterations");
    if (refine_options) {
      app->add_option("--steps", steps, "Refinement steps");
      app->add_flag("--no-refine", no_refine, "Skip pixel-level refinement");
    }
  }

  // Returns false (after printing) when the config file cannot be parsed.
  bool build(std::string& out) const {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        std::cerr << "error: " << config_path << ": " << e.what() << "\n";
        return false;
      }
    }
    if (seed) j["seed"] = *seed;
    if (!provider.empty()) j["provider"]["mode"] = provider;
    if (!provider_cmd.empty()) {
      j["provider"]["command"] = provider_cmd;
      if (provider.empty()) j["provider"]["mode"] = "subprocess";
    }
    if (iters) j["coarse"]["iters"] = *iters;
    if (steps) j["refine"]["steps"] = *steps;
    if (no_refine) j["refine"]["enabled"] = false;
    out = j.dump();
    return true;
  }
};

class Context {
 public:
  explicit Context(const ConfigOptions& opts) {
    std::string cfg;
    if (!opts.build(cfg)) {
      status_ = UP_ERR_VALIDATION;
      return;
    }
    status_ = up_context_create(cfg.c_str(), &ctx_);
  }
  ~Context() { up_context_destroy(ctx_); }
  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  up_status status() const { return status_; }
  up_context* get() const { return ctx_; }

 private:
  up_context* ctx_ = nullptr;
  up_status status_ = UP_OK;
};

void print_pose(const Context& ctx) {
  up_similarity p;
  double conf = 0.0;
  if (up_last_pose(ctx.get(), &p, &conf) != UP_OK) return;
  std::printf("T = [%.6f, %.6f, %.6f]  s = %.6f  confidence = %.4f\n", p.t[0], p.t[1], p.t[2], p.s, conf);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-level 6-DoF object pose estimation from universal features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(up_version()));

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene directory");
  std::string synth_out, synth_spec, shape = "cube";
  std::uint64_t synth_seed = 0;
  double depth_noise = 0.0, feature_noise = 0.0, outlier_rate = 0.0, gap_slope = 0.0;
  std::vector<double> shape_scale;
  synth->add_option("--out", synth_out, "Output scene directory")->required();
  synth->add_option("--spec", synth_spec, "Synthetic scene spec JSON (flags below override it)")->check(CLI::ExistingFile);
  auto* o_shape = synth->add_option("--shape", shape, "cube, box, cylinder, sphere or an OBJ path");
  auto* o_seed = synth->add_option("--seed", synth_seed, "Pose and noise seed");
  auto* o_dn = synth->add_option("--depth-noise", depth_noise, "Depth noise sigma in metres");
  auto* o_fn = synth->add_option("--feature-noise", feature_noise, "Target feature noise sigma");
  auto* o_or = synth->add_option("--outlier-rate", outlier_rate, "Fraction of target patches with random features");
  auto* o_gs = synth->add_option("--gap-slope", gap_slope, "Reference feature noise per degree of pose gap");
  auto* o_ss = synth->add_option("--shape-scale", shape_scale, "Target = reference scaled per axis (1 or 3 values)")
                   ->expected(1, 3);

  // estimate / coarse / refine / match
  auto* estimate = app.add_subcommand("estimate", "Coarse estimation followed by refinement");
  auto* coarse = app.add_subcommand("coarse", "Coarse estimation only");
  auto* refine = app.add_subcommand("refine", "Refine a given coarse pose");
  auto* match = app.add_subcommand("match", "Match the target against one canonical view");
  std::string scene, out, coarse_pose;
  int view = 0;
  ConfigOptions est_opts, coarse_opts, refine_opts, match_opts;
  for (auto* sc : {estimate, coarse, refine, match}) {
    sc->add_option("--scene", scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
    sc->add_option("--out", out, "Output directory")->required();
  }
  est_opts.add_to(estimate, true);
  coarse_opts.add_to(coarse, false);
  refine_opts.add_to(refine, true);
  match_opts.add_to(match, false);
  refine->add_option("--coarse-pose", coarse_pose, "Coarse pose JSON")->required()->check(CLI::ExistingFile);
  match->add_option("--view", view, "Canonical view index 0..3")->check(CLI::Range(0, 3));

  // render
  auto* render = app.add_subcommand("render", "Render a mesh at a pose");
  std::string mesh, pose, intrinsics, render_out;
  render->add_option("--mesh", mesh, "Mesh OBJ")->required();
  render->add_option("--pose", pose, "Pose JSON")->required();
  render->add_option("--intrinsics", intrinsics, "Intrinsics JSON")->required();
  render->add_option("--out", render_out, "Output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score predicted poses against ground truth");
  std::string pred_dir, gt_dir, eval_out;
  eval->add_option("--pred", pred_dir, "Directory of predicted pose JSONs")->required();
  eval->add_option("--gt", gt_dir, "Directory of ground-truth pose JSONs with extents")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return UP_ERR_VALIDATION;
  }

  if (synth->parsed()) {
    json spec = json::object();
    if (!synth_spec.empty()) {
      std::ifstream in(synth_spec);
      try {
        spec = json::parse(in);
      } catch (const json::exception& e) {
        std::cerr << "error: " << synth_spec << ": " << e.what() << "\n";
        return UP_ERR_VALIDATION;
      }
    }
    if (o_shape->count() || !spec.contains("shape")) spec["shape"] = shape;
    if (o_seed->count()) spec["seed"] = synth_seed;
    if (o_dn->count()) spec["depth_noise_m"] = depth_noise;
    if (o_fn->count()) spec["features"]["target_noise"] = feature_noise;
    if (o_or->count()) spec["features"]["outlier_rate"] = outlier_rate;
    if (o_gs->count()) spec["features"]["gap_slope"] = gap_slope;
    if (o_seed->count() && !spec["features"].contains("seed")) spec["features"]["seed"] = synth_seed;
    if (o_ss->count()) {
      if (shape_scale.size() == 1) shape_scale.assign(3, shape_scale[0]);
      if (shape_scale.size() != 3) {
        std::cerr << "error: --shape-scale takes 1 or 3 values\n";
        return UP_ERR_VALIDATION;
      }
      spec["shape_scale"] = shape_scale;
    }
    const int rc = report(up_synth(spec.dump().c_str(), synth_out.c_str()));
    if (rc == 0) std::printf("wrote scene %s\n", synth_out.c_str());
    return rc;
  }

  if (estimate->parsed() || coarse->parsed() || refine->parsed() || match->parsed()) {
    const ConfigOptions& opts = estimate->parsed() ? est_opts
                                : coarse->parsed() ? coarse_opts
                                : refine->parsed() ? refine_opts
                                                   : match_opts;
    Context ctx(opts);
    if (ctx.status() != UP_OK) return report(ctx.status());
    up_status st = UP_OK;
    if (estimate->parsed()) st = up_estimate(ctx.get(), scene.c_str(), out.c_str());
    if (coarse->parsed()) st = up_coarse(ctx.get(), scene.c_str(), out.c_str());
    if (refine->parsed()) st = up_refine(ctx.get(), scene.c_str(), coarse_pose.c_str(), out.c_str());
    if (match->parsed()) st = up_match(ctx.get(), scene.c_str(), view, out.c_str());
    if (st == UP_OK && !match->parsed()) print_pose(ctx);
    if (st == UP_OK) std::printf("outputs in %s\n", out.c_str());
    return report(st);
  }

  if (render->parsed()) {
    const int rc = report(up_render(mesh.c_str(), pose.c_str(), intrinsics.c_str(), render_out.c_str()));
    if (rc == 0) std::printf("outputs in %s\n", render_out.c_str());
    return rc;
  }

  if (eval->parsed()) {
    char* table = nullptr;
    const up_status st = up_eval(pred_dir.c_str(), gt_dir.c_str(), eval_out.c_str(), &table);
    if (st == UP_OK) {
      std::fputs(table, stdout);
      up_string_free(table);
    }
    return report(st);
  }
  return UP_ERR_INTERNAL;
}
