#pragma once

// Scene-directory workflows behind the CLI subcommands: configuration, scene
// loading and cross-validation, provider selection, and the artefacts each
// subcommand writes.
//
// Scene directory layout:
//   intrinsics.json                 camera
//   depth.uftn | depth.png          metres (f32 UFTN) or millimetres (16-bit PNG)
//   mask.png                        object mask, non-zero = object
//   mesh.obj                        reference mesh
//   rgb.png                         target image (subprocess provider input)
//   features/                       precomputed features (files provider)
//   gt_pose.json, synth.json        ground truth and generator spec (synthetic scenes)

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unipose/coarse.hpp"
#include "unipose/eval.hpp"
#include "unipose/provider.hpp"
#include "unipose/refine.hpp"
#include "unipose/synthetic.hpp"

namespace unipose {

struct ProviderSettings {
  // auto: synthetic when the scene has synth.json and gt_pose.json, else files.
  std::string mode = "auto";  // auto | files | subprocess | synthetic
  std::string command;        // subprocess: shell command line
  std::vector<std::string> tags = {"dinov2", "sd"};
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  ProviderSettings provider;
  CoarseConfig coarse;
  RefineConfig refine;
  bool refine_enabled = true;
};

void validate(const PipelineConfig& cfg);
// Seeds of the stages follow the top-level seed.
PipelineConfig with_derived_seeds(PipelineConfig cfg);

nlohmann::json config_to_json(const PipelineConfig& cfg);
// Missing keys keep their defaults; unknown keys are a validation error.
PipelineConfig config_from_json(const nlohmann::json& j);

struct Scene {
  std::filesystem::path dir;
  CameraIntrinsics intrinsics;
  DepthMap depth;
  Mask mask;
  TriangleMesh mesh;
  std::optional<SimilarityTransform> gt;
  std::optional<SynthSpec> synth;
};

// Throws kValidation naming the offending path when a required file is missing
// or the files disagree on image size.
Scene load_scene(const std::filesystem::path& dir);
Observation make_observation(const Scene& scene);

std::unique_ptr<FeatureProvider> make_provider(const Scene& scene, const ProviderSettings& settings,
                                               const std::filesystem::path& work_dir);

// Pose JSON: transform plus confidence, view index, model-frame box extents of
// the mesh the pose refers to, and the configuration that produced it.
nlohmann::json pose_json(const PoseEstimate& pose, const Vec3& extents, const PipelineConfig& cfg);
PoseEstimate pose_from_json(const nlohmann::json& j);

std::string loss_trace_csv(const std::vector<TraceRow>& trace);

// Writes the scene layout above plus target and first-pass reference features.
SynthScene run_synth(const SynthSpec& spec, const std::filesystem::path& out_dir);

struct EstimateOutput {
  CoarseResult coarse;
  std::optional<RefineResult> refined;
  PoseEstimate final_pose;
};

// pose.json, coarse_pose.json, mesh.obj, loss_trace.csv, report.json, timings.json
EstimateOutput run_estimate(const std::filesystem::path& scene_dir, const PipelineConfig& cfg,
                            const std::filesystem::path& out_dir);
// coarse_pose.json, coarse_report.json
CoarseResult run_coarse(const std::filesystem::path& scene_dir, const PipelineConfig& cfg,
                        const std::filesystem::path& out_dir);
// pose.json, mesh.obj, loss_trace.csv, refine_report.json
RefineResult run_refine(const std::filesystem::path& scene_dir, const std::filesystem::path& coarse_pose,
                        const PipelineConfig& cfg, const std::filesystem::path& out_dir);
// matches.jsonl (one correspondence per line) and matches.png (target | reference overlay)
ViewPass run_match(const std::filesystem::path& scene_dir, int view, const PipelineConfig& cfg,
                   const std::filesystem::path& out_dir);
// depth.uftn, mask.png, shaded.png
RenderOutput run_render(const std::filesystem::path& mesh_path, const std::filesystem::path& pose_path,
                        const std::filesystem::path& intrinsics_path, const std::filesystem::path& out_dir);

struct EvalOutput {
  std::vector<std::string> names;
  std::vector<EvalRecord> records;
  AccuracyTable table;
};

// Pairs <pred_dir>/<name>.json with <gt_dir>/<name>.json. Ground-truth files
// carry "extents" and optionally "category"; predictions may carry their own
// extents. Writes metrics.json and table.txt.
EvalOutput run_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                    const std::filesystem::path& out_dir, std::size_t iou_samples = 100000);

}  // namespace unipose
