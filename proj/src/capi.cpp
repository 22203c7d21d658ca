#include "unipose/unipose.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include <json.hpp>

#include "unipose/error.hpp"
#include "unipose/pipeline.hpp"
#include "unipose/solver.hpp"
#include "unipose/tensor.hpp"

struct up_context {
  unipose::PipelineConfig config;
  std::optional<unipose::PoseEstimate> last;
};

namespace {

thread_local std::string g_last_error;

up_status status_for(unipose::ErrorKind k) {
  using unipose::ErrorKind;
  switch (k) {
    case ErrorKind::kFormat:
    case ErrorKind::kIo:
    case ErrorKind::kValidation:
      return UP_ERR_VALIDATION;
    case ErrorKind::kDegenerate:
    case ErrorKind::kNoConsensus:
    case ErrorKind::kEstimationFailed:
    case ErrorKind::kNumerical:
      return UP_ERR_ESTIMATION;
    case ErrorKind::kProvider:
      return UP_ERR_PROVIDER;
  }
  return UP_ERR_INTERNAL;
}

template <class F>
up_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return UP_OK;
  } catch (const unipose::Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return UP_ERR_VALIDATION;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return UP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return UP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return UP_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) unipose::fail(unipose::ErrorKind::kValidation, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void to_c(const unipose::SimilarityTransform& x, up_similarity* out) {
  for (int i = 0; i < 9; ++i) out->r[i] = x.r(i / 3, i % 3);
  for (int i = 0; i < 3; ++i) out->t[i] = x.t[i];
  out->s = x.s;
}

std::vector<unipose::Vec3> points(const double* xyz, size_t n) {
  std::vector<unipose::Vec3> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  return out;
}

}  // namespace

extern "C" {

const char* up_version(void) { return "0.1.0"; }

const char* up_last_error(void) { return g_last_error.c_str(); }

void up_string_free(char* s) { std::free(s); }

up_status up_context_create(const char* config_json, up_context** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto ctx = std::make_unique<up_context>();
    if (config_json != nullptr && config_json[0] != '\0')
      ctx->config = unipose::config_from_json(nlohmann::json::parse(config_json));
    *out = ctx.release();
  });
}

void up_context_destroy(up_context* ctx) { delete ctx; }

up_status up_context_config(const up_context* ctx, char** out_json) {
  return guarded([&] {
    need(ctx, "ctx");
    need(out_json, "out_json");
    *out_json = dup_string(unipose::config_to_json(ctx->config).dump(2));
  });
}

up_status up_synth(const char* spec_json, const char* out_dir) {
  return guarded([&] {
    need(out_dir, "out_dir");
    unipose::SynthSpec spec;
    if (spec_json != nullptr && spec_json[0] != '\0') spec = nlohmann::json::parse(spec_json).get<unipose::SynthSpec>();
    unipose::run_synth(spec, out_dir);
  });
}

up_status up_estimate(up_context* ctx, const char* scene_dir, const char* out_dir) {
  return guarded([&] {
    need(ctx, "ctx");
    need(scene_dir, "scene_dir");
    need(out_dir, "out_dir");
    ctx->last = unipose::run_estimate(scene_dir, ctx->config, out_dir).final_pose;
  });
}

up_status up_coarse(up_context* ctx, const char* scene_dir, const char* out_dir) {
  return guarded([&] {
    need(ctx, "ctx");
    need(scene_dir, "scene_dir");
    need(out_dir, "out_dir");
    ctx->last = unipose::run_coarse(scene_dir, ctx->config, out_dir).best;
  });
}

up_status up_refine(up_context* ctx, const char* scene_dir, const char* coarse_pose_path, const char* out_dir) {
  return guarded([&] {
    need(ctx, "ctx");
    need(scene_dir, "scene_dir");
    need(coarse_pose_path, "coarse_pose_path");
    need(out_dir, "out_dir");
    ctx->last = unipose::run_refine(scene_dir, coarse_pose_path, ctx->config, out_dir).pose;
  });
}

up_status up_match(up_context* ctx, const char* scene_dir, int view, const char* out_dir) {
  return guarded([&] {
    need(ctx, "ctx");
    need(scene_dir, "scene_dir");
    need(out_dir, "out_dir");
    unipose::run_match(scene_dir, view, ctx->config, out_dir);
  });
}

up_status up_render(const char* mesh_path, const char* pose_path, const char* intrinsics_path, const char* out_dir) {
  return guarded([&] {
    need(mesh_path, "mesh_path");
    need(pose_path, "pose_path");
    need(intrinsics_path, "intrinsics_path");
    need(out_dir, "out_dir");
    unipose::run_render(mesh_path, pose_path, intrinsics_path, out_dir);
  });
}

up_status up_eval(const char* pred_dir, const char* gt_dir, const char* out_dir, char** out_table) {
  return guarded([&] {
    need(pred_dir, "pred_dir");
    need(gt_dir, "gt_dir");
    need(out_dir, "out_dir");
    const auto res = unipose::run_eval(pred_dir, gt_dir, out_dir);
    if (out_table != nullptr) *out_table = dup_string(unipose::format_accuracy_table(res.table));
  });
}

up_status up_last_pose(const up_context* ctx, up_similarity* out, double* confidence) {
  return guarded([&] {
    need(ctx, "ctx");
    need(out, "out");
    if (!ctx->last) unipose::fail(unipose::ErrorKind::kValidation, "no pose has been estimated on this context");
    to_c(ctx->last->transform, out);
    if (confidence != nullptr) *confidence = ctx->last->confidence;
  });
}

up_status up_umeyama(const double* src, const double* dst, size_t n, up_similarity* out) {
  return guarded([&] {
    need(src, "src");
    need(dst, "dst");
    need(out, "out");
    to_c(unipose::umeyama(points(src, n), points(dst, n)), out);
  });
}

void up_ransac_defaults(up_ransac_params* out) {
  if (out == nullptr) return;
  const unipose::RansacConfig d;
  out->max_iters = d.max_iters;
  out->sample_size = d.sample_size;
  out->inlier_threshold_rel = d.inlier_threshold_rel;
  out->confidence_stop = d.confidence_stop;
  out->seed = d.seed;
}

up_status up_ransac_umeyama(const double* src, const double* dst, size_t n, const up_ransac_params* params,
                            up_similarity* out, unsigned char* inliers, size_t* inlier_count) {
  return guarded([&] {
    need(src, "src");
    need(dst, "dst");
    need(out, "out");
    unipose::RansacConfig cfg;
    if (params != nullptr) {
      cfg.max_iters = params->max_iters;
      cfg.sample_size = params->sample_size;
      cfg.inlier_threshold_rel = params->inlier_threshold_rel;
      cfg.confidence_stop = params->confidence_stop;
      cfg.seed = params->seed;
    }
    const auto fit = unipose::ransac_umeyama(points(src, n), points(dst, n), cfg);
    to_c(fit.transform, out);
    if (inliers != nullptr)
      for (size_t i = 0; i < n; ++i) inliers[i] = fit.inliers[i] ? 1 : 0;
    if (inlier_count != nullptr) *inlier_count = fit.inlier_count;
  });
}

up_status up_validate_tensor_file(const char* path, int feature_map) {
  return guarded([&] {
    need(path, "path");
    if (feature_map != 0) {
      unipose::validate(unipose::read_feature_map(path));
    } else {
      unipose::read_tensor(path);
    }
  });
}

}  // extern "C"
