#pragma once

// Feature provider contract. 2D and 3D features come from outside the core
// (pretrained models in a sidecar process, precomputed files, or the built-in
// synthetic oracle); everything downstream only sees FeatureMaps and [N, C]
// tensors.

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/renderer.hpp"
#include "unipose/tensor.hpp"

namespace unipose {

enum class FeatureRole { kTarget, kReference };

struct ImageFeatureRequest {
  FeatureRole role = FeatureRole::kTarget;
  int view = -1;       // reference view index
  int iteration = 0;   // 0 = initial canonical view
  const RenderOutput* render = nullptr;  // reference renders only
  SimilarityTransform pose;              // model -> camera of the render
  CameraIntrinsics intrinsics;
};

struct CloudFeatureRequest {
  FeatureRole role = FeatureRole::kTarget;
  const PointCloud* cloud = nullptr;     // expressed in the coarse object frame
  SimilarityTransform object_to_camera;  // the coarse pose
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  // One map per extractor (source_tag identifies it); all maps share a grid.
  virtual std::vector<FeatureMap> features2d(const ImageFeatureRequest& req) = 0;
  // [N, C] per-point features, N == cloud size.
  virtual Tensor features3d(const CloudFeatureRequest& req) = 0;
};

// Reads precomputed features from a scene directory:
//   features/target.<tag>.uftn            (+ .json sidecar)
//   features/ref_v<view>_i<iter>.<tag>.uftn
//   features/cloud_target.uftn, features/cloud_reference.uftn
class FilesProvider final : public FeatureProvider {
 public:
  FilesProvider(std::filesystem::path scene_dir, std::vector<std::string> tags);
  std::vector<FeatureMap> features2d(const ImageFeatureRequest& req) override;
  Tensor features3d(const CloudFeatureRequest& req) override;

 private:
  std::filesystem::path dir_;
  std::vector<std::string> tags_;
};

// Talks line-delimited JSON over a child process's stdin/stdout, one request
// in flight at a time. Payloads travel as file paths under `work_dir`.
//   -> {"id":n,"op":"features2d","image":"<png>","out":"<uftn>","model":"<tag>"}
//   -> {"id":n,"op":"features3d","cloud":"<uftn>","out":"<uftn>"}
//   <- {"id":n,"ok":true} | {"id":n,"ok":false,"error":"..."}
class SubprocessProvider final : public FeatureProvider {
 public:
  SubprocessProvider(const std::string& command, std::filesystem::path work_dir, std::vector<std::string> tags,
                     std::filesystem::path target_image);
  ~SubprocessProvider() override;
  SubprocessProvider(const SubprocessProvider&) = delete;
  SubprocessProvider& operator=(const SubprocessProvider&) = delete;

  std::vector<FeatureMap> features2d(const ImageFeatureRequest& req) override;
  Tensor features3d(const CloudFeatureRequest& req) override;

  std::size_t requests_sent() const { return next_id_; }

 private:
  void call(const std::string& request_json, std::size_t id);

  std::filesystem::path work_dir_;
  std::vector<std::string> tags_;
  std::filesystem::path target_image_;
  int child_pid_ = -1;
  std::FILE* from_child_ = nullptr;
  std::size_t next_id_ = 0;
};

}  // namespace unipose
