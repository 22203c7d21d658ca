#pragma once

// Keypoint-level coarse pose: match the target against renders of the
// reference mesh from four canonical views, lift matched patch centres to 3D
// on both sides, fit a similarity with RANSAC + Umeyama, then re-render at the
// updated pose and repeat. The view with the highest final confidence wins.

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/matching.hpp"
#include "unipose/provider.hpp"
#include "unipose/renderer.hpp"
#include "unipose/solver.hpp"
#include "unipose/tensor.hpp"

namespace unipose {

struct Observation {
  std::vector<FeatureMap> features;  // target maps; fetched from the provider when empty
  DepthMap depth;
  Mask mask;
  CameraIntrinsics intrinsics;
  std::string frame_id;
};

void validate(const Observation& obs);

struct CoarseConfig {
  CombineWeights weights;
  std::size_t pca_dims = 64;
  int m = 50;
  RansacConfig ransac;
  int iters = 2;            // re-render passes after the initial canonical-view pass
  bool monotone = true;     // accept an iteration only if confidence does not drop
  double min_patch_coverage = 0.5;
  int view = -1;            // restrict to one canonical view; -1 = all four
  std::uint64_t seed = 0;
};

void validate(const CoarseConfig& cfg);

struct PoseEstimate {
  SimilarityTransform transform;  // model -> camera
  double confidence = -1.0;
  int view_index = -1;
  int iterations_run = 0;
  std::size_t inlier_count = 0;
};

// Everything one match-lift-solve pass produced.
struct ViewPass {
  PoseEstimate estimate;
  CorrespondenceSet correspondences;
  std::vector<Eigen::Vector2d> target_px;     // patch centres, per correspondence
  std::vector<Eigen::Vector2d> reference_px;
  RobustFitResult fit;
  RenderOutput render;                        // the reference render the pass matched against
};

struct PassRecord {
  int view = -1;
  int iteration = 0;
  bool ok = false;
  bool accepted = false;
  double confidence = -1.0;
  std::size_t correspondences = 0;
  std::size_t inliers = 0;
  double rms_inlier_error = 0.0;
  std::string error;
};

struct CoarseResult {
  PoseEstimate best;
  std::vector<PoseEstimate> per_view;  // final estimate per attempted view (confidence -1 when failed)
  std::vector<PassRecord> passes;
};

// Patches whose footprint is at least `min_coverage` inside the mask and whose
// centre pixel is masked with valid depth.
PatchMask patch_validity(const FeatureMap& grid, const Mask& mask, const DepthMap& depth, double min_coverage);

// One pass against a render of `mesh` at `view_pose`. Throws kNoConsensus /
// kDegenerate / kEstimationFailed when the pass cannot produce a pose.
ViewPass run_single_view(const Observation& obs, const TriangleMesh& mesh, const SimilarityTransform& view_pose,
                         FeatureProvider& provider, const CoarseConfig& cfg, int view = 0, int iteration = 0);

// Throws kEstimationFailed (listing per-view errors) when every view fails.
CoarseResult coarse_estimate(const Observation& obs, const TriangleMesh& mesh, FeatureProvider& provider,
                             const CoarseConfig& cfg);

}  // namespace unipose
