#pragma once

#include <cstdint>
#include <vector>

#include "unipose/geometry.hpp"

namespace unipose {

// Closed-form least-squares similarity (Umeyama): finds (R, t, s) minimising
// sum ||dst_i - (s R src_i + t)||^2. Throws kDegenerate for fewer than three
// points or a (near) collinear source set.
SimilarityTransform umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);
SimilarityTransform umeyama(const PointCloud& src, const PointCloud& dst);

struct RansacConfig {
  int max_iters = 1000;
  int sample_size = 4;
  double inlier_threshold_rel = 0.05;  // fraction of the target bounding-box diagonal
  double confidence_stop = 0.999;
  std::uint64_t seed = 0;
};

void validate(const RansacConfig& cfg);

struct RobustFitResult {
  SimilarityTransform transform;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  double rms_inlier_error = 0.0;  // metres, under the refit transform
  int iterations = 0;
};

// Minimal-sample hypotheses scored by inlier count (ties: earliest
// hypothesis), single Umeyama refit on the winning inlier set. Throws
// kNoConsensus when no hypothesis gathers sample_size inliers.
RobustFitResult ransac_umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const RansacConfig& cfg);

}  // namespace unipose
