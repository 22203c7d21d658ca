#pragma once

// Pixel-level pose and shape refinement.
//
// Parameters: axis-angle increment w, translation increment dt, per-axis log
// scale ds and per-vertex offsets dV. With the coarse pose folded into
// A = s_hat * R_hat, the posed vertices are
//
//   Vbar_i = exp(ds) * (V_i + dV_i)        (per axis, model frame)
//   X_i    = exp([w]x) * A * Vbar_i + T_hat + dt
//
// The loss stack (silhouette surrogate, Chamfer, feature-paired alignment,
// pose/centre/deformation regularisers, edge/normal/Laplacian smoothness) is
// differentiated analytically and minimised with Adam.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unipose/coarse.hpp"
#include "unipose/distance_field.hpp"
#include "unipose/geometry.hpp"
#include "unipose/provider.hpp"

namespace unipose {

struct LossWeights {
  double a_m = 1.0;   // silhouette
  double a_c = 0.1;   // Chamfer
  double a_g = 1.0;   // universal alignment
  double a_p = 20.0;  // pose regulariser
  double a_ce = 1.0;  // centre regulariser
  double a_d = 1.0;   // deformation regulariser
  double edge = 1.0;
  double normal = 0.01;
  double laplacian = 0.1;
  double beta_g = 0.8;  // similarity threshold for alignment pairs
};

void validate(const LossWeights& w);

struct RefineParams {
  Vec3 delta_rot = Vec3::Zero();
  Vec3 delta_t = Vec3::Zero();
  Vec3 delta_log_s = Vec3::Zero();
  std::vector<Vec3> delta_v;

  static RefineParams zeros(std::size_t num_vertices);
  std::size_t dimension() const { return 9 + 3 * delta_v.size(); }
  Eigen::VectorXd flatten() const;
  static RefineParams unflatten(const Eigen::VectorXd& x, std::size_t num_vertices);
};

struct RealizedPose {
  Mat3 rotation;               // exp([w]x) * s_hat * R_hat (carries the global scale)
  Vec3 translation;            // T_hat + dt
  std::vector<Vec3> vertices;  // Vbar, model frame
  Vec3 apply(const Vec3& model_point) const { return rotation * model_point + translation; }
};

RealizedPose realized_pose(const SimilarityTransform& init, const RefineParams& p, const TriangleMesh& mesh);

// Value and gradient with respect to the points the term was evaluated on.
struct LossGrad {
  double value = 0.0;
  std::vector<Vec3> grad;
};

// 0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2); gradient with respect
// to `a` through the nearest-neighbour assignments.
LossGrad chamfer_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Silhouette target: the mask, its SDF and coverage samples on a grid inside it.
struct MaskTarget {
  Mask mask;
  DistanceField sdf;
  CameraIntrinsics k;
  std::vector<Eigen::Vector2d> coverage;  // pixel centres inside the mask
  double tau = 1.0;                       // px, allowed gap between coverage sample and projected point
  double kappa = 0.5;                     // px, softplus temperature
};

// `expected_points` sets tau from the mean spacing of that many projected points.
MaskTarget make_mask_target(const Mask& mask, const CameraIntrinsics& k, std::size_t expected_points,
                            std::size_t coverage_samples = 600);

// mean_i max(0, sdf(pi(x_i)))^2 + mean_j kappa * softplus((min_i |g_j - pi(x_i)| - tau) / kappa),
// in px^2 / px. Points are in the camera frame (any uniform length unit).
LossGrad mask_loss(const std::vector<Vec3>& points, const MaskTarget& target);

// 1 - IoU of two masks (1 when both are empty).
double hard_mask_loss(const Mask& a, const Mask& b);

struct AlignmentPairs {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (reference index, target index)
  std::vector<double> similarity;
  bool empty() const { return pairs.empty(); }
};

// Mutual nearest neighbours under cosine similarity, kept when sim > beta_g.
AlignmentPairs mutual_feature_pairs(const Tensor& reference_features, const Tensor& target_features, double beta_g);

// 0.5 * sum over pairs |r - t|^2; gradient with respect to the reference points.
LossGrad alignment_loss(const std::vector<Vec3>& reference, const std::vector<Vec3>& target,
                        const AlignmentPairs& pairs);
// Pairs from the clouds' features, then alignment_loss.
LossGrad universal_alignment_loss(const PointCloud& reference, const PointCloud& target, double beta_g,
                                  AlignmentPairs* pairs_out = nullptr);

// mean_i |x_i - x0_i| (gradient w.r.t. x).
LossGrad pose_reg_loss(const std::vector<Vec3>& posed, const std::vector<Vec3>& initial);
// |mean(x) - mean(x0)| (gradient w.r.t. x).
LossGrad center_reg_loss(const std::vector<Vec3>& posed, const std::vector<Vec3>& initial);
// sqrt(sum |dV_i|^2 / V) (gradient w.r.t. dV).
LossGrad deform_reg_loss(const std::vector<Vec3>& delta_v);

struct MeshTopology {
  std::vector<std::pair<int, int>> edges;           // unique undirected edges
  std::vector<std::pair<int, int>> adjacent_faces;  // face pairs sharing an edge
  std::vector<std::vector<int>> neighbours;         // per vertex, sorted
};

MeshTopology build_topology(const TriangleMesh& mesh);

struct MeshRegLosses {
  LossGrad edge;       // mean squared edge length
  LossGrad normal;     // mean (1 - cos) between adjacent face normals
  LossGrad laplacian;  // mean squared uniform umbrella vector
};

MeshRegLosses mesh_reg_losses(const std::vector<Vec3>& vertices, const TriangleMesh& mesh, const MeshTopology& topo);

// Fixed barycentric surface samples, area weighted.
struct SurfaceSamples {
  std::vector<int> face;
  std::vector<Vec3> bary;
  std::size_t size() const { return face.size(); }
};

SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);
std::vector<Vec3> evaluate_samples(const SurfaceSamples& s, const TriangleMesh& mesh, const std::vector<Vec3>& vertices);

// Everything the loss needs about the target.
struct RefineScene {
  MaskTarget mask;
  std::vector<Vec3> target_points;  // camera frame, metres
  SurfaceSamples samples;
  AlignmentPairs pairs;             // (sample index, target point index)
  std::vector<bool> visible;        // per sample, used by Chamfer; empty = all visible
};

struct LossBreakdown {
  double mask = 0.0;
  double chamfer = 0.0;
  double align = 0.0;
  double pose_reg = 0.0;
  double center_reg = 0.0;
  double deform = 0.0;
  double edge = 0.0;
  double normal = 0.0;
  double laplacian = 0.0;
  double total = 0.0;  // weighted sum of the terms above
};

struct LossEvaluation {
  LossBreakdown terms;
  RefineParams grad;
};

// Terms are evaluated with lengths expressed in `length_unit_m` (millimetres
// by default) so that the data terms and regularisers are commensurate.
LossEvaluation total_loss(const SimilarityTransform& init, const RefineParams& params, const TriangleMesh& mesh,
                          const MeshTopology& topo, const RefineScene& scene, const LossWeights& w,
                          double length_unit_m = 1e-3);

struct RefineConfig {
  LossWeights weights;
  int steps = 80;
  double lr_rot = 1e-2;     // rad
  double lr_t = 2e-3;       // m
  double lr_log_s = 1e-2;
  double lr_v = 1e-4;       // canonical units
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_floor = 0.1;  // learning rates hold for the first half, then cosine-decay to this fraction
  std::size_t num_samples = 1024;
  std::size_t max_target_points = 2000;
  double length_unit_m = 1e-3;
  std::uint64_t seed = 0;
};

void validate(const RefineConfig& cfg);

struct TraceRow {
  int step = 0;
  LossBreakdown terms;
  double lr_scale = 1.0;
};

struct RefineResult {
  PoseEstimate pose;             // refined similarity (global scale only)
  RefineParams params;
  TriangleMesh deformed;         // Vbar in the model frame
  std::vector<TraceRow> trace;   // loss before each update, plus a final row after the last one
  double hard_mask_loss_init = 1.0;
  double hard_mask_loss_final = 1.0;
  double chamfer_init = 0.0;     // m^2, visible samples vs target cloud
  double chamfer_final = 0.0;
  std::size_t pairs = 0;
};

// Target cloud from depth+mask, surface samples, frozen 3D features from the
// provider (skipped when a_g == 0), and alignment pairs.
RefineScene prepare_refine_scene(const Observation& obs, const TriangleMesh& mesh, const SimilarityTransform& coarse,
                                 FeatureProvider* provider, const RefineConfig& cfg);

// Updates scene.visible from a render at the given realized pose.
void update_visibility(RefineScene& scene, const TriangleMesh& mesh, const RealizedPose& pose,
                       const CameraIntrinsics& k);

// Throws kNumerical on a non-finite loss (message carries the step and terms).
RefineResult adam_optimize(const SimilarityTransform& init, const TriangleMesh& mesh, RefineScene& scene,
                           const RefineConfig& cfg);

RefineResult refine_pose(const Observation& obs, const TriangleMesh& mesh, const PoseEstimate& coarse,
                         FeatureProvider* provider, const RefineConfig& cfg);

}  // namespace unipose
