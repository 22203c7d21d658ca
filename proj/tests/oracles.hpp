#pragma once

// Independent reference implementations and fixtures for tests. Everything
// here favours obviousness over speed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unipose/eval.hpp"
#include "unipose/geometry.hpp"
#include "unipose/matching.hpp"
#include "unipose/refine.hpp"
#include "unipose/tensor.hpp"

namespace oracle {

using unipose::Mat3;
using unipose::Vec3;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Random fixtures.
Mat3 random_rotation(std::mt19937_64& rng);
Mat3 rotation_about(const Vec3& axis, double deg);
unipose::SimilarityTransform random_similarity(std::mt19937_64& rng, double max_translation, double min_scale,
                                               double max_scale);
std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n, double half_extent);
// Values drawn from a few levels so that ties and zero vectors occur.
unipose::FeatureMap random_feature_map(std::mt19937_64& rng, std::uint32_t grid_h, std::uint32_t grid_w,
                                       std::uint32_t channels, double zero_prob, bool quantized);
unipose::PatchMask random_mask(std::mt19937_64& rng, std::size_t n, double keep_prob);

// Correspondences from a known similarity: `src` uniform in a 0.2 m cube,
// dst = truth(src) + N(0, noise), and a fraction replaced by uniform outliers
// in the inliers' bounding box.
struct RegistrationTrial {
  std::vector<Vec3> src, dst;
  unipose::SimilarityTransform truth;
  std::vector<bool> outlier;
};
RegistrationTrial registration_trial(std::mt19937_64& rng, std::size_t n, double outlier_fraction, double noise);

// Matching: direct transcription of the definitions.
unipose::ScoreMatrix score_matrix(const unipose::FeatureMap& t, const unipose::FeatureMap& r);
std::vector<double> cyclical_distances(const unipose::ScoreMatrix& s, unipose::GridShape grid,
                                       const unipose::PatchMask& tv, const unipose::PatchMask& rv);
unipose::CorrespondenceSet select_correspondences(const unipose::ScoreMatrix& s, const std::vector<double>& cyc,
                                                  int m, const unipose::PatchMask& tv, const unipose::PatchMask& rv);
bool same_correspondences(const unipose::CorrespondenceSet& a, const unipose::CorrespondenceSet& b);

// Ray casting: for each pixel centre, the nearest face hit by the viewing ray
// (Moller-Trumbore in camera space). Pixels whose hit lies within `edge_eps`
// barycentric distance of a triangle edge, or whose two nearest hits are
// within 1e-6 relative depth, are flagged ambiguous.
struct RayCast {
  std::vector<int> face;       // -1 = background
  std::vector<double> depth;   // 0 = background
  std::vector<bool> ambiguous;
};
RayCast ray_cast(const unipose::TriangleMesh& mesh, const unipose::SimilarityTransform& pose,
                 const unipose::CameraIntrinsics& k, double edge_eps = 1e-9);
// Random triangle soup in front of the camera.
unipose::TriangleMesh random_soup(std::mt19937_64& rng, int faces);

// Analytic IoU of axis-aligned boxes (identity rotations).
double aabb_iou(const unipose::OrientedBox& a, const unipose::OrientedBox& b);
// Minimum geodesic over spins of pred about its up axis: a 1-degree sweep
// refined by a 0.001-degree sweep around the best coarse step.
double symmetric_sweep_deg(const Mat3& pred, const Mat3& gt);
// Percentages of records meeting each threshold, rounded to two decimals.
unipose::AccuracyTable count_table(const std::vector<unipose::EvalRecord>& records);

// Central finite differences; returns |fd - analytic| / max(|fd|, |analytic|, floor)
// in the Euclidean norm over all coordinates.
double gradient_rel_error(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& analytic, double h = 1e-4, double floor = 1e-12);

// Closed genus-0 mesh with 20 vertices (18 ring vertices plus two poles),
// radii jittered so no face pair is coplanar.
unipose::TriangleMesh small_mesh(std::mt19937_64& rng);

// A refinement problem small enough for finite differences: 20-vertex mesh,
// 64 surface samples, 64 target points, a mask target and alignment pairs.
struct GradientProblem {
  unipose::TriangleMesh mesh;
  unipose::MeshTopology topo;
  unipose::SimilarityTransform init;
  unipose::RefineScene scene;
  unipose::RefineParams params;  // random, away from the kinks at zero
};
GradientProblem make_gradient_problem(std::uint64_t seed);

}  // namespace oracle
