#pragma once

// Cameras, similarity transforms, meshes, point clouds and depth lifting.
//
// Camera frame: right-handed, +z into the scene, image origin at the top-left
// with v pointing down. Continuous pixel coordinate (u, v) lies in pixel
// (floor(u), floor(v)); pixel centres sit at (i + 0.5, j + 0.5).

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "unipose/tensor.hpp"

namespace unipose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Vector2d project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
  Vec3 unproject(double u, double v, double z) const { return {(u - cx) * z / fx, (v - cy) * z / fy, z}; }
};

void validate(const CameraIntrinsics& k);

// apply(p) = s * r * p + t
struct SimilarityTransform {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double s = 1.0;

  static SimilarityTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return s * (r * p) + t; }
  Mat3 linear() const { return s * r; }
};

void validate(const SimilarityTransform& x, double tol = 1e-6);

// compose(a, b).apply(p) == a.apply(b.apply(p))
SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b);
SimilarityTransform invert(const SimilarityTransform& a);

// Nearest rotation via SVD; keeps det = +1.
Mat3 orthonormalize(const Mat3& r);

Mat3 axis_angle_to_matrix(const Vec3& omega);
Vec3 matrix_to_axis_angle(const Mat3& r);
Mat3 rot_x(double rad);
Mat3 rot_y(double rad);
Mat3 rot_z(double rad);
Mat3 skew(const Vec3& w);

// Geodesic angle between rotations in degrees. Uses atan2 of the sine and
// cosine parts so tiny angles keep full precision.
double rotation_geodesic_deg(const Mat3& r1, const Mat3& r2);

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<Tensor> features;  // [N, C] when present

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

void validate(const PointCloud& pc);
PointCloud apply(const SimilarityTransform& x, const PointCloud& pc);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Eigen::Vector3f> colors;  // per vertex, empty when absent

  bool has_colors() const { return !colors.empty() && colors.size() == vertices.size(); }
};

// Drops faces with out-of-range indices or (near) zero area. Returns the
// number of faces removed.
std::size_t clean_mesh(TriangleMesh& mesh, double min_area = 1e-14);
void validate(const TriangleMesh& mesh);

struct Aabb {
  Vec3 min;
  Vec3 max;
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return extent().norm(); }
};

Aabb bounding_box(const std::vector<Vec3>& points);

// Rescales the mesh into the canonical frame: bounding box centred at the
// origin with unit diagonal. Returns the applied transform (model -> canonical).
SimilarityTransform normalize_to_canonical(TriangleMesh& mesh);

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // metres, 0 = invalid

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), values(std::size_t(w) * h, 0.0f) {}
  float at(int x, int y) const { return values[std::size_t(y) * width + x]; }
  float& at(int x, int y) { return values[std::size_t(y) * width + x]; }
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // 0 or 1

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), values(std::size_t(w) * h, 0) {}
  bool at(int x, int y) const { return values[std::size_t(y) * width + x] != 0; }
  void set(int x, int y, bool v) { values[std::size_t(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

void validate(const DepthMap& d);

struct LiftResult {
  PointCloud cloud;
  std::vector<std::size_t> kept;     // input index of each lifted point
  std::vector<std::size_t> dropped;  // input indices with invalid depth
};

// Nearest-neighbour depth sampling at pixel (floor(u), floor(v)).
LiftResult lift_pixels(const DepthMap& depth, const CameraIntrinsics& k,
                       const std::vector<Eigen::Vector2d>& pixels);

// Centre of the patch's pixel footprint.
Eigen::Vector2d patch_to_pixel(std::size_t patch, const FeatureMap& fm);
std::size_t pixel_to_patch(const Eigen::Vector2d& uv, const FeatureMap& fm);

// Lifts the centre of every stride-th masked pixel (in both axes) with valid depth.
PointCloud mask_to_cloud(const DepthMap& depth, const Mask& mask, const CameraIntrinsics& k, int stride);

}  // namespace unipose
