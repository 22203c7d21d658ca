#include "unipose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "unipose/error.hpp"

namespace unipose {

void validate(const CameraIntrinsics& k) {
  require(k.fx > 0 && k.fy > 0, "intrinsics: focal lengths must be positive");
  require(k.width > 0 && k.height > 0, "intrinsics: image size must be positive");
  require(k.cx >= 0 && k.cx < k.width && k.cy >= 0 && k.cy < k.height,
          "intrinsics: principal point outside image");
}

void validate(const SimilarityTransform& x, double tol) {
  require(x.r.allFinite() && x.t.allFinite() && std::isfinite(x.s), "transform has non-finite entries");
  require(x.s > 0, "transform scale must be positive");
  require((x.r.transpose() * x.r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol,
          "transform rotation is not orthonormal");
  require(std::abs(x.r.determinant() - 1.0) <= tol, "transform rotation has det != 1");
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) = -u.col(2);
  return u * v.transpose();
}

SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b) {
  SimilarityTransform out;
  out.r = orthonormalize(a.r * b.r);
  out.s = a.s * b.s;
  out.t = a.s * (a.r * b.t) + a.t;
  return out;
}

SimilarityTransform invert(const SimilarityTransform& a) {
  SimilarityTransform out;
  out.r = orthonormalize(a.r.transpose());
  out.s = 1.0 / a.s;
  out.t = -(out.s * (a.r.transpose() * a.t));
  return out;
}

Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

Mat3 axis_angle_to_matrix(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  return Mat3::Identity() + std::sin(theta) / theta * k + (1.0 - std::cos(theta)) / (theta * theta) * k * k;
}

Vec3 matrix_to_axis_angle(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Mat3 rot_x(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix(); }

double rotation_geodesic_deg(const Mat3& r1, const Mat3& r2) {
  const Mat3 d = r1.transpose() * r2;
  const double c = std::clamp((d.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const double s = std::min(1.0, 0.5 * axis.norm());
  return std::atan2(s, c) * 180.0 / M_PI;
}

void validate(const PointCloud& pc) {
  for (const auto& p : pc.points) require(p.allFinite(), "point cloud has non-finite coordinates");
  if (pc.features) {
    require(pc.features->ndims() == 2 && pc.features->dim(0) == pc.points.size(),
            "point features must be [N, C] with N matching the cloud");
  }
}

PointCloud apply(const SimilarityTransform& x, const PointCloud& pc) {
  PointCloud out;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(x.apply(p));
  out.features = pc.features;
  return out;
}

std::size_t clean_mesh(TriangleMesh& mesh, double min_area) {
  const int nv = static_cast<int>(mesh.vertices.size());
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    bool ok = true;
    for (int i : f) ok = ok && i >= 0 && i < nv;
    if (!ok || f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    if (0.5 * n.norm() <= min_area) continue;
    kept.push_back(f);
  }
  const std::size_t removed = mesh.faces.size() - kept.size();
  mesh.faces = std::move(kept);
  return removed;
}

void validate(const TriangleMesh& mesh) {
  require(!mesh.vertices.empty() && !mesh.faces.empty(), "mesh is empty");
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& v : mesh.vertices) require(v.allFinite(), "mesh has non-finite vertices");
  for (const auto& f : mesh.faces)
    for (int i : f) require(i >= 0 && i < nv, "mesh face index out of range");
  require(mesh.colors.empty() || mesh.colors.size() == mesh.vertices.size(), "mesh colors do not match vertices");
}

Aabb bounding_box(const std::vector<Vec3>& points) {
  require(!points.empty(), "bounding box of empty point set");
  Aabb b{points.front(), points.front()};
  for (const auto& p : points) {
    b.min = b.min.cwiseMin(p);
    b.max = b.max.cwiseMax(p);
  }
  return b;
}

SimilarityTransform normalize_to_canonical(TriangleMesh& mesh) {
  const Aabb box = bounding_box(mesh.vertices);
  const double diag = box.diagonal();
  require(diag > 0, "cannot normalise a mesh with zero extent");
  SimilarityTransform x;
  x.s = 1.0 / diag;
  x.t = -x.s * box.center();
  for (auto& v : mesh.vertices) v = x.apply(v);
  return x;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

void validate(const DepthMap& d) {
  require(d.width > 0 && d.height > 0 && d.values.size() == std::size_t(d.width) * d.height,
          "depth map dimensions are inconsistent");
  for (float z : d.values) require(std::isfinite(z) && z >= 0.0f, "depth must be finite and non-negative");
}

LiftResult lift_pixels(const DepthMap& depth, const CameraIntrinsics& k,
                       const std::vector<Eigen::Vector2d>& pixels) {
  LiftResult out;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double u = pixels[i].x();
    const double v = pixels[i].y();
    require(u >= 0 && v >= 0 && u < depth.width && v < depth.height, "lift_pixels: pixel outside image");
    const float z = depth.at(static_cast<int>(u), static_cast<int>(v));
    if (!(z > 0.0f)) {
      out.dropped.push_back(i);
      continue;
    }
    out.cloud.points.push_back(k.unproject(u, v, z));
    out.kept.push_back(i);
  }
  if (out.cloud.empty()) fail(ErrorKind::kValidation, "lift_pixels: every pixel has invalid depth");
  return out;
}

Eigen::Vector2d patch_to_pixel(std::size_t patch, const FeatureMap& fm) {
  require(patch < fm.num_patches(), "patch index out of range");
  const double col = double(patch % fm.grid_w);
  const double row = double(patch / fm.grid_w);
  const double sx = double(fm.image_w_px) / (double(fm.grid_w) * fm.patch_size_px);
  const double sy = double(fm.image_h_px) / (double(fm.grid_h) * fm.patch_size_px);
  return {(col + 0.5) * fm.patch_size_px * sx, (row + 0.5) * fm.patch_size_px * sy};
}

std::size_t pixel_to_patch(const Eigen::Vector2d& uv, const FeatureMap& fm) {
  const auto col = static_cast<std::size_t>(
      std::clamp(std::floor(uv.x() * fm.grid_w / fm.image_w_px), 0.0, double(fm.grid_w - 1)));
  const auto row = static_cast<std::size_t>(
      std::clamp(std::floor(uv.y() * fm.grid_h / fm.image_h_px), 0.0, double(fm.grid_h - 1)));
  return row * fm.grid_w + col;
}

PointCloud mask_to_cloud(const DepthMap& depth, const Mask& mask, const CameraIntrinsics& k, int stride) {
  require(stride >= 1, "mask_to_cloud: stride must be positive");
  require(mask.width == depth.width && mask.height == depth.height, "mask and depth sizes differ");
  PointCloud out;
  for (int y = 0; y < depth.height; y += stride) {
    for (int x = 0; x < depth.width; x += stride) {
      const float z = depth.at(x, y);
      if (!mask.at(x, y) || !(z > 0.0f)) continue;
      out.points.push_back(k.unproject(x + 0.5, y + 0.5, z));
    }
  }
  return out;
}

}  // namespace unipose
