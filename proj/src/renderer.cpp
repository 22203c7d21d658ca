#include "unipose/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unipose/error.hpp"

namespace unipose {

namespace {

constexpr double kNearZ = 1e-6;

double edge_fn(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py) {
  return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

// Interior lies where the edge function is positive; an edge owns its boundary
// pixels when it is a top edge (horizontal, pointing +x) or a left edge.
bool owns_boundary(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double ex = b.x() - a.x();
  const double ey = b.y() - a.y();
  return ey < 0.0 || (ey == 0.0 && ex > 0.0);
}

bool inside(double w, bool owner) { return w > 0.0 || (w == 0.0 && owner); }

}  // namespace

RenderOutput render(const TriangleMesh& mesh, const SimilarityTransform& pose, const CameraIntrinsics& k,
                    Shading shading) {
  validate(k);
  const int w = k.width;
  const int h = k.height;
  RenderOutput out;
  out.depth = DepthMap(w, h);
  out.mask = Mask(w, h);
  out.face_index.assign(std::size_t(w) * h, -1);
  std::vector<double> zbuf(std::size_t(w) * h, std::numeric_limits<double>::infinity());
  std::vector<Eigen::Vector3f> color_buf;
  if (shading != Shading::kNone) color_buf.assign(std::size_t(w) * h, Eigen::Vector3f::Zero());

  std::vector<Vec3> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = pose.apply(mesh.vertices[i]);

  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    std::array<int, 3> f = mesh.faces[fi];
    if (cam[f[0]].z() <= kNearZ || cam[f[1]].z() <= kNearZ || cam[f[2]].z() <= kNearZ) continue;
    std::array<Eigen::Vector2d, 3> p = {k.project(cam[f[0]]), k.project(cam[f[1]]), k.project(cam[f[2]])};
    double area = edge_fn(p[0], p[1], p[2].x(), p[2].y());
    if (std::abs(area) < 1e-12) continue;
    if (area < 0.0) {
      std::swap(f[1], f[2]);
      std::swap(p[1], p[2]);
      area = -area;
    }
    const std::array<double, 3> inv_z = {1.0 / cam[f[0]].z(), 1.0 / cam[f[1]].z(), 1.0 / cam[f[2]].z()};
    const std::array<bool, 3> owner = {owns_boundary(p[1], p[2]), owns_boundary(p[2], p[0]), owns_boundary(p[0], p[1])};

    const double umin = std::min({p[0].x(), p[1].x(), p[2].x()});
    const double umax = std::max({p[0].x(), p[1].x(), p[2].x()});
    const double vmin = std::min({p[0].y(), p[1].y(), p[2].y()});
    const double vmax = std::max({p[0].y(), p[1].y(), p[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::floor(umin - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(umax - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(vmax - 0.5)));
    if (x0 > x1 || y0 > y1) continue;

    Eigen::Vector3f flat_color = Eigen::Vector3f::Constant(0.8f);
    if (shading == Shading::kFlat) {
      if (mesh.has_colors()) flat_color = (mesh.colors[f[0]] + mesh.colors[f[1]] + mesh.colors[f[2]]) / 3.0f;
      const Vec3 n = (cam[f[1]] - cam[f[0]]).cross(cam[f[2]] - cam[f[0]]).normalized();
      const Vec3 view = -(cam[f[0]] + cam[f[1]] + cam[f[2]]).normalized();
      flat_color *= static_cast<float>(0.3 + 0.7 * std::abs(n.dot(view)));
    }

    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double w0 = edge_fn(p[1], p[2], px, py);
        const double w1 = edge_fn(p[2], p[0], px, py);
        const double w2 = edge_fn(p[0], p[1], px, py);
        if (!inside(w0, owner[0]) || !inside(w1, owner[1]) || !inside(w2, owner[2])) continue;
        const double l0 = w0 / area, l1 = w1 / area, l2 = w2 / area;
        const double iz = l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2];
        const double z = 1.0 / iz;
        const std::size_t idx = std::size_t(y) * w + x;
        if (!(z < zbuf[idx])) continue;
        zbuf[idx] = z;
        out.face_index[idx] = static_cast<std::int32_t>(fi);
        if (shading == Shading::kFlat) {
          color_buf[idx] = flat_color;
        } else if (shading == Shading::kVertexColor) {
          Eigen::Vector3f c = Eigen::Vector3f::Constant(0.8f);
          if (mesh.has_colors()) {
            c = (static_cast<float>(l0 * inv_z[0] * z) * mesh.colors[f[0]] +
                 static_cast<float>(l1 * inv_z[1] * z) * mesh.colors[f[1]] +
                 static_cast<float>(l2 * inv_z[2] * z) * mesh.colors[f[2]]);
          }
          color_buf[idx] = c;
        }
      }
    }
  }

  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (out.face_index[i] < 0) continue;
    out.depth.values[i] = static_cast<float>(zbuf[i]);
    out.mask.values[i] = 1;
  }
  // A depth that rounds to zero in f32 would break mask <=> depth > 0.
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (out.face_index[i] >= 0 && !(out.depth.values[i] > 0.0f)) out.depth.values[i] = std::numeric_limits<float>::min();
  }
  if (shading != Shading::kNone) {
    Image8 img(w, h, 3);
    for (std::size_t i = 0; i < color_buf.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(color_buf[i][c], 0.0f, 1.0f) * 255.0f));
      }
    }
    out.shaded = std::move(img);
  }
  return out;
}

Mat3 upright_view_rotation() { return Vec3(1.0, -1.0, -1.0).asDiagonal(); }

std::array<SimilarityTransform, 4> canonical_view_poses(double mesh_diameter, const CameraIntrinsics& k) {
  require(mesh_diameter > 0.0, "canonical_view_poses: diameter must be positive");
  validate(k);
  constexpr double kFill = 0.6;
  const double dist = std::max(k.fx * mesh_diameter / (kFill * k.width), k.fy * mesh_diameter / (kFill * k.height));
  std::array<SimilarityTransform, 4> poses;
  for (int i = 0; i < 4; ++i) {
    poses[i].r = upright_view_rotation() * rot_y(M_PI / 2.0 * i);
    poses[i].t = Vec3(0.0, 0.0, dist);
    poses[i].s = 1.0;
  }
  return poses;
}

}  // namespace unipose
