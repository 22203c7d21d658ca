#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "unipose/renderer.hpp"
#include "unipose/synthetic.hpp"

using namespace unipose;

namespace {

CameraIntrinsics camera(int w, int h, double f) { return {f, f, w / 2.0, h / 2.0, w, h}; }

// Axis-aligned cube with side `side`, centred at the origin, outward winding.
TriangleMesh cube(double side) {
  TriangleMesh m;
  const double h = side / 2.0;
  for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h);
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

void expect_matches_ray_cast(const TriangleMesh& mesh, const SimilarityTransform& pose, const CameraIntrinsics& k) {
  const RenderOutput out = render(mesh, pose, k, Shading::kNone);
  const oracle::RayCast rc = oracle::ray_cast(mesh, pose, k, 1e-7);
  std::size_t compared = 0;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const std::size_t i = std::size_t(y) * k.width + x;
      if (rc.ambiguous[i]) continue;
      ++compared;
      ASSERT_EQ(out.face_index[i], rc.face[i]) << "pixel " << x << "," << y;
      if (rc.face[i] >= 0) ASSERT_NEAR(out.depth.values[i], rc.depth[i], 1e-5 * rc.depth[i]);
      else ASSERT_EQ(out.depth.values[i], 0.0f);
    }
  }
  EXPECT_GT(compared, std::size_t(k.width) * k.height * 9 / 10);
}

}  // namespace

TEST(Render, MatchesRayCastOnRandomSoups) {
  std::mt19937_64 rng(1);
  const CameraIntrinsics k = camera(64, 48, 60.0);
  for (int trial = 0; trial < 20; ++trial) expect_matches_ray_cast(oracle::random_soup(rng, 12), {}, k);
}

TEST(Render, MatchesRayCastOnSphere) {
  const TriangleMesh sphere = make_primitive("sphere", 3);
  ASSERT_LE(sphere.faces.size(), 216u);
  std::mt19937_64 rng(2);
  const CameraIntrinsics k = camera(80, 60, 90.0);
  for (int trial = 0; trial < 5; ++trial) {
    SimilarityTransform pose;
    pose.r = oracle::random_rotation(rng);
    pose.t = Vec3(0.05, -0.03, 1.5);
    expect_matches_ray_cast(sphere, pose, k);
  }
}

TEST(Render, CubeSilhouetteAndNearestDepth) {
  // Front face at z = 1.5 with half-width 0.5 projects to 500 * 0.5 / 1.5 px each side.
  const CameraIntrinsics k = camera(640, 480, 500.0);
  SimilarityTransform pose;
  pose.t = Vec3(0, 0, 2);
  const RenderOutput out = render(cube(1.0), pose, k, Shading::kNone);
  int row = 0;
  for (int x = 0; x < k.width; ++x) row += out.mask.at(x, 240);
  EXPECT_NEAR(row, 1000.0 / 3.0, 1.0);
  float near = 1e9f;
  for (float d : out.depth.values)
    if (d > 0) near = std::min(near, d);
  EXPECT_NEAR(near, 1.5f, 1e-6);
  EXPECT_NEAR(out.depth.at(320, 240), 1.5f, 1e-6);
}

TEST(Render, GeometryBehindCameraIsDropped) {
  const CameraIntrinsics k = camera(32, 32, 30.0);
  SimilarityTransform pose;
  pose.t = Vec3(0, 0, -3);
  const RenderOutput out = render(cube(1.0), pose, k);
  EXPECT_EQ(out.mask.count(), 0u);
  for (auto f : out.face_index) EXPECT_EQ(f, -1);
  // Straddling the camera plane: faces touching z <= 0 vanish, the rest stay consistent.
  pose.t = Vec3(0, 0, 0.4);
  const RenderOutput part = render(cube(1.0), pose, k, Shading::kNone);
  for (std::size_t i = 0; i < part.face_index.size(); ++i)
    EXPECT_EQ(part.face_index[i] >= 0, part.mask.values[i] != 0);
}

TEST(Render, MaskFaceAndDepthAgree) {
  std::mt19937_64 rng(3);
  const CameraIntrinsics k = camera(64, 48, 60.0);
  const TriangleMesh soup = oracle::random_soup(rng, 30);
  const RenderOutput out = render(soup, {}, k, Shading::kFlat);
  ASSERT_TRUE(out.shaded.has_value());
  for (std::size_t i = 0; i < out.face_index.size(); ++i) {
    const bool hit = out.face_index[i] >= 0;
    EXPECT_EQ(hit, out.mask.values[i] != 0);
    EXPECT_EQ(hit, out.depth.values[i] > 0.0f);
  }
}

TEST(Render, VertexColourShadingInterpolates) {
  TriangleMesh m = cube(1.0);
  m.colors.assign(m.vertices.size(), Eigen::Vector3f(0.2f, 0.4f, 0.6f));
  SimilarityTransform pose;
  pose.t = Vec3(0, 0, 2);
  const RenderOutput out = render(m, pose, camera(64, 64, 50.0), Shading::kVertexColor);
  ASSERT_TRUE(out.shaded.has_value());
  const auto& img = *out.shaded;
  const std::uint8_t* px = img.at(32, 32);
  EXPECT_NEAR(px[0], 51, 1);
  EXPECT_NEAR(px[1], 102, 1);
  EXPECT_NEAR(px[2], 153, 1);
}

TEST(CanonicalViews, SymmetricMeshGivesEqualAreas) {
  const TriangleMesh m = cube(0.5);
  const CameraIntrinsics k = camera(160, 120, 150.0);
  const auto poses = canonical_view_poses(0.5 * std::sqrt(3.0), k);
  const double a0 = double(render(m, poses[0], k, Shading::kNone).mask.count());
  ASSERT_GT(a0, 0.0);
  for (int i = 1; i < 4; ++i) {
    const double a = double(render(m, poses[i], k, Shading::kNone).mask.count());
    EXPECT_NEAR(a / a0, 1.0, 0.02);
  }
  EXPECT_NEAR(rotation_geodesic_deg(poses[0].r, poses[2].r), 180.0, 1e-9);
  EXPECT_NEAR(rotation_geodesic_deg(poses[0].r, poses[1].r), 90.0, 1e-9);
  for (const auto& p : poses) EXPECT_NO_THROW(validate(p));
}

TEST(CanonicalViews, UprightAndDistanceLinearInDiameter) {
  const CameraIntrinsics k = camera(160, 120, 150.0);
  // Canonical +y is image-up (negative camera y); +z faces the camera.
  const Mat3 u = upright_view_rotation();
  EXPECT_LT((u * Vec3::UnitY() - Vec3(0, -1, 0)).norm(), 1e-12);
  EXPECT_LT((u * Vec3::UnitZ() - Vec3(0, 0, -1)).norm(), 1e-12);
  const double d1 = canonical_view_poses(1.0, k)[0].t.z();
  EXPECT_NEAR(canonical_view_poses(2.0, k)[0].t.z(), 2.0 * d1, 1e-12);
  EXPECT_NEAR(canonical_view_poses(0.3, k)[3].t.z(), 0.3 * d1, 1e-12);
  EXPECT_NEAR(d1, 150.0 / (0.6 * 120.0), 1e-12);
}

TEST(CanonicalViews, AreaShrinksWithDistance) {
  const TriangleMesh m = cube(0.5);
  const CameraIntrinsics k = camera(160, 120, 150.0);
  double previous = 1e18;
  for (double diameter : {0.6, 0.9, 1.2, 1.8}) {
    const double a = double(render(m, canonical_view_poses(diameter, k)[0], k, Shading::kNone).mask.count());
    EXPECT_LT(a, previous);
    previous = a;
  }
}
