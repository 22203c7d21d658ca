#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "unipose/error.hpp"
#include "unipose/refine.hpp"
#include "unipose/renderer.hpp"
#include "unipose/synthetic.hpp"

using namespace unipose;

namespace {

using Points = std::vector<Vec3>;

Eigen::VectorXd flat(const Points& p) {
  Eigen::VectorXd x(3 * p.size());
  for (std::size_t i = 0; i < p.size(); ++i) x.segment<3>(3 * i) = p[i];
  return x;
}

Points unflat(const Eigen::VectorXd& x) {
  Points p(std::size_t(x.size() / 3));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = x.segment<3>(3 * i);
  return p;
}

// Finite-difference check of a points -> LossGrad function.
double point_gradient_error(const std::function<LossGrad(const Points&)>& f, const Points& at, double h) {
  const LossGrad l = f(at);
  return oracle::gradient_rel_error([&](const Eigen::VectorXd& x) { return f(unflat(x)).value; }, flat(at),
                                    flat(l.grad), h);
}

TriangleMesh octahedron() {
  TriangleMesh m;
  m.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  return m;
}

// A refinement scene whose target is the mesh itself at `pose`.
struct ExactScene {
  TriangleMesh mesh;
  SimilarityTransform pose;
  RefineScene scene;
};

ExactScene exact_scene(std::uint64_t seed) {
  ExactScene e;
  e.mesh = make_primitive("box", 4);
  e.pose.r = oracle::rotation_about(Vec3(0.3, 1.0, 0.2), 35.0) * upright_view_rotation();
  e.pose.t = Vec3(0.01, -0.02, 0.7);
  e.pose.s = 0.25;
  const CameraIntrinsics k{300.0, 300.0, 80.0, 60.0, 160, 120};
  const RenderOutput r = render(e.mesh, e.pose, k, Shading::kNone);
  e.scene.samples = sample_surface(e.mesh, 400, seed);
  e.scene.mask = make_mask_target(r.mask, k, e.scene.samples.size());
  const Points y = evaluate_samples(e.scene.samples, e.mesh, e.mesh.vertices);
  // Like a depth camera, the target only sees the front of the object.
  update_visibility(e.scene, e.mesh, realized_pose(e.pose, RefineParams::zeros(e.mesh.vertices.size()), e.mesh), k);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!e.scene.visible[i]) continue;
    e.scene.pairs.pairs.emplace_back(i, e.scene.target_points.size());
    e.scene.target_points.push_back(e.pose.apply(y[i]));
    e.scene.pairs.similarity.push_back(1.0);
  }
  return e;
}

}  // namespace

TEST(Chamfer, HandExampleAndGradient) {
  const LossGrad l = chamfer_loss({{0, 0, 0}}, {{1, 0, 0}});
  EXPECT_DOUBLE_EQ(l.value, 1.0);
  EXPECT_LT((l.grad[0] - Vec3(-2, 0, 0)).norm(), 1e-12);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Points a = oracle::random_points(rng, 15, 1.0), b = oracle::random_points(rng, 11, 1.0);
    EXPECT_LT(point_gradient_error([&](const Points& p) { return chamfer_loss(p, b); }, a, 1e-6), 1e-6);
  }
}

TEST(Alignment, ShiftExampleAndPairs) {
  std::mt19937_64 rng(2);
  const Points r = oracle::random_points(rng, 10, 1.0);
  Points t = r;
  for (auto& p : t) p += Vec3(0.1, 0, 0);
  AlignmentPairs pairs;
  for (std::size_t i = 0; i < r.size(); ++i) pairs.pairs.emplace_back(i, i);
  pairs.similarity.assign(r.size(), 1.0);
  EXPECT_NEAR(alignment_loss(r, t, pairs).value, 0.5 * 10 * 0.01, 1e-12);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return alignment_loss(p, t, pairs); }, r, 1e-6), 1e-7);

  // Mutual nearest neighbours under cosine similarity.
  Tensor fr({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor ft({2, 2}, {0, 2, 3, 0.1f});
  const AlignmentPairs mp = mutual_feature_pairs(fr, ft, 0.5);
  ASSERT_EQ(mp.pairs.size(), 2u);
  EXPECT_EQ(mp.pairs[0], (std::pair<std::size_t, std::size_t>(0, 1)));
  EXPECT_EQ(mp.pairs[1], (std::pair<std::size_t, std::size_t>(1, 0)));
  EXPECT_NEAR(mp.similarity[1], 1.0, 1e-12);
  EXPECT_TRUE(mutual_feature_pairs(fr, ft, 1.0).empty());
}

TEST(Regularisers, HandExamples) {
  const Points x0 = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  Points x = x0;
  for (auto& p : x) p += Vec3(0, 0, 0.01);
  EXPECT_NEAR(pose_reg_loss(x, x0).value, 0.01, 1e-15);
  EXPECT_NEAR(center_reg_loss(x, x0).value, 0.01, 1e-15);
  EXPECT_EQ(pose_reg_loss(x0, x0).value, 0.0);
  EXPECT_EQ(center_reg_loss(x0, x0).value, 0.0);
  Points dv(4, Vec3::Zero());
  dv[2] = Vec3(3, 4, 0);
  EXPECT_NEAR(deform_reg_loss(dv).value, 5.0 / 2.0, 1e-15);
  EXPECT_EQ(deform_reg_loss(Points(4, Vec3::Zero())).value, 0.0);

  std::mt19937_64 rng(3);
  const Points a = oracle::random_points(rng, 12, 1.0), b = oracle::random_points(rng, 12, 1.0);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return pose_reg_loss(p, b); }, a, 1e-6), 1e-7);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return center_reg_loss(p, b); }, a, 1e-6), 1e-7);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return deform_reg_loss(p); }, a, 1e-6), 1e-7);
}

TEST(MeshRegularisers, OctahedronValuesAndScaling) {
  const TriangleMesh m = octahedron();
  const MeshTopology topo = build_topology(m);
  EXPECT_EQ(topo.edges.size(), 12u);
  EXPECT_EQ(topo.adjacent_faces.size(), 12u);
  EXPECT_EQ(topo.neighbours[0], (std::vector<int>{2, 3, 4, 5}));
  const MeshRegLosses l = mesh_reg_losses(m.vertices, m, topo);
  EXPECT_NEAR(l.edge.value, 2.0, 1e-12);
  EXPECT_NEAR(l.normal.value, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(l.laplacian.value, 1.0, 1e-12);

  Points doubled = m.vertices;
  for (auto& v : doubled) v *= 2.0;
  const MeshRegLosses d = mesh_reg_losses(doubled, m, topo);
  EXPECT_NEAR(d.edge.value, 4.0 * l.edge.value, 1e-12);
  EXPECT_NEAR(d.laplacian.value, 4.0 * l.laplacian.value, 1e-12);
  EXPECT_NEAR(d.normal.value, l.normal.value, 1e-12);
}

TEST(MeshRegularisers, FlatRegularPatchHasNoBending) {
  // A hexagon fan: the centre is the mean of its neighbours and all faces are coplanar.
  TriangleMesh m;
  m.vertices.push_back(Vec3::Zero());
  for (int i = 0; i < 6; ++i) m.vertices.emplace_back(std::cos(M_PI * i / 3), std::sin(M_PI * i / 3), 0.0);
  for (int i = 0; i < 6; ++i) m.faces.push_back({0, 1 + i, 1 + (i + 1) % 6});
  const MeshTopology topo = build_topology(m);
  const MeshRegLosses l = mesh_reg_losses(m.vertices, m, topo);
  EXPECT_NEAR(l.normal.value, 0.0, 1e-15);
  Points bumped = m.vertices;
  bumped[0].z() = 0.1;
  const MeshRegLosses b = mesh_reg_losses(bumped, m, topo);
  EXPECT_GT(b.normal.value, 0.0);
  EXPECT_GT(b.laplacian.value, l.laplacian.value);
  // The flat centre is a stationary point of the Laplacian term.
  EXPECT_LT(l.laplacian.grad[0].norm(), 1e-15);
}

TEST(MeshRegularisers, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  const TriangleMesh m = oracle::small_mesh(rng);
  const MeshTopology topo = build_topology(m);
  Points v = m.vertices;
  std::normal_distribution<double> n01(0.0, 0.02);
  for (auto& p : v) p += Vec3(n01(rng), n01(rng), n01(rng));
  EXPECT_LT(point_gradient_error([&](const Points& p) { return mesh_reg_losses(p, m, topo).edge; }, v, 1e-6), 1e-7);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return mesh_reg_losses(p, m, topo).normal; }, v, 1e-6), 1e-6);
  EXPECT_LT(point_gradient_error([&](const Points& p) { return mesh_reg_losses(p, m, topo).laplacian; }, v, 1e-6),
            1e-7);
}

TEST(MaskLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const oracle::GradientProblem g = oracle::make_gradient_problem(seed);
    const RealizedPose rp = realized_pose(g.init, g.params, g.mesh);
    Points pts;
    for (const auto& y : evaluate_samples(g.scene.samples, g.mesh, rp.vertices)) pts.push_back(rp.apply(y));
    EXPECT_LT(point_gradient_error([&](const Points& p) { return mask_loss(p, g.scene.mask); }, pts, 1e-7), 1e-4)
        << "seed " << seed;
  }
}

TEST(MaskLoss, ZeroInsideAndCoveredAndPositiveOutside) {
  Mask mask(40, 40);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) mask.set(x, y, true);
  const CameraIntrinsics k{40.0, 40.0, 20.0, 20.0, 40, 40};
  const MaskTarget t = make_mask_target(mask, k, 400, 100);
  Points dense;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const double u = 10.5 + 19.0 * x / 39.0, v = 10.5 + 19.0 * y / 39.0;
      dense.push_back(k.unproject(u, v, 1.0));
    }
  const double inside = mask_loss(dense, t).value;
  Points shifted = dense;
  for (auto& p : shifted) p.x() += 0.5;
  EXPECT_GT(mask_loss(shifted, t).value, inside + 1.0);
  EXPECT_LT(inside, 0.1);
  EXPECT_NEAR(hard_mask_loss(mask, mask), 0.0, 1e-15);
  EXPECT_EQ(hard_mask_loss(Mask(4, 4), Mask(4, 4)), 1.0);
}

TEST(RealizedPose, Examples) {
  const TriangleMesh m = octahedron();
  SimilarityTransform init;
  init.r = rot_z(0.4);
  init.t = Vec3(1, 2, 3);
  init.s = 0.5;
  RefineParams p = RefineParams::zeros(m.vertices.size());
  RealizedPose rp = realized_pose(init, p, m);
  EXPECT_LT((rp.rotation - init.linear()).norm(), 1e-15);
  EXPECT_EQ(rp.translation, init.t);
  EXPECT_EQ(rp.vertices, m.vertices);

  p.delta_log_s = Vec3(std::log(2.0), 0, 0);
  p.delta_t = Vec3(0, 0, 0.01);
  p.delta_rot = Vec3(0, 0, 0.1);
  p.delta_v[4] = Vec3(0, 0, 1);
  rp = realized_pose(init, p, m);
  EXPECT_LT((rp.vertices[0] - Vec3(2, 0, 0)).norm(), 1e-12);
  EXPECT_LT((rp.vertices[4] - Vec3(0, 0, 2)).norm(), 1e-12);
  EXPECT_LT((rp.translation - Vec3(1, 2, 3.01)).norm(), 1e-15);
  EXPECT_LT((rp.rotation - rot_z(0.5) * 0.5).norm(), 1e-12);
  EXPECT_LT((rp.apply(Vec3(1, 0, 0)) - (0.5 * (rot_z(0.5) * Vec3(1, 0, 0)) + rp.translation)).norm(), 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const oracle::GradientProblem g = oracle::make_gradient_problem(seed);
    const LossWeights w;
    const std::size_t nv = g.mesh.vertices.size();
    const LossEvaluation ev = total_loss(g.init, g.params, g.mesh, g.topo, g.scene, w);
    const auto f = [&](const Eigen::VectorXd& x) {
      return total_loss(g.init, RefineParams::unflatten(x, nv), g.mesh, g.topo, g.scene, w).terms.total;
    };
    EXPECT_LT(oracle::gradient_rel_error(f, g.params.flatten(), ev.grad.flatten(), 1e-7), 1e-4) << "seed " << seed;
  }
}

TEST(TotalLoss, EachTermAloneMatchesFiniteDifferences) {
  const oracle::GradientProblem g = oracle::make_gradient_problem(11);
  const std::size_t nv = g.mesh.vertices.size();
  const char* names[] = {"mask", "chamfer", "align", "pose", "centre", "deform", "edge", "normal", "laplacian"};
  for (int term = 0; term < 9; ++term) {
    LossWeights w{0, 0, 0, 0, 0, 0, 0, 0, 0, 0.8};
    double* slots[] = {&w.a_m, &w.a_c, &w.a_g, &w.a_p, &w.a_ce, &w.a_d, &w.edge, &w.normal, &w.laplacian};
    *slots[term] = 1.0;
    const LossEvaluation ev = total_loss(g.init, g.params, g.mesh, g.topo, g.scene, w);
    const auto f = [&](const Eigen::VectorXd& x) {
      return total_loss(g.init, RefineParams::unflatten(x, nv), g.mesh, g.topo, g.scene, w).terms.total;
    };
    EXPECT_LT(oracle::gradient_rel_error(f, g.params.flatten(), ev.grad.flatten(), 1e-7), 1e-4) << names[term];
  }
}

TEST(TotalLoss, BreakdownSumsAndZeroParamsHaveNoRegularisation) {
  const oracle::GradientProblem g = oracle::make_gradient_problem(21);
  LossWeights w;
  w.a_c = 0.3;
  w.normal = 0.5;
  const LossBreakdown b = total_loss(g.init, g.params, g.mesh, g.topo, g.scene, w).terms;
  const double sum = w.a_m * b.mask + w.a_c * b.chamfer + w.a_g * b.align + w.a_p * b.pose_reg +
                     w.a_ce * b.center_reg + w.a_d * b.deform + w.edge * b.edge + w.normal * b.normal +
                     w.laplacian * b.laplacian;
  EXPECT_NEAR(b.total, sum, 1e-9 * std::abs(sum));
  const LossBreakdown z =
      total_loss(g.init, RefineParams::zeros(g.mesh.vertices.size()), g.mesh, g.topo, g.scene, w).terms;
  EXPECT_EQ(z.pose_reg, 0.0);
  EXPECT_EQ(z.center_reg, 0.0);
  EXPECT_EQ(z.deform, 0.0);
  // Lengths are in millimetres: a 1 cm translation costs 10 units of pose regulariser.
  RefineParams p = RefineParams::zeros(g.mesh.vertices.size());
  p.delta_t = Vec3(0, 0, 0.01);
  EXPECT_NEAR(total_loss(g.init, p, g.mesh, g.topo, g.scene, w).terms.pose_reg, 10.0, 1e-9);
}

TEST(Adam, GroundTruthIsNearlyAFixedPointWithoutAlignment) {
  ExactScene e = exact_scene(1);
  RefineConfig cfg;
  cfg.weights.a_g = 0.0;
  const RefineResult r = adam_optimize(e.pose, e.mesh, e.scene, cfg);
  EXPECT_LT(rotation_geodesic_deg(r.pose.transform.r, e.pose.r), 0.2);
  EXPECT_LT((r.pose.transform.t - e.pose.t).norm(), 0.001);
  EXPECT_EQ(r.trace.size(), std::size_t(cfg.steps + 1));
  EXPECT_EQ(r.trace.back().step, cfg.steps);
}

TEST(Adam, GroundTruthStaysCloseWithDefaultWeights) {
  ExactScene e = exact_scene(2);
  RefineConfig cfg;
  const RefineResult r = adam_optimize(e.pose, e.mesh, e.scene, cfg);
  EXPECT_LT(rotation_geodesic_deg(r.pose.transform.r, e.pose.r), 1.0);
  EXPECT_LT((r.pose.transform.t - e.pose.t).norm(), 0.002);
  EXPECT_EQ(r.pairs, e.scene.pairs.pairs.size());
}

TEST(Adam, ReducesAPerturbation) {
  ExactScene e = exact_scene(3);
  SimilarityTransform start = e.pose;
  start.r = oracle::rotation_about(Vec3(1, 2, 0.5), 3.0) * start.r;
  start.t += Vec3(0.004, -0.003, 0.005);
  const RefineResult r = adam_optimize(start, e.mesh, e.scene, RefineConfig{});
  const double rot0 = rotation_geodesic_deg(start.r, e.pose.r), rot1 = rotation_geodesic_deg(r.pose.transform.r, e.pose.r);
  const double t0 = (start.t - e.pose.t).norm(), t1 = (r.pose.transform.t - e.pose.t).norm();
  EXPECT_LT(rot1, 0.5 * rot0);
  EXPECT_LT(t1, 0.5 * t0);
  EXPECT_LT(r.chamfer_final, r.chamfer_init);
  EXPECT_LT(r.trace.back().terms.total, r.trace.front().terms.total);
}

TEST(Adam, DeterministicAndScheduled) {
  ExactScene e1 = exact_scene(4), e2 = exact_scene(4);
  RefineConfig cfg;
  cfg.steps = 20;
  SimilarityTransform start = e1.pose;
  start.t.x() += 0.003;
  const RefineResult a = adam_optimize(start, e1.mesh, e1.scene, cfg);
  const RefineResult b = adam_optimize(start, e2.mesh, e2.scene, cfg);
  EXPECT_EQ(a.pose.transform.r, b.pose.transform.r);
  EXPECT_EQ(a.pose.transform.t, b.pose.transform.t);
  ASSERT_EQ(a.trace.size(), 21u);
  for (int i = 0; i <= 10; ++i) EXPECT_EQ(a.trace[i].lr_scale, 1.0);
  EXPECT_NEAR(a.trace[20].lr_scale, cfg.decay_floor, 1e-12);
  for (int i = 11; i <= 20; ++i) EXPECT_LE(a.trace[i].lr_scale, a.trace[i - 1].lr_scale);
}

TEST(Adam, NonFiniteLossIsANumericalError) {
  ExactScene e = exact_scene(5);
  e.scene.target_points[0].x() = std::numeric_limits<double>::quiet_NaN();
  RefineConfig cfg;
  cfg.steps = 3;
  try {
    adam_optimize(e.pose, e.mesh, e.scene, cfg);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(err.what()).find("step 0"), std::string::npos);
  }
  RefineConfig bad;
  bad.steps = -1;
  EXPECT_THROW(validate(bad), Error);
}

TEST(SurfaceSamples, AreaWeightedAndReproducible) {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {3, 0, 1}, {0, 3, 1}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};  // areas 0.5 and 4.5
  const SurfaceSamples s = sample_surface(m, 20000, 9);
  EXPECT_EQ(s.face, sample_surface(m, 20000, 9).face);
  const double frac = double(std::count(s.face.begin(), s.face.end(), 1)) / double(s.size());
  EXPECT_NEAR(frac, 0.9, 0.01);
  for (const auto& b : s.bary) {
    EXPECT_NEAR(b.sum(), 1.0, 1e-12);
    EXPECT_GE(b.minCoeff(), 0.0);
  }
}
