#include "unipose/refine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "unipose/error.hpp"
#include "unipose/kdtree.hpp"
#include "unipose/renderer.hpp"
#include "unipose/synthetic.hpp"

namespace unipose {

void validate(const LossWeights& w) {
  for (double x : {w.a_m, w.a_c, w.a_g, w.a_p, w.a_ce, w.a_d, w.edge, w.normal, w.laplacian})
    require(std::isfinite(x) && x >= 0.0, "loss weights must be finite and non-negative");
  require(std::isfinite(w.beta_g) && w.beta_g >= -1.0 && w.beta_g <= 1.0, "beta_g must lie in [-1, 1]");
}

void validate(const RefineConfig& cfg) {
  validate(cfg.weights);
  require(cfg.steps >= 0, "refine: steps must be >= 0");
  for (double lr : {cfg.lr_rot, cfg.lr_t, cfg.lr_log_s, cfg.lr_v})
    require(std::isfinite(lr) && lr >= 0.0, "refine: learning rates must be non-negative");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "refine: Adam betas must lie in [0, 1)");
  require(cfg.eps > 0.0, "refine: eps must be positive");
  require(cfg.decay_floor > 0.0 && cfg.decay_floor <= 1.0, "refine: decay_floor must lie in (0, 1]");
  require(cfg.num_samples >= 16, "refine: num_samples must be >= 16");
  require(cfg.max_target_points >= 16, "refine: max_target_points must be >= 16");
  require(cfg.length_unit_m > 0.0, "refine: length_unit_m must be positive");
}

RefineParams RefineParams::zeros(std::size_t num_vertices) {
  RefineParams p;
  p.delta_v.assign(num_vertices, Vec3::Zero());
  return p;
}

Eigen::VectorXd RefineParams::flatten() const {
  Eigen::VectorXd x(dimension());
  x.segment<3>(0) = delta_rot;
  x.segment<3>(3) = delta_t;
  x.segment<3>(6) = delta_log_s;
  for (std::size_t i = 0; i < delta_v.size(); ++i) x.segment<3>(9 + 3 * i) = delta_v[i];
  return x;
}

RefineParams RefineParams::unflatten(const Eigen::VectorXd& x, std::size_t num_vertices) {
  require(std::size_t(x.size()) == 9 + 3 * num_vertices, "RefineParams::unflatten: size mismatch");
  RefineParams p = zeros(num_vertices);
  p.delta_rot = x.segment<3>(0);
  p.delta_t = x.segment<3>(3);
  p.delta_log_s = x.segment<3>(6);
  for (std::size_t i = 0; i < num_vertices; ++i) p.delta_v[i] = x.segment<3>(9 + 3 * i);
  return p;
}

RealizedPose realized_pose(const SimilarityTransform& init, const RefineParams& p, const TriangleMesh& mesh) {
  require(p.delta_v.size() == mesh.vertices.size(), "realized_pose: delta_v size does not match the mesh");
  RealizedPose r;
  r.rotation = axis_angle_to_matrix(p.delta_rot) * init.linear();
  r.translation = init.t + p.delta_t;
  const Vec3 scale = p.delta_log_s.array().exp();
  r.vertices.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    r.vertices[i] = scale.cwiseProduct(mesh.vertices[i] + p.delta_v[i]);
  return r;
}

namespace {

std::vector<Vec3> zeros3(std::size_t n) { return std::vector<Vec3>(n, Vec3::Zero()); }

KdTree3 tree_of(const std::vector<Vec3>& pts) { return KdTree3(std::vector<Eigen::Vector3d>(pts.begin(), pts.end())); }

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Left Jacobian of SO(3): d exp(w + dw) = exp([J dw]x) exp(w).
Mat3 left_jacobian(const Vec3& w) {
  const double th = w.norm();
  const Mat3 k = skew(w);
  if (th < 1e-6) return Mat3::Identity() + 0.5 * k + k * k / 6.0;
  return Mat3::Identity() + (1.0 - std::cos(th)) / (th * th) * k + (th - std::sin(th)) / (th * th * th) * k * k;
}

// Gradient of a face normal's unnormalised cross product c = (b - a) x (d - a),
// pulled back from a gradient on the unit normal.
void accumulate_normal_grad(const Vec3& a, const Vec3& b, const Vec3& d, const Vec3& g_n, Vec3& ga, Vec3& gb,
                            Vec3& gd) {
  const Vec3 c = (b - a).cross(d - a);
  const double len = c.norm();
  if (len < 1e-18) return;
  const Vec3 n = c / len;
  const Vec3 g_c = (g_n - n * n.dot(g_n)) / len;
  ga += (b - d).cross(g_c);
  gb += (d - a).cross(g_c);
  gd += g_c.cross(b - a);
}

}  // namespace

LossGrad chamfer_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(!a.empty() && !b.empty(), "chamfer_loss: empty point cloud");
  LossGrad out;
  out.grad = zeros3(a.size());
  const KdTree3 tb = tree_of(b);
  const KdTree3 ta = tree_of(a);
  const double na = double(a.size());
  const double nb = double(b.size());
  double sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto hit = tb.nearest(a[i]);
    sum_a += hit.sq_dist;
    out.grad[i] += (a[i] - b[hit.index]) / na;
  }
  double sum_b = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const auto hit = ta.nearest(b[j]);
    sum_b += hit.sq_dist;
    out.grad[hit.index] += (a[hit.index] - b[j]) / nb;
  }
  out.value = 0.5 * (sum_a / na + sum_b / nb);
  return out;
}

MaskTarget make_mask_target(const Mask& mask, const CameraIntrinsics& k, std::size_t expected_points,
                            std::size_t coverage_samples) {
  validate(k);
  require(mask.width == k.width && mask.height == k.height, "mask target: mask size does not match intrinsics");
  require(expected_points > 0 && coverage_samples > 0, "mask target: sample counts must be positive");
  MaskTarget t;
  t.mask = mask;
  t.sdf = signed_distance_field(mask);
  t.k = k;
  const double area = double(mask.count());
  const int stride = std::max(1, int(std::floor(std::sqrt(area / double(coverage_samples)))));
  for (int y = stride / 2; y < mask.height; y += stride)
    for (int x = stride / 2; x < mask.width; x += stride)
      if (mask.at(x, y)) t.coverage.emplace_back(x + 0.5, y + 0.5);
  if (t.coverage.empty()) {
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(x, y)) t.coverage.emplace_back(x + 0.5, y + 0.5);
  }
  t.tau = 1.5 * std::sqrt(area / double(expected_points));
  return t;
}

LossGrad mask_loss(const std::vector<Vec3>& points, const MaskTarget& target) {
  require(!points.empty(), "mask_loss: no points");
  require(!target.coverage.empty(), "mask_loss: empty target mask");
  const CameraIntrinsics& k = target.k;
  LossGrad out;
  out.grad = zeros3(points.size());

  std::vector<Eigen::Vector2d> uv(points.size());
  std::vector<std::size_t> projected;  // indices of points in front of the camera
  projected.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].z() > 0.0)) continue;
    uv[i] = k.project(points[i]);
    projected.push_back(i);
  }
  if (projected.empty()) fail(ErrorKind::kNumerical, "mask_loss: every point is behind the camera");

  // Pixel-space gradient -> point gradient.
  auto pull_back = [&](std::size_t i, const Eigen::Vector2d& g_uv) {
    const Vec3& x = points[i];
    const double iz = 1.0 / x.z();
    out.grad[i] += Vec3(k.fx * iz * g_uv.x(), k.fy * iz * g_uv.y(),
                        -(k.fx * x.x() * g_uv.x() + k.fy * x.y() * g_uv.y()) * iz * iz);
  };

  const double n = double(points.size());
  double outside = 0.0;
  for (std::size_t i : projected) {
    Eigen::Vector2d g;
    const double d = target.sdf.sample(uv[i].x(), uv[i].y(), &g);
    if (d <= 0.0) continue;
    outside += d * d;
    pull_back(i, 2.0 * d / n * g);
  }

  std::vector<Eigen::Vector2d> proj_pts;
  proj_pts.reserve(projected.size());
  for (std::size_t i : projected) proj_pts.push_back(uv[i]);
  const KdTree2 tree(std::move(proj_pts));
  const double m = double(target.coverage.size());
  const double kappa = target.kappa;
  double coverage = 0.0;
  for (const auto& g : target.coverage) {
    const auto hit = tree.nearest(g);
    const double d = std::sqrt(hit.sq_dist);
    coverage += kappa * softplus((d - target.tau) / kappa);
    if (d > 0.0) {
      const std::size_t i = projected[hit.index];
      pull_back(i, sigmoid((d - target.tau) / kappa) / m * (uv[i] - g) / d);
    }
  }
  out.value = outside / n + coverage / m;
  return out;
}

double hard_mask_loss(const Mask& a, const Mask& b) {
  require(a.width == b.width && a.height == b.height, "hard_mask_loss: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool x = a.values[i] != 0, y = b.values[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : 1.0 - double(inter) / double(uni);
}

AlignmentPairs mutual_feature_pairs(const Tensor& reference_features, const Tensor& target_features, double beta_g) {
  require(reference_features.ndims() == 2 && target_features.ndims() == 2, "feature pairs: expected [N, C] tensors");
  require(reference_features.dim(1) == target_features.dim(1), "feature pairs: channel mismatch");
  const std::size_t nr = reference_features.dim(0), nt = target_features.dim(0), c = reference_features.dim(1);
  AlignmentPairs out;
  if (nr == 0 || nt == 0) return out;
  auto normalized = [c](const Tensor& t, std::size_t n) {
    Eigen::MatrixXd m(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < c; ++k) m(i, k) = t[i * c + k];
      const double len = m.row(i).norm();
      if (len > 0.0) m.row(i) /= len;
    }
    return m;
  };
  const Eigen::MatrixXd r = normalized(reference_features, nr);
  const Eigen::MatrixXd t = normalized(target_features, nt);
  const Eigen::MatrixXd s = r * t.transpose();
  std::vector<Eigen::Index> best_t(nr), best_r(nt);
  for (std::size_t i = 0; i < nr; ++i) s.row(i).maxCoeff(&best_t[i]);
  for (std::size_t j = 0; j < nt; ++j) s.col(j).maxCoeff(&best_r[j]);
  for (std::size_t i = 0; i < nr; ++i) {
    const std::size_t j = std::size_t(best_t[i]);
    if (std::size_t(best_r[j]) != i || !(s(i, j) > beta_g)) continue;
    out.pairs.emplace_back(i, j);
    out.similarity.push_back(s(i, j));
  }
  return out;
}

LossGrad alignment_loss(const std::vector<Vec3>& reference, const std::vector<Vec3>& target,
                        const AlignmentPairs& pairs) {
  LossGrad out;
  out.grad = zeros3(reference.size());
  for (const auto& [i, j] : pairs.pairs) {
    require(i < reference.size() && j < target.size(), "alignment_loss: pair index out of range");
    const Vec3 d = reference[i] - target[j];
    out.value += 0.5 * d.squaredNorm();
    out.grad[i] += d;
  }
  return out;
}

LossGrad universal_alignment_loss(const PointCloud& reference, const PointCloud& target, double beta_g,
                                  AlignmentPairs* pairs_out) {
  require(reference.features && target.features, "universal_alignment_loss: both clouds need features");
  require(reference.features->dim(0) == reference.size() && target.features->dim(0) == target.size(),
          "universal_alignment_loss: feature rows do not match point counts");
  const AlignmentPairs pairs = mutual_feature_pairs(*reference.features, *target.features, beta_g);
  if (pairs_out) *pairs_out = pairs;
  return alignment_loss(reference.points, target.points, pairs);
}

LossGrad pose_reg_loss(const std::vector<Vec3>& posed, const std::vector<Vec3>& initial) {
  require(posed.size() == initial.size() && !posed.empty(), "pose_reg_loss: size mismatch");
  LossGrad out;
  out.grad = zeros3(posed.size());
  const double n = double(posed.size());
  for (std::size_t i = 0; i < posed.size(); ++i) {
    const Vec3 d = posed[i] - initial[i];
    const double len = d.norm();
    out.value += len / n;
    if (len > 0.0) out.grad[i] = d / (len * n);
  }
  return out;
}

LossGrad center_reg_loss(const std::vector<Vec3>& posed, const std::vector<Vec3>& initial) {
  require(posed.size() == initial.size() && !posed.empty(), "center_reg_loss: size mismatch");
  const double n = double(posed.size());
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < posed.size(); ++i) c += (posed[i] - initial[i]) / n;
  LossGrad out;
  out.value = c.norm();
  const Vec3 g = out.value > 0.0 ? Vec3(c / (out.value * n)) : Vec3::Zero();
  out.grad.assign(posed.size(), g);
  return out;
}

LossGrad deform_reg_loss(const std::vector<Vec3>& delta_v) {
  require(!delta_v.empty(), "deform_reg_loss: empty");
  const double n = double(delta_v.size());
  double sq = 0.0;
  for (const auto& d : delta_v) sq += d.squaredNorm();
  LossGrad out;
  out.value = std::sqrt(sq / n);
  out.grad = zeros3(delta_v.size());
  if (out.value > 0.0)
    for (std::size_t i = 0; i < delta_v.size(); ++i) out.grad[i] = delta_v[i] / (n * out.value);
  return out;
}

MeshTopology build_topology(const TriangleMesh& mesh) {
  MeshTopology topo;
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(int(f));
    }
  }
  topo.neighbours.resize(mesh.vertices.size());
  for (const auto& [edge, faces] : edge_faces) {
    topo.edges.push_back(edge);
    topo.neighbours[edge.first].push_back(edge.second);
    topo.neighbours[edge.second].push_back(edge.first);
    for (std::size_t i = 0; i < faces.size(); ++i)
      for (std::size_t j = i + 1; j < faces.size(); ++j) topo.adjacent_faces.emplace_back(faces[i], faces[j]);
  }
  for (auto& n : topo.neighbours) std::sort(n.begin(), n.end());
  return topo;
}

MeshRegLosses mesh_reg_losses(const std::vector<Vec3>& v, const TriangleMesh& mesh, const MeshTopology& topo) {
  require(v.size() == mesh.vertices.size(), "mesh_reg_losses: vertex count mismatch");
  MeshRegLosses out;
  out.edge.grad = zeros3(v.size());
  out.normal.grad = zeros3(v.size());
  out.laplacian.grad = zeros3(v.size());

  if (!topo.edges.empty()) {
    const double e = double(topo.edges.size());
    for (const auto& [a, b] : topo.edges) {
      const Vec3 d = v[a] - v[b];
      out.edge.value += d.squaredNorm() / e;
      out.edge.grad[a] += 2.0 * d / e;
      out.edge.grad[b] -= 2.0 * d / e;
    }
  }

  if (!topo.adjacent_faces.empty()) {
    std::vector<Vec3> normals(mesh.faces.size(), Vec3::Zero());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const auto& t = mesh.faces[f];
      const Vec3 c = (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]);
      const double len = c.norm();
      if (len > 1e-18) normals[f] = c / len;
    }
    const double p = double(topo.adjacent_faces.size());
    std::vector<Vec3> g_n(mesh.faces.size(), Vec3::Zero());
    for (const auto& [f, g] : topo.adjacent_faces) {
      out.normal.value += (1.0 - normals[f].dot(normals[g])) / p;
      g_n[f] -= normals[g] / p;
      g_n[g] -= normals[f] / p;
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const auto& t = mesh.faces[f];
      accumulate_normal_grad(v[t[0]], v[t[1]], v[t[2]], g_n[f], out.normal.grad[t[0]], out.normal.grad[t[1]],
                             out.normal.grad[t[2]]);
    }
  }

  std::size_t counted = 0;
  for (const auto& n : topo.neighbours) counted += n.empty() ? 0 : 1;
  if (counted > 0) {
    const double nv = double(counted);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& nb = topo.neighbours[i];
      if (nb.empty()) continue;
      Vec3 mean = Vec3::Zero();
      for (int j : nb) mean += v[j];
      mean /= double(nb.size());
      const Vec3 l = mean - v[i];
      out.laplacian.value += l.squaredNorm() / nv;
      out.laplacian.grad[i] -= 2.0 * l / nv;
      for (int j : nb) out.laplacian.grad[j] += 2.0 * l / (nv * double(nb.size()));
    }
  }
  return out;
}

SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  require(!mesh.faces.empty(), "sample_surface: mesh has no faces");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    total += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
    cumulative[f] = total;
  }
  require(total > 0.0, "sample_surface: zero surface area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SurfaceSamples s;
  s.face.reserve(count);
  s.bary.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = u01(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const int f = int(std::min<std::ptrdiff_t>(it - cumulative.begin(), std::ptrdiff_t(mesh.faces.size()) - 1));
    const double r1 = std::sqrt(u01(rng));
    const double r2 = u01(rng);
    s.face.push_back(f);
    s.bary.emplace_back(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
  }
  return s;
}

std::vector<Vec3> evaluate_samples(const SurfaceSamples& s, const TriangleMesh& mesh, const std::vector<Vec3>& vertices) {
  std::vector<Vec3> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& t = mesh.faces[s.face[i]];
    out[i] = s.bary[i].x() * vertices[t[0]] + s.bary[i].y() * vertices[t[1]] + s.bary[i].z() * vertices[t[2]];
  }
  return out;
}

LossEvaluation total_loss(const SimilarityTransform& init, const RefineParams& params, const TriangleMesh& mesh,
                          const MeshTopology& topo, const RefineScene& scene, const LossWeights& w,
                          double length_unit_m) {
  require(length_unit_m > 0.0, "total_loss: length unit must be positive");
  const double unit = length_unit_m;
  const RealizedPose rp = realized_pose(init, params, mesh);
  const std::size_t nv = mesh.vertices.size();

  // Posed vertices / samples in working units.
  std::vector<Vec3> x(nv), x0(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    x[i] = rp.apply(rp.vertices[i]) / unit;
    x0[i] = init.apply(mesh.vertices[i]) / unit;
  }
  const std::vector<Vec3> y = evaluate_samples(scene.samples, mesh, rp.vertices);
  std::vector<Vec3> s(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s[i] = rp.apply(y[i]) / unit;
  std::vector<Vec3> tgt(scene.target_points.size());
  for (std::size_t j = 0; j < tgt.size(); ++j) tgt[j] = scene.target_points[j] / unit;

  LossEvaluation ev;
  LossBreakdown& b = ev.terms;
  std::vector<Vec3> g_x = zeros3(nv), g_s = zeros3(s.size()), g_vbar = zeros3(nv), g_dv = zeros3(nv);

  if (w.a_m > 0.0 && !s.empty()) {
    const LossGrad l = mask_loss(s, scene.mask);
    b.mask = l.value;
    for (std::size_t i = 0; i < s.size(); ++i) g_s[i] += w.a_m * l.grad[i];
  }
  if (w.a_c > 0.0 && !s.empty() && !tgt.empty()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (scene.visible.empty() || scene.visible[i]) idx.push_back(i);
    if (!idx.empty()) {
      std::vector<Vec3> vis(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) vis[k] = s[idx[k]];
      const LossGrad l = chamfer_loss(vis, tgt);
      b.chamfer = l.value;
      for (std::size_t k = 0; k < idx.size(); ++k) g_s[idx[k]] += w.a_c * l.grad[k];
    }
  }
  if (w.a_g > 0.0 && !scene.pairs.empty()) {
    const LossGrad l = alignment_loss(s, tgt, scene.pairs);
    b.align = l.value;
    for (std::size_t i = 0; i < s.size(); ++i) g_s[i] += w.a_g * l.grad[i];
  }
  if (w.a_p > 0.0) {
    const LossGrad l = pose_reg_loss(x, x0);
    b.pose_reg = l.value;
    for (std::size_t i = 0; i < nv; ++i) g_x[i] += w.a_p * l.grad[i];
  }
  if (w.a_ce > 0.0) {
    const LossGrad l = center_reg_loss(x, x0);
    b.center_reg = l.value;
    for (std::size_t i = 0; i < nv; ++i) g_x[i] += w.a_ce * l.grad[i];
  }
  if (w.a_d > 0.0) {
    const LossGrad l = deform_reg_loss(params.delta_v);
    b.deform = l.value;
    for (std::size_t i = 0; i < nv; ++i) g_dv[i] += w.a_d * l.grad[i];
  }
  if (w.edge > 0.0 || w.normal > 0.0 || w.laplacian > 0.0) {
    const MeshRegLosses l = mesh_reg_losses(rp.vertices, mesh, topo);
    b.edge = l.edge.value;
    b.normal = l.normal.value;
    b.laplacian = l.laplacian.value;
    for (std::size_t i = 0; i < nv; ++i)
      g_vbar[i] += w.edge * l.edge.grad[i] + w.normal * l.normal.grad[i] + w.laplacian * l.laplacian.grad[i];
  }
  b.total = w.a_m * b.mask + w.a_c * b.chamfer + w.a_g * b.align + w.a_p * b.pose_reg + w.a_ce * b.center_reg +
            w.a_d * b.deform + w.edge * b.edge + w.normal * b.normal + w.laplacian * b.laplacian;

  // Chain rule through X = R A Vbar + T. Gradients above are per working
  // unit; divide by the unit to get per metre.
  RefineParams& g = ev.grad;
  g = RefineParams::zeros(nv);
  Vec3 g_rot_raw = Vec3::Zero();
  const Mat3 rt = rp.rotation.transpose();
  auto chain_point = [&](const Vec3& model_point, const Vec3& grad_working) -> Vec3 {
    const Vec3 gm = grad_working / unit;
    g.delta_t += gm;
    g_rot_raw += (rp.rotation * model_point).cross(gm);
    return rt * gm;  // gradient w.r.t. the model-frame point
  };
  for (std::size_t i = 0; i < nv; ++i) g_vbar[i] += chain_point(rp.vertices[i], g_x[i]);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Vec3 gy = chain_point(y[k], g_s[k]);
    const auto& t = mesh.faces[scene.samples.face[k]];
    for (int c = 0; c < 3; ++c) g_vbar[t[c]] += scene.samples.bary[k][c] * gy;
  }
  g.delta_rot = left_jacobian(params.delta_rot).transpose() * g_rot_raw;
  const Vec3 scale = params.delta_log_s.array().exp();
  for (std::size_t i = 0; i < nv; ++i) {
    g.delta_v[i] = scale.cwiseProduct(g_vbar[i]) + g_dv[i];
    g.delta_log_s += g_vbar[i].cwiseProduct(rp.vertices[i]);
  }
  return ev;
}

namespace {

SimilarityTransform to_similarity(const RealizedPose& rp, double global_scale) {
  SimilarityTransform x;
  x.s = global_scale;
  x.r = orthonormalize(rp.rotation / global_scale);
  x.t = rp.translation;
  return x;
}

TriangleMesh with_vertices(const TriangleMesh& mesh, const std::vector<Vec3>& v) {
  TriangleMesh out = mesh;
  out.vertices = v;
  return out;
}

std::vector<Vec3> visible_points(const std::vector<Vec3>& pts, const std::vector<bool>& visible) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (visible.empty() || visible[i]) out.push_back(pts[i]);
  return out;
}

std::vector<Vec3> posed_samples(const RefineScene& scene, const TriangleMesh& mesh, const RealizedPose& rp) {
  std::vector<Vec3> y = evaluate_samples(scene.samples, mesh, rp.vertices);
  for (auto& p : y) p = rp.apply(p);
  return y;
}

}  // namespace

void update_visibility(RefineScene& scene, const TriangleMesh& mesh, const RealizedPose& rp, const CameraIntrinsics& k) {
  const double s = rp.rotation.col(0).norm();
  const RenderOutput r = render(with_vertices(mesh, rp.vertices), to_similarity(rp, s), k, Shading::kNone);
  const std::vector<Vec3> pts = posed_samples(scene, mesh, rp);
  const double tol = 0.02 * s;  // the canonical diagonal is 1, so s is the object's size
  scene.visible.assign(pts.size(), false);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(pts[i].z() > 0.0)) continue;
    const Eigen::Vector2d uv = k.project(pts[i]);
    const int px = int(std::floor(uv.x())), py = int(std::floor(uv.y()));
    if (px < 0 || py < 0 || px >= k.width || py >= k.height) continue;
    const float z = r.depth.at(px, py);
    scene.visible[i] = z > 0.0f && pts[i].z() <= double(z) + tol;
  }
}

RefineScene prepare_refine_scene(const Observation& obs, const TriangleMesh& mesh, const SimilarityTransform& coarse,
                                 FeatureProvider* provider, const RefineConfig& cfg) {
  validate(cfg);
  validate(mesh);
  validate(coarse);
  const CameraIntrinsics& k = obs.intrinsics;
  RefineScene scene;
  const std::size_t area = obs.mask.count();
  require(area > 0, "refine: empty target mask");
  const int stride = std::max(1, int(std::ceil(std::sqrt(double(area) / double(cfg.max_target_points)))));
  scene.target_points = mask_to_cloud(obs.depth, obs.mask, k, stride).points;
  if (scene.target_points.empty()) fail(ErrorKind::kValidation, "refine: no masked pixel has valid depth");
  scene.samples = sample_surface(mesh, cfg.num_samples, mix_seed(cfg.seed, 0x73616d70));
  scene.mask = make_mask_target(obs.mask, k, cfg.num_samples);

  if (provider != nullptr && cfg.weights.a_g > 0.0) {
    const SimilarityTransform to_object = invert(coarse);
    PointCloud target_obj;
    target_obj.points.reserve(scene.target_points.size());
    for (const auto& p : scene.target_points) target_obj.points.push_back(to_object.apply(p));
    PointCloud reference;
    reference.points = evaluate_samples(scene.samples, mesh, mesh.vertices);

    CloudFeatureRequest req;
    req.object_to_camera = coarse;
    req.role = FeatureRole::kTarget;
    req.cloud = &target_obj;
    Tensor ft = provider->features3d(req);
    req.role = FeatureRole::kReference;
    req.cloud = &reference;
    Tensor fr = provider->features3d(req);
    require(ft.ndims() == 2 && ft.dim(0) == target_obj.size(), "provider returned wrong target 3D feature rows");
    require(fr.ndims() == 2 && fr.dim(0) == reference.size(), "provider returned wrong reference 3D feature rows");
    require(ft.dim(1) == fr.dim(1), "provider returned 3D features of different widths");
    constexpr std::size_t kCloudPcaDims = 64;
    if (fr.dim(1) > kCloudPcaDims) std::tie(fr, ft) = pca_reduce_rows(fr, ft, kCloudPcaDims);
    scene.pairs = mutual_feature_pairs(fr, ft, cfg.weights.beta_g);
  }
  update_visibility(scene, mesh, realized_pose(coarse, RefineParams::zeros(mesh.vertices.size()), mesh), k);
  return scene;
}

RefineResult adam_optimize(const SimilarityTransform& init, const TriangleMesh& mesh, RefineScene& scene,
                           const RefineConfig& cfg) {
  validate(cfg);
  validate(init);
  const CameraIntrinsics& k = scene.mask.k;
  const MeshTopology topo = build_topology(mesh);
  const std::size_t nv = mesh.vertices.size();

  RefineResult res;
  RefineParams params = RefineParams::zeros(nv);
  const Eigen::Index dim = Eigen::Index(params.dimension());
  Eigen::VectorXd lr(dim);
  lr.segment<3>(0).setConstant(cfg.lr_rot);
  lr.segment<3>(3).setConstant(cfg.lr_t);
  lr.segment<3>(6).setConstant(cfg.lr_log_s);
  lr.tail(dim - 9).setConstant(cfg.lr_v);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(dim), m2 = Eigen::VectorXd::Zero(dim);

  auto render_loss = [&](const RealizedPose& rp) {
    const double s = rp.rotation.col(0).norm();
    const RenderOutput r = render(with_vertices(mesh, rp.vertices), to_similarity(rp, s), k, Shading::kNone);
    return hard_mask_loss(r.mask, scene.mask.mask);
  };
  auto chamfer_m = [&](const RealizedPose& rp) {
    const auto vis = visible_points(posed_samples(scene, mesh, rp), scene.visible);
    return vis.empty() ? 0.0 : chamfer_loss(vis, scene.target_points).value;
  };

  {
    const RealizedPose rp0 = realized_pose(init, params, mesh);
    update_visibility(scene, mesh, rp0, k);
    res.hard_mask_loss_init = render_loss(rp0);
    res.chamfer_init = chamfer_m(rp0);
  }
  const int half = cfg.steps / 2;
  for (int step = 0; step <= cfg.steps; ++step) {
    const RealizedPose rp = realized_pose(init, params, mesh);
    update_visibility(scene, mesh, rp, k);
    const LossEvaluation ev = total_loss(init, params, mesh, topo, scene, cfg.weights, cfg.length_unit_m);
    double scale = 1.0;
    if (step >= half && cfg.steps > half)
      scale = cfg.decay_floor + (1.0 - cfg.decay_floor) * 0.5 * (1.0 + std::cos(M_PI * double(step - half) / double(cfg.steps - half)));
    res.trace.push_back({step, ev.terms, scale});
    const Eigen::VectorXd g = ev.grad.flatten();
    if (!std::isfinite(ev.terms.total) || !g.allFinite()) {
      std::ostringstream msg;
      msg << "refinement diverged at step " << step << ": mask=" << ev.terms.mask << " chamfer=" << ev.terms.chamfer
          << " align=" << ev.terms.align << " pose_reg=" << ev.terms.pose_reg << " center_reg=" << ev.terms.center_reg
          << " deform=" << ev.terms.deform << " total=" << ev.terms.total << " delta_rot=" << params.delta_rot.transpose()
          << " delta_t=" << params.delta_t.transpose() << " delta_log_s=" << params.delta_log_s.transpose();
      fail(ErrorKind::kNumerical, msg.str());
    }
    if (step == cfg.steps) break;  // final row records the loss after the last update

    const double t = double(step + 1);
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Eigen::VectorXd mhat = m1 / (1.0 - std::pow(cfg.beta1, t));
    const Eigen::VectorXd vhat = m2 / (1.0 - std::pow(cfg.beta2, t));
    Eigen::VectorXd x = params.flatten();
    x.array() -= scale * lr.array() * mhat.array() / (vhat.array().sqrt() + cfg.eps);
    params = RefineParams::unflatten(x, nv);
    const double th = params.delta_rot.norm();
    if (th > M_PI) params.delta_rot *= (th - 2.0 * M_PI) / th;
  }

  const RealizedPose rp = realized_pose(init, params, mesh);
  res.params = params;
  res.pose.transform = to_similarity(rp, init.s);
  res.deformed = with_vertices(mesh, rp.vertices);
  res.hard_mask_loss_final = render_loss(rp);
  res.chamfer_final = chamfer_m(rp);
  res.pairs = scene.pairs.pairs.size();
  return res;
}

RefineResult refine_pose(const Observation& obs, const TriangleMesh& mesh, const PoseEstimate& coarse,
                         FeatureProvider* provider, const RefineConfig& cfg) {
  RefineScene scene = prepare_refine_scene(obs, mesh, coarse.transform, provider, cfg);
  RefineResult res = adam_optimize(coarse.transform, mesh, scene, cfg);
  res.pose.confidence = coarse.confidence;
  res.pose.view_index = coarse.view_index;
  res.pose.iterations_run = coarse.iterations_run;
  res.pose.inlier_count = coarse.inlier_count;
  return res;
}

}  // namespace unipose
