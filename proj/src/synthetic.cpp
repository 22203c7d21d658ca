#include "unipose/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "unipose/error.hpp"
#include "unipose/renderer.hpp"
#include "unipose/serialize.hpp"

namespace unipose {

void FourierEmbedding::encode(const Vec3& c, std::span<float> out) const {
  std::size_t k = 0;
  for (double w : frequencies) {
    for (int a = 0; a < 3; ++a) {
      out[k++] = static_cast<float>(std::cos(w * c[a]));
      out[k++] = static_cast<float>(std::sin(w * c[a]));
    }
  }
}

void to_json(nlohmann::json& j, const SyntheticFeatureConfig& c) {
  j = {{"local_frequencies", c.local.frequencies},
       {"global_frequencies", c.global.frequencies},
       {"cloud_frequencies", c.cloud.frequencies},
       {"patch_size_px", c.patch_size_px},
       {"target_noise", c.target_noise},
       {"gap_slope", c.gap_slope},
       {"outlier_rate", c.outlier_rate},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticFeatureConfig& c) {
  c = SyntheticFeatureConfig{};
  if (j.contains("local_frequencies")) c.local.frequencies = j.at("local_frequencies").get<std::vector<double>>();
  if (j.contains("global_frequencies")) c.global.frequencies = j.at("global_frequencies").get<std::vector<double>>();
  if (j.contains("cloud_frequencies")) c.cloud.frequencies = j.at("cloud_frequencies").get<std::vector<double>>();
  c.patch_size_px = j.value("patch_size_px", c.patch_size_px);
  c.target_noise = j.value("target_noise", c.target_noise);
  c.gap_slope = j.value("gap_slope", c.gap_slope);
  c.outlier_rate = j.value("outlier_rate", c.outlier_rate);
  c.seed = j.value("seed", c.seed);
  require(c.patch_size_px >= 1, "synthetic features: patch_size_px must be >= 1");
  require(c.target_noise >= 0.0 && c.gap_slope >= 0.0, "synthetic features: noise levels must be non-negative");
  require(c.outlier_rate >= 0.0 && c.outlier_rate <= 1.0, "synthetic features: outlier_rate must lie in [0, 1]");
  require(!c.local.frequencies.empty() || !c.global.frequencies.empty(), "synthetic features: no 2D frequencies");
  require(!c.cloud.frequencies.empty(), "synthetic features: no cloud frequencies");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

// Flips faces whose normal points towards the centroid. Valid for convex
// shapes containing the origin, which is all the primitives are.
void orient_outward_convex(TriangleMesh& mesh) {
  for (auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    if ((b - a).cross(c - a).dot(a + b + c) < 0.0) std::swap(f[1], f[2]);
  }
}

TriangleMesh cube_lattice(int n, const Vec3& extents, bool spherize) {
  TriangleMesh mesh;
  std::map<std::array<int, 3>, int> index;
  auto vertex = [&](std::array<int, 3> l) {
    auto [it, inserted] = index.try_emplace(l, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      Vec3 p(double(l[0]) / n - 0.5, double(l[1]) / n - 0.5, double(l[2]) / n - 0.5);
      mesh.vertices.push_back(spherize ? Vec3(0.5 * p.normalized()) : Vec3(p.cwiseProduct(extents)));
    }
    return it->second;
  };
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3;
    const int c = (a + 2) % 3;
    for (int side : {0, n}) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          auto corner = [&](int di, int dj) {
            std::array<int, 3> l{};
            l[a] = side;
            l[b] = i + di;
            l[c] = j + dj;
            return vertex(l);
          };
          const int v00 = corner(0, 0), v10 = corner(1, 0), v11 = corner(1, 1), v01 = corner(0, 1);
          mesh.faces.push_back({v00, v10, v11});
          mesh.faces.push_back({v00, v11, v01});
        }
      }
    }
  }
  return mesh;
}

TriangleMesh cylinder_mesh(int n) {
  const int segments = 4 * n;
  const int rings = n;
  const int cap_rings = std::max(1, n / 2);
  TriangleMesh mesh;
  auto ring_vertex = [&](double radius, double y, int s) {
    const double th = 2.0 * M_PI * s / segments;
    return Vec3(radius * std::cos(th), y, radius * std::sin(th));
  };
  // Side rings k = 0..rings, bottom to top.
  for (int k = 0; k <= rings; ++k)
    for (int s = 0; s < segments; ++s) mesh.vertices.push_back(ring_vertex(0.5, -0.5 + double(k) / rings, s));
  auto side = [&](int k, int s) { return k * segments + (s % segments); };
  for (int k = 0; k < rings; ++k) {
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({side(k, s), side(k + 1, s), side(k + 1, s + 1)});
      mesh.faces.push_back({side(k, s), side(k + 1, s + 1), side(k, s + 1)});
    }
  }
  for (double y : {-0.5, 0.5}) {
    const int outer_ring = y < 0 ? 0 : rings;
    std::vector<int> prev(segments);
    for (int s = 0; s < segments; ++s) prev[s] = side(outer_ring, s);
    for (int m = cap_rings - 1; m >= 1; --m) {
      std::vector<int> cur(segments);
      for (int s = 0; s < segments; ++s) {
        cur[s] = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(ring_vertex(0.5 * m / cap_rings, y, s));
      }
      for (int s = 0; s < segments; ++s) {
        const int t = (s + 1) % segments;
        mesh.faces.push_back({cur[s], prev[s], prev[t]});
        mesh.faces.push_back({cur[s], prev[t], cur[t]});
      }
      prev = cur;
    }
    const int centre = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(Vec3(0.0, y, 0.0));
    for (int s = 0; s < segments; ++s) mesh.faces.push_back({centre, prev[s], prev[(s + 1) % segments]});
  }
  return mesh;
}

TriangleMesh finish_primitive(TriangleMesh mesh) {
  orient_outward_convex(mesh);
  normalize_to_canonical(mesh);
  assign_nocs_colors(mesh);
  clean_mesh(mesh);
  validate(mesh);
  return mesh;
}

}  // namespace

TriangleMesh make_box_mesh(const Vec3& extents, int resolution) {
  require(resolution >= 1, "primitive resolution must be >= 1");
  require((extents.array() > 0.0).all(), "box extents must be positive");
  return finish_primitive(cube_lattice(resolution, extents, false));
}

bool is_primitive_name(const std::string& name) {
  return name == "cube" || name == "box" || name == "cylinder" || name == "sphere";
}

TriangleMesh make_primitive(const std::string& name, int resolution) {
  require(resolution >= 1, "primitive resolution must be >= 1");
  if (name == "cube") return make_box_mesh(Vec3::Ones(), resolution);
  if (name == "box") return make_box_mesh(Vec3(1.0, 0.6, 0.4), resolution);
  if (name == "sphere") return finish_primitive(cube_lattice(resolution, Vec3::Ones(), true));
  if (name == "cylinder") return finish_primitive(cylinder_mesh(resolution));
  fail(ErrorKind::kValidation, "unknown primitive '" + name + "' (expected cube, box, cylinder or sphere)");
}

void assign_nocs_colors(TriangleMesh& mesh) {
  mesh.colors.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 c = (mesh.vertices[i].array() + 0.5).min(1.0).max(0.0);
    mesh.colors[i] = c.cast<float>();
  }
}

std::vector<FeatureMap> embed_patch_coordinates(const std::vector<std::optional<Vec3>>& coords,
                                                std::uint32_t grid_h, std::uint32_t grid_w,
                                                const CameraIntrinsics& k, const SyntheticFeatureConfig& cfg,
                                                double noise_sigma, std::uint64_t noise_seed) {
  require(coords.size() == std::size_t(grid_h) * grid_w, "embed_patch_coordinates: size mismatch");
  std::vector<FeatureMap> maps;
  const std::pair<const FourierEmbedding*, const char*> embeddings[] = {{&cfg.local, "dinov2"}, {&cfg.global, "sd"}};
  std::uint64_t stream = 0;
  for (const auto& [emb, tag] : embeddings) {
    ++stream;
    if (emb->frequencies.empty()) continue;
    FeatureMap fm = FeatureMap::zeros(grid_h, grid_w, emb->channels(), cfg.patch_size_px, k.width, k.height, tag);
    std::mt19937_64 rng(mix_seed(noise_seed, stream));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t p = 0; p < coords.size(); ++p) {
      if (!coords[p]) continue;
      auto v = fm.patch(p);
      emb->encode(*coords[p], v);
      if (noise_sigma > 0.0)
        for (float& x : v) x += static_cast<float>(noise_sigma * noise(rng));
    }
    maps.push_back(std::move(fm));
  }
  return maps;
}

SyntheticProvider::SyntheticProvider(DepthMap target_depth, Mask target_mask, CameraIntrinsics k,
                                     SimilarityTransform gt, Vec3 shape_scale, SyntheticFeatureConfig cfg)
    : depth_(std::move(target_depth)),
      mask_(std::move(target_mask)),
      k_(k),
      gt_(gt),
      shape_scale_(shape_scale),
      cfg_(std::move(cfg)) {
  validate(k_);
  validate(gt_);
  require(depth_.width == k_.width && depth_.height == k_.height, "synthetic provider: depth size != intrinsics");
  require(mask_.width == k_.width && mask_.height == k_.height, "synthetic provider: mask size != intrinsics");
  require((shape_scale_.array() > 0.0).all(), "synthetic provider: shape_scale must be positive");
}

Vec3 SyntheticProvider::target_canonical(const Vec3& camera_point) const {
  return invert(gt_).apply(camera_point).cwiseQuotient(shape_scale_);
}

std::vector<FeatureMap> SyntheticProvider::features2d(const ImageFeatureRequest& req) {
  ++calls_;
  const std::uint32_t ps = cfg_.patch_size_px;
  const std::uint32_t gw = static_cast<std::uint32_t>(k_.width) / ps;
  const std::uint32_t gh = static_cast<std::uint32_t>(k_.height) / ps;
  require(gw >= 1 && gh >= 1, "synthetic provider: image smaller than one patch");
  FeatureMap geometry = FeatureMap::zeros(gh, gw, 1, ps, k_.width, k_.height, "");

  const bool target = req.role == FeatureRole::kTarget;
  const DepthMap* depth = &depth_;
  const Mask* mask = &mask_;
  if (!target) {
    require(req.render != nullptr, "synthetic provider: reference request without a render");
    depth = &req.render->depth;
    mask = &req.render->mask;
  }
  const SimilarityTransform ref_inv = target ? SimilarityTransform{} : invert(req.pose);

  std::vector<std::optional<Vec3>> coords(geometry.num_patches());
  for (std::size_t p = 0; p < coords.size(); ++p) {
    const Eigen::Vector2d uv = patch_to_pixel(p, geometry);
    const int x = std::clamp(static_cast<int>(std::floor(uv.x())), 0, k_.width - 1);
    const int y = std::clamp(static_cast<int>(std::floor(uv.y())), 0, k_.height - 1);
    const float z = depth->at(x, y);
    if (!mask->at(x, y) || !(z > 0.0f)) continue;
    const Vec3 cam = k_.unproject(uv.x(), uv.y(), z);
    coords[p] = target ? target_canonical(cam) : ref_inv.apply(cam);
  }

  double sigma = 0.0;
  std::uint64_t noise_seed = 0;
  if (target) {
    sigma = cfg_.target_noise;
    noise_seed = mix_seed(cfg_.seed, 1);
    if (cfg_.outlier_rate > 0.0) {
      std::mt19937_64 rng(mix_seed(cfg_.seed, 2));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      for (auto& c : coords) {
        if (!c) continue;
        const bool outlier = u01(rng) < cfg_.outlier_rate;
        const Vec3 random(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
        if (outlier) c = random;
      }
    }
  } else {
    sigma = cfg_.gap_slope * rotation_geodesic_deg(req.pose.r, gt_.r);
    noise_seed = mix_seed(mix_seed(cfg_.seed, 100 + std::uint64_t(req.view)), std::uint64_t(req.iteration));
  }
  return embed_patch_coordinates(coords, gh, gw, k_, cfg_, sigma, noise_seed);
}

Tensor SyntheticProvider::features3d(const CloudFeatureRequest& req) {
  ++calls_;
  require(req.cloud != nullptr, "synthetic provider: null cloud");
  const std::uint32_t n = static_cast<std::uint32_t>(req.cloud->size());
  const std::uint32_t c = cfg_.cloud.channels();
  Tensor t({n, c});
  for (std::uint32_t i = 0; i < n; ++i) {
    const Vec3& p = req.cloud->points[i];
    const Vec3 canon =
        req.role == FeatureRole::kTarget ? target_canonical(req.object_to_camera.apply(p)) : p;
    cfg_.cloud.encode(canon, t.data().subspan(std::size_t(i) * c, c));
  }
  return t;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"shape", s.shape},
       {"seed", s.seed},
       {"intrinsics", intrinsics_to_json(s.intrinsics)},
       {"depth_noise_m", s.depth_noise_m},
       {"shape_scale", vec3_to_json(s.shape_scale)},
       {"features", s.features}};
  if (s.pose) j["pose"] = transform_to_json(*s.pose);
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  s = SynthSpec{};
  s.shape = j.value("shape", s.shape);
  s.seed = j.value("seed", s.seed);
  if (j.contains("intrinsics")) s.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  s.depth_noise_m = j.value("depth_noise_m", s.depth_noise_m);
  if (j.contains("shape_scale")) s.shape_scale = vec3_from_json(j.at("shape_scale"));
  if (j.contains("pose")) s.pose = transform_from_json(j.at("pose"));
  if (j.contains("features")) s.features = j.at("features").get<SyntheticFeatureConfig>();
  require(s.depth_noise_m >= 0.0, "synth: depth_noise_m must be non-negative");
  require((s.shape_scale.array() > 0.0).all(), "synth: shape_scale must be positive");
}

SimilarityTransform sample_object_pose(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x706f7365));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double deg = M_PI / 180.0;
  const double yaw = uniform(0.0, 360.0) * deg;
  const double elevation = uniform(10.0, 50.0) * deg;
  const double roll = uniform(-5.0, 5.0) * deg;
  const double dist = uniform(0.7, 1.1);
  const double scale = uniform(0.2, 0.35);
  const double ox = uniform(-0.1, 0.1) * dist;
  const double oy = uniform(-0.1, 0.1) * dist;
  SimilarityTransform x;
  x.r = orthonormalize(rot_z(roll) * rot_x(elevation) * upright_view_rotation() * rot_y(yaw));
  x.t = Vec3(ox, oy, dist);
  x.s = scale;
  return x;
}

SynthScene make_synthetic_scene(const SynthSpec& spec) {
  validate(spec.intrinsics);
  SynthScene scene;
  scene.spec = spec;
  if (is_primitive_name(spec.shape)) {
    scene.reference = make_primitive(spec.shape);
  } else {
    TriangleMesh mesh = read_obj(spec.shape);
    normalize_to_canonical(mesh);
    assign_nocs_colors(mesh);
    scene.reference = std::move(mesh);
  }
  scene.gt = spec.pose ? *spec.pose : sample_object_pose(spec.seed);
  validate(scene.gt);

  TriangleMesh target = scene.reference;
  for (auto& v : target.vertices) v = v.cwiseProduct(spec.shape_scale);
  RenderOutput r = render(target, scene.gt, spec.intrinsics, Shading::kVertexColor);
  require(r.mask.count() > 0, "synth: object is not visible from the sampled pose");
  scene.depth = std::move(r.depth);
  scene.mask = std::move(r.mask);
  scene.rgb = std::move(*r.shaded);
  if (spec.depth_noise_m > 0.0) {
    std::mt19937_64 rng(mix_seed(spec.seed, 0x6465707468));
    std::normal_distribution<double> noise(0.0, spec.depth_noise_m);
    for (float& z : scene.depth.values)
      if (z > 0.0f) z = std::max(1e-4f, static_cast<float>(z + noise(rng)));
  }
  return scene;
}

}  // namespace unipose
