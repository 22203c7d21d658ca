#include "unipose/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "unipose/error.hpp"
#include "unipose/synthetic.hpp"

namespace unipose {

void validate(const Observation& obs) {
  validate(obs.intrinsics);
  validate(obs.depth);
  require(obs.depth.width == obs.intrinsics.width && obs.depth.height == obs.intrinsics.height,
          "observation: depth size does not match intrinsics");
  require(obs.mask.width == obs.depth.width && obs.mask.height == obs.depth.height,
          "observation: mask size does not match depth");
  require(obs.mask.count() > 0, "observation: empty object mask");
  for (const auto& fm : obs.features) {
    validate(fm);
    require(fm.grid_h == obs.features[0].grid_h && fm.grid_w == obs.features[0].grid_w,
            "observation: target feature maps disagree on grid shape");
    require(fm.image_w_px == std::uint32_t(obs.intrinsics.width) && fm.image_h_px == std::uint32_t(obs.intrinsics.height),
            "observation: feature map image size does not match intrinsics");
  }
}

void validate(const CoarseConfig& cfg) {
  validate(cfg.ransac);
  require(cfg.pca_dims >= 1, "coarse: pca_dims must be >= 1");
  require(cfg.m >= cfg.ransac.sample_size, "coarse: M must be at least the RANSAC sample size");
  require(cfg.iters >= 0, "coarse: iters must be >= 0");
  require(cfg.min_patch_coverage >= 0.0 && cfg.min_patch_coverage <= 1.0, "coarse: min_patch_coverage must lie in [0, 1]");
  require(cfg.view >= -1 && cfg.view <= 3, "coarse: view must be -1 or 0..3");
  require(cfg.weights.alpha_d1 >= 0 && cfg.weights.alpha_d2 >= 0 && cfg.weights.alpha_sd >= 0,
          "coarse: combine weights must be non-negative");
}

PatchMask patch_validity(const FeatureMap& grid, const Mask& mask, const DepthMap& depth, double min_coverage) {
  require(mask.width == int(grid.image_w_px) && mask.height == int(grid.image_h_px),
          "patch_validity: mask size does not match the feature grid's image");
  const double sx = double(grid.image_w_px) / grid.grid_w;
  const double sy = double(grid.image_h_px) / grid.grid_h;
  PatchMask valid(grid.num_patches(), false);
  for (std::uint32_t row = 0; row < grid.grid_h; ++row) {
    // Pixels whose centre falls inside the footprint.
    const int y0 = std::max(0, int(std::ceil(row * sy - 0.5)));
    const int y1 = std::min(mask.height, int(std::ceil((row + 1) * sy - 0.5)));
    for (std::uint32_t col = 0; col < grid.grid_w; ++col) {
      const int x0 = std::max(0, int(std::ceil(col * sx - 0.5)));
      const int x1 = std::min(mask.width, int(std::ceil((col + 1) * sx - 0.5)));
      const std::size_t p = std::size_t(row) * grid.grid_w + col;
      const Eigen::Vector2d c = patch_to_pixel(p, grid);
      const int cx = std::clamp(int(std::floor(c.x())), 0, mask.width - 1);
      const int cy = std::clamp(int(std::floor(c.y())), 0, mask.height - 1);
      if (!mask.at(cx, cy) || !(depth.at(cx, cy) > 0.0f)) continue;
      std::size_t inside = 0;
      std::size_t total = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          ++total;
          inside += mask.at(x, y) ? 1 : 0;
        }
      valid[p] = total > 0 && double(inside) >= min_coverage * double(total);
    }
  }
  return valid;
}

namespace {

void zero_invalid(FeatureMap& fm, const PatchMask& valid) {
  for (std::size_t p = 0; p < fm.num_patches(); ++p)
    if (!valid[p]) std::fill(fm.patch(p).begin(), fm.patch(p).end(), 0.0f);
}

std::size_t count_valid(const PatchMask& v) { return static_cast<std::size_t>(std::count(v.begin(), v.end(), true)); }

bool estimation_error(const Error& e) {
  return e.kind() == ErrorKind::kNoConsensus || e.kind() == ErrorKind::kDegenerate ||
         e.kind() == ErrorKind::kEstimationFailed;
}

}  // namespace

ViewPass run_single_view(const Observation& obs, const TriangleMesh& mesh, const SimilarityTransform& view_pose,
                         FeatureProvider& provider, const CoarseConfig& cfg, int view, int iteration) {
  require(!obs.features.empty(), "run_single_view: observation has no target features");
  const CameraIntrinsics& k = obs.intrinsics;
  ViewPass out;
  out.render = render(mesh, view_pose, k, mesh.has_colors() ? Shading::kVertexColor : Shading::kFlat);
  if (out.render.mask.count() == 0) fail(ErrorKind::kEstimationFailed, "reference render is empty");

  ImageFeatureRequest req;
  req.role = FeatureRole::kReference;
  req.view = view;
  req.iteration = iteration;
  req.render = &out.render;
  req.pose = view_pose;
  req.intrinsics = k;
  const std::vector<FeatureMap> ref_maps = provider.features2d(req);
  require(!ref_maps.empty(), "provider returned no reference feature maps");

  FeatureMap ft = combine_features(std::span<const FeatureMap>(obs.features), cfg.weights);
  FeatureMap fr = combine_features(std::span<const FeatureMap>(ref_maps), cfg.weights);
  require(ft.grid_h == fr.grid_h && ft.grid_w == fr.grid_w && ft.patch_size_px == fr.patch_size_px &&
              ft.image_w_px == fr.image_w_px && ft.image_h_px == fr.image_h_px,
          "target and reference feature grids differ");
  require(ft.channels == fr.channels, "target and reference features differ in channel count");

  const PatchMask tv = patch_validity(ft, obs.mask, obs.depth, cfg.min_patch_coverage);
  const PatchMask rv = patch_validity(fr, out.render.mask, out.render.depth, cfg.min_patch_coverage);
  if (count_valid(tv) == 0) fail(ErrorKind::kEstimationFailed, "no target patch lies inside the mask");
  if (count_valid(rv) == 0) fail(ErrorKind::kEstimationFailed, "no reference patch lies inside the render");
  zero_invalid(ft, tv);
  zero_invalid(fr, rv);
  if (ft.channels > cfg.pca_dims) std::tie(ft, fr) = pca_reduce_pair(ft, fr, cfg.pca_dims);

  const CorrespondenceSet corr = match_valid_patches(ft, fr, tv, rv, cfg.m);

  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  CorrespondenceSet kept;
  for (const auto& c : corr) {
    const Eigen::Vector2d pt = patch_to_pixel(c.p, ft);
    const Eigen::Vector2d pr = patch_to_pixel(c.q, fr);
    const float zt = obs.depth.at(int(pt.x()), int(pt.y()));
    const float zr = out.render.depth.at(int(pr.x()), int(pr.y()));
    if (!(zt > 0.0f) || !(zr > 0.0f)) continue;
    dst.push_back(k.unproject(pt.x(), pt.y(), zt));
    src.push_back(k.unproject(pr.x(), pr.y(), zr));
    out.target_px.push_back(pt);
    out.reference_px.push_back(pr);
    kept.push_back(c);
  }
  out.correspondences = std::move(kept);
  if (int(src.size()) < cfg.ransac.sample_size)
    fail(ErrorKind::kNoConsensus, "only " + std::to_string(src.size()) + " liftable correspondences");

  RansacConfig rc = cfg.ransac;
  rc.seed = mix_seed(mix_seed(cfg.seed, std::uint64_t(view)), std::uint64_t(iteration));
  out.fit = ransac_umeyama(src, dst, rc);

  out.estimate.transform = compose(out.fit.transform, view_pose);
  out.estimate.confidence = view_confidence(out.correspondences);
  out.estimate.view_index = view;
  out.estimate.iterations_run = iteration + 1;
  out.estimate.inlier_count = out.fit.inlier_count;
  return out;
}

CoarseResult coarse_estimate(const Observation& obs_in, const TriangleMesh& mesh, FeatureProvider& provider,
                             const CoarseConfig& cfg) {
  validate(cfg);
  validate(mesh);
  Observation obs = obs_in;
  if (obs.features.empty()) {
    ImageFeatureRequest req;
    req.role = FeatureRole::kTarget;
    req.intrinsics = obs.intrinsics;
    obs.features = provider.features2d(req);
    require(!obs.features.empty(), "provider returned no target feature maps");
  }
  validate(obs);

  const double diameter = bounding_box(mesh.vertices).diagonal();
  const auto views = canonical_view_poses(diameter, obs.intrinsics);

  CoarseResult result;
  std::ostringstream failures;
  for (int v = 0; v < 4; ++v) {
    if (cfg.view >= 0 && v != cfg.view) continue;
    PoseEstimate current;
    current.view_index = v;
    bool have = false;
    for (int it = 0; it <= cfg.iters; ++it) {
      if (it > 0 && !have) break;
      PassRecord rec;
      rec.view = v;
      rec.iteration = it;
      try {
        const SimilarityTransform& at = it == 0 ? views[v] : current.transform;
        ViewPass pass = run_single_view(obs, mesh, at, provider, cfg, v, it);
        rec.ok = true;
        rec.confidence = pass.estimate.confidence;
        rec.correspondences = pass.correspondences.size();
        rec.inliers = pass.fit.inlier_count;
        rec.rms_inlier_error = pass.fit.rms_inlier_error;
        rec.accepted = !have || !cfg.monotone || pass.estimate.confidence >= current.confidence;
        if (rec.accepted) {
          current = pass.estimate;
          have = true;
        }
        current.iterations_run = it + 1;
      } catch (const Error& e) {
        if (!estimation_error(e)) throw;
        rec.error = e.what();
        failures << " view " << v << " iteration " << it << ": " << e.what() << ";";
      }
      result.passes.push_back(rec);
    }
    if (!have) current.confidence = -1.0;
    result.per_view.push_back(current);
    if (have && (result.best.view_index < 0 || current.confidence > result.best.confidence)) result.best = current;
  }
  if (result.best.view_index < 0) fail(ErrorKind::kEstimationFailed, "coarse estimation failed:" + failures.str());
  return result;
}

}  // namespace unipose
