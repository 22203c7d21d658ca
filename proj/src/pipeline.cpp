#include "unipose/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "unipose/error.hpp"
#include "unipose/io.hpp"
#include "unipose/renderer.hpp"
#include "unipose/serialize.hpp"

namespace unipose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads keys of one JSON object into existing defaults and rejects keys it was
// never asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorKind::kValidation, "config: " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::kValidation, "config: " + path(key) + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(ErrorKind::kValidation, "config: unknown key " + path(key.c_str()));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void write_json(const json& j, const fs::path& path) { write_text(j.dump(2) + "\n", path); }

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

fs::path need(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorKind::kValidation, "missing required file: " + p.string());
  return p;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::kIo, "cannot create output directory " + dir.string());
}

Vec3 mesh_extents(const TriangleMesh& mesh) { return bounding_box(mesh.vertices).extent(); }

std::string category_of(const Scene& scene) {
  return scene.synth ? scene.synth->shape : std::string();
}

json pass_json(const PassRecord& p) {
  json j = {{"view", p.view},         {"iteration", p.iteration}, {"ok", p.ok},
            {"accepted", p.accepted}, {"confidence", p.confidence}, {"correspondences", p.correspondences},
            {"inliers", p.inliers},   {"rms_inlier_error_m", p.rms_inlier_error}};
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

json coarse_json(const CoarseResult& c) {
  json passes = json::array();
  for (const auto& p : c.passes) passes.push_back(pass_json(p));
  json views = json::array();
  for (const auto& v : c.per_view)
    views.push_back({{"view", v.view_index},
                     {"confidence", v.confidence},
                     {"iterations_run", v.iterations_run},
                     {"inliers", v.inlier_count},
                     {"pose", transform_to_json(v.transform)}});
  return {{"best_view", c.best.view_index}, {"confidence", c.best.confidence}, {"per_view", views}, {"passes", passes}};
}

json terms_json(const LossBreakdown& t) {
  return {{"mask", t.mask},         {"chamfer", t.chamfer},   {"align", t.align},
          {"pose_reg", t.pose_reg}, {"center_reg", t.center_reg}, {"deform", t.deform},
          {"edge", t.edge},         {"normal", t.normal},     {"laplacian", t.laplacian},
          {"total", t.total}};
}

json refine_json(const RefineResult& r) {
  json j = {{"hard_mask_loss_init", r.hard_mask_loss_init},
            {"hard_mask_loss_final", r.hard_mask_loss_final},
            {"chamfer_init_m2", r.chamfer_init},
            {"chamfer_final_m2", r.chamfer_final},
            {"alignment_pairs", r.pairs},
            {"delta_rot", vec3_to_json(r.params.delta_rot)},
            {"delta_t", vec3_to_json(r.params.delta_t)},
            {"delta_log_s", vec3_to_json(r.params.delta_log_s)}};
  if (!r.trace.empty()) {
    j["loss_initial"] = terms_json(r.trace.front().terms);
    j["loss_final"] = terms_json(r.trace.back().terms);
  }
  return j;
}

json ground_truth_metrics(const Scene& scene, const PoseEstimate& pose, const Vec3& extents) {
  if (!scene.gt) return nullptr;
  const std::string category = category_of(scene);
  const PoseError e = pose_error(pose.transform, *scene.gt, symmetry_for_category(category));
  Vec3 gt_extents = mesh_extents(scene.mesh);
  if (scene.synth) gt_extents = gt_extents.cwiseProduct(scene.synth->shape_scale);
  const double iou = iou3d({pose.transform, extents}, {*scene.gt, gt_extents});
  return {{"rot_deg", e.rot_deg},
          {"trans_cm", e.trans_cm},
          {"scale_rel_err", std::abs(pose.transform.s / scene.gt->s - 1.0)},
          {"iou3d", iou}};
}

void draw_line(Image8& img, Eigen::Vector2d a, Eigen::Vector2d b, const std::uint8_t rgb[3]) {
  const double len = (b - a).norm();
  const int steps = std::max(1, int(std::ceil(len)));
  for (int i = 0; i <= steps; ++i) {
    const Eigen::Vector2d p = a + (b - a) * (double(i) / steps);
    const int x = int(std::floor(p.x())), y = int(std::floor(p.y()));
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
    std::copy(rgb, rgb + 3, img.at(x, y));
  }
}

Image8 to_rgb(const Image8& src) {
  if (src.channels == 3) return src;
  Image8 out(src.width, src.height, 3);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) std::fill(out.at(x, y), out.at(x, y) + 3, src.at(x, y)[0]);
  return out;
}

Image8 mask_image(const Mask& m) {
  Image8 img(m.width, m.height, 3);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) std::fill(img.at(x, y), img.at(x, y) + 3, m.at(x, y) ? 160 : 0);
  return img;
}

}  // namespace

void validate(const PipelineConfig& cfg) {
  const auto& m = cfg.provider.mode;
  require(m == "auto" || m == "files" || m == "subprocess" || m == "synthetic",
          "config: provider.mode must be auto, files, subprocess or synthetic");
  require(!cfg.provider.tags.empty(), "config: provider.tags must not be empty");
  validate(cfg.coarse);
  validate(cfg.refine);
}

PipelineConfig with_derived_seeds(PipelineConfig cfg) {
  cfg.coarse.seed = cfg.seed;
  cfg.coarse.ransac.seed = cfg.seed;
  cfg.refine.seed = cfg.seed;
  return cfg;
}

json config_to_json(const PipelineConfig& cfg) {
  const auto& c = cfg.coarse;
  const auto& r = cfg.refine;
  const auto& w = r.weights;
  return {
      {"seed", cfg.seed},
      {"provider", {{"mode", cfg.provider.mode}, {"command", cfg.provider.command}, {"tags", cfg.provider.tags}}},
      {"coarse",
       {{"weights", {{"dinov1", c.weights.alpha_d1}, {"dinov2", c.weights.alpha_d2}, {"sd", c.weights.alpha_sd}}},
        {"pca_dims", c.pca_dims},
        {"m", c.m},
        {"iters", c.iters},
        {"monotone", c.monotone},
        {"min_patch_coverage", c.min_patch_coverage},
        {"view", c.view},
        {"ransac",
         {{"max_iters", c.ransac.max_iters},
          {"sample_size", c.ransac.sample_size},
          {"inlier_threshold_rel", c.ransac.inlier_threshold_rel},
          {"confidence_stop", c.ransac.confidence_stop}}}}},
      {"refine",
       {{"enabled", cfg.refine_enabled},
        {"steps", r.steps},
        {"lr_rot", r.lr_rot},
        {"lr_t", r.lr_t},
        {"lr_log_s", r.lr_log_s},
        {"lr_v", r.lr_v},
        {"beta1", r.beta1},
        {"beta2", r.beta2},
        {"eps", r.eps},
        {"decay_floor", r.decay_floor},
        {"num_samples", r.num_samples},
        {"max_target_points", r.max_target_points},
        {"length_unit_m", r.length_unit_m},
        {"weights",
         {{"a_m", w.a_m},
          {"a_c", w.a_c},
          {"a_g", w.a_g},
          {"a_p", w.a_p},
          {"a_ce", w.a_ce},
          {"a_d", w.a_d},
          {"edge", w.edge},
          {"normal", w.normal},
          {"laplacian", w.laplacian},
          {"beta_g", w.beta_g}}}}}};
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig cfg;
  ObjectReader top(j, "");
  top.get("seed", cfg.seed);
  if (const json* p = top.sub("provider")) {
    ObjectReader rd(*p, "provider");
    rd.get("mode", cfg.provider.mode);
    rd.get("command", cfg.provider.command);
    rd.get("tags", cfg.provider.tags);
    rd.finish();
  }
  if (const json* c = top.sub("coarse")) {
    ObjectReader rd(*c, "coarse");
    auto& cc = cfg.coarse;
    if (const json* w = rd.sub("weights")) {
      ObjectReader wr(*w, "coarse.weights");
      wr.get("dinov1", cc.weights.alpha_d1);
      wr.get("dinov2", cc.weights.alpha_d2);
      wr.get("sd", cc.weights.alpha_sd);
      wr.finish();
    }
    rd.get("pca_dims", cc.pca_dims);
    rd.get("m", cc.m);
    rd.get("iters", cc.iters);
    rd.get("monotone", cc.monotone);
    rd.get("min_patch_coverage", cc.min_patch_coverage);
    rd.get("view", cc.view);
    if (const json* r = rd.sub("ransac")) {
      ObjectReader rr(*r, "coarse.ransac");
      rr.get("max_iters", cc.ransac.max_iters);
      rr.get("sample_size", cc.ransac.sample_size);
      rr.get("inlier_threshold_rel", cc.ransac.inlier_threshold_rel);
      rr.get("confidence_stop", cc.ransac.confidence_stop);
      rr.finish();
    }
    rd.finish();
  }
  if (const json* r = top.sub("refine")) {
    ObjectReader rd(*r, "refine");
    auto& rc = cfg.refine;
    rd.get("enabled", cfg.refine_enabled);
    rd.get("steps", rc.steps);
    rd.get("lr_rot", rc.lr_rot);
    rd.get("lr_t", rc.lr_t);
    rd.get("lr_log_s", rc.lr_log_s);
    rd.get("lr_v", rc.lr_v);
    rd.get("beta1", rc.beta1);
    rd.get("beta2", rc.beta2);
    rd.get("eps", rc.eps);
    rd.get("decay_floor", rc.decay_floor);
    rd.get("num_samples", rc.num_samples);
    rd.get("max_target_points", rc.max_target_points);
    rd.get("length_unit_m", rc.length_unit_m);
    if (const json* w = rd.sub("weights")) {
      ObjectReader wr(*w, "refine.weights");
      wr.get("a_m", rc.weights.a_m);
      wr.get("a_c", rc.weights.a_c);
      wr.get("a_g", rc.weights.a_g);
      wr.get("a_p", rc.weights.a_p);
      wr.get("a_ce", rc.weights.a_ce);
      wr.get("a_d", rc.weights.a_d);
      wr.get("edge", rc.weights.edge);
      wr.get("normal", rc.weights.normal);
      wr.get("laplacian", rc.weights.laplacian);
      wr.get("beta_g", rc.weights.beta_g);
      wr.finish();
    }
    rd.finish();
  }
  top.finish();
  cfg = with_derived_seeds(cfg);
  validate(cfg);
  return cfg;
}

Scene load_scene(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kValidation, "scene directory not found: " + dir.string());
  Scene s;
  s.dir = dir;
  s.intrinsics = read_intrinsics(need(dir / "intrinsics.json"));
  if (fs::exists(dir / "depth.uftn")) {
    s.depth = read_depth(dir / "depth.uftn");
  } else if (fs::exists(dir / "depth.png")) {
    s.depth = read_depth(dir / "depth.png");
  } else {
    fail(ErrorKind::kValidation, "missing required file: " + (dir / "depth.uftn").string() + " (or depth.png)");
  }
  s.mask = read_mask(need(dir / "mask.png"));
  s.mesh = read_obj(need(dir / "mesh.obj"));
  validate(s.mesh);
  const int w = s.intrinsics.width, h = s.intrinsics.height;
  require(s.depth.width == w && s.depth.height == h,
          (dir / "depth").string() + ": size " + std::to_string(s.depth.width) + "x" + std::to_string(s.depth.height) +
              " does not match intrinsics " + std::to_string(w) + "x" + std::to_string(h));
  require(s.mask.width == w && s.mask.height == h, (dir / "mask.png").string() + ": size does not match intrinsics");
  require(s.mask.count() > 0, (dir / "mask.png").string() + ": mask is empty");
  if (fs::exists(dir / "gt_pose.json")) s.gt = transform_from_json(read_json(dir / "gt_pose.json"));
  if (fs::exists(dir / "synth.json")) {
    try {
      s.synth = read_json(dir / "synth.json").get<SynthSpec>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kValidation, (dir / "synth.json").string() + ": " + e.what());
    }
  }
  return s;
}

Observation make_observation(const Scene& scene) {
  Observation obs;
  obs.depth = scene.depth;
  obs.mask = scene.mask;
  obs.intrinsics = scene.intrinsics;
  obs.frame_id = scene.dir.filename().string();
  return obs;
}

std::unique_ptr<FeatureProvider> make_provider(const Scene& scene, const ProviderSettings& settings,
                                               const fs::path& work_dir) {
  std::string mode = settings.mode;
  if (mode == "auto") mode = (scene.synth && scene.gt) ? "synthetic" : "files";
  if (mode == "synthetic") {
    if (!scene.synth || !scene.gt)
      fail(ErrorKind::kValidation, "synthetic provider needs synth.json and gt_pose.json in " + scene.dir.string());
    return std::make_unique<SyntheticProvider>(scene.depth, scene.mask, scene.intrinsics, *scene.gt,
                                               scene.synth->shape_scale, scene.synth->features);
  }
  if (mode == "files") return std::make_unique<FilesProvider>(scene.dir, settings.tags);
  if (mode == "subprocess") {
    require(!settings.command.empty(), "config: provider.command is required in subprocess mode");
    prepare_out_dir(work_dir);
    return std::make_unique<SubprocessProvider>(settings.command, work_dir, settings.tags,
                                                need(scene.dir / "rgb.png"));
  }
  fail(ErrorKind::kValidation, "unknown provider mode " + settings.mode);
}

json pose_json(const PoseEstimate& pose, const Vec3& extents, const PipelineConfig& cfg) {
  json j = transform_to_json(pose.transform);
  j["confidence"] = pose.confidence;
  j["view_index"] = pose.view_index;
  j["extents"] = vec3_to_json(extents);
  j["config"] = config_to_json(cfg);
  return j;
}

PoseEstimate pose_from_json(const json& j) {
  PoseEstimate p;
  p.transform = transform_from_json(j);
  try {
    p.confidence = j.value("confidence", -1.0);
    p.view_index = j.value("view_index", -1);
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string("malformed pose: ") + e.what());
  }
  return p;
}

std::string loss_trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "step,lr_scale,total,mask,chamfer,align,pose_reg,center_reg,deform,edge,normal,laplacian\n";
  char buf[512];
  for (const auto& r : trace) {
    const auto& t = r.terms;
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr_scale,
                  t.total, t.mask, t.chamfer, t.align, t.pose_reg, t.center_reg, t.deform, t.edge, t.normal,
                  t.laplacian);
    out << buf;
  }
  return out.str();
}

SynthScene run_synth(const SynthSpec& spec, const fs::path& out_dir) {
  SynthScene scene = make_synthetic_scene(spec);
  prepare_out_dir(out_dir / "features");
  const CameraIntrinsics& k = spec.intrinsics;
  write_intrinsics(k, out_dir / "intrinsics.json");
  write_depth_uftn(scene.depth, out_dir / "depth.uftn");
  write_mask_png(scene.mask, out_dir / "mask.png");
  write_obj(scene.reference, out_dir / "mesh.obj");
  write_png8(scene.rgb, out_dir / "rgb.png");
  json gt = transform_to_json(scene.gt);
  gt["extents"] = vec3_to_json(mesh_extents(scene.reference).cwiseProduct(spec.shape_scale));
  gt["category"] = is_primitive_name(spec.shape) ? spec.shape : std::string("object");
  write_json(gt, out_dir / "gt_pose.json");
  write_json(json(spec), out_dir / "synth.json");

  SyntheticProvider provider(scene.depth, scene.mask, k, scene.gt, spec.shape_scale, spec.features);
  ImageFeatureRequest req;
  req.role = FeatureRole::kTarget;
  req.intrinsics = k;
  for (const auto& fm : provider.features2d(req))
    write_feature_map(fm, out_dir / "features" / ("target." + fm.source_tag + ".uftn"));
  const auto views = canonical_view_poses(bounding_box(scene.reference.vertices).diagonal(), k);
  for (int v = 0; v < 4; ++v) {
    const RenderOutput r = render(scene.reference, views[v], k, Shading::kVertexColor);
    ImageFeatureRequest rr;
    rr.role = FeatureRole::kReference;
    rr.view = v;
    rr.iteration = 0;
    rr.render = &r;
    rr.pose = views[v];
    rr.intrinsics = k;
    for (const auto& fm : provider.features2d(rr))
      write_feature_map(fm, out_dir / "features" / ("ref_v" + std::to_string(v) + "_i0." + fm.source_tag + ".uftn"));
  }
  return scene;
}

EstimateOutput run_estimate(const fs::path& scene_dir, const PipelineConfig& cfg_in, const fs::path& out_dir) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  validate(cfg);
  const auto t_start = std::chrono::steady_clock::now();
  const Scene scene = load_scene(scene_dir);
  prepare_out_dir(out_dir);
  auto provider = make_provider(scene, cfg.provider, out_dir / "provider_work");
  const Observation obs = make_observation(scene);
  const double load_ms = ms_since(t_start);

  EstimateOutput out;
  auto t0 = std::chrono::steady_clock::now();
  out.coarse = coarse_estimate(obs, scene.mesh, *provider, cfg.coarse);
  const double coarse_ms = ms_since(t0);
  double refine_ms = 0.0;
  out.final_pose = out.coarse.best;
  TriangleMesh final_mesh = scene.mesh;
  if (cfg.refine_enabled) {
    t0 = std::chrono::steady_clock::now();
    out.refined = refine_pose(obs, scene.mesh, out.coarse.best, provider.get(), cfg.refine);
    refine_ms = ms_since(t0);
    out.final_pose = out.refined->pose;
    final_mesh = out.refined->deformed;
  }

  const Vec3 coarse_extents = mesh_extents(scene.mesh);
  const Vec3 final_extents = mesh_extents(final_mesh);
  write_json(pose_json(out.final_pose, final_extents, cfg), out_dir / "pose.json");
  write_json(pose_json(out.coarse.best, coarse_extents, cfg), out_dir / "coarse_pose.json");
  write_obj(final_mesh, out_dir / "mesh.obj");
  write_text(loss_trace_csv(out.refined ? out.refined->trace : std::vector<TraceRow>{}), out_dir / "loss_trace.csv");

  json report = {{"coarse", coarse_json(out.coarse)}, {"config", config_to_json(cfg)}};
  report["refine"] = out.refined ? refine_json(*out.refined) : json(nullptr);
  if (scene.gt) {
    report["ground_truth"] = {{"coarse", ground_truth_metrics(scene, out.coarse.best, coarse_extents)},
                              {"final", ground_truth_metrics(scene, out.final_pose, final_extents)}};
  }
  write_json(report, out_dir / "report.json");
  write_json({{"load_ms", load_ms},
              {"coarse_ms", coarse_ms},
              {"refine_ms", refine_ms},
              {"total_ms", ms_since(t_start)}},
             out_dir / "timings.json");
  return out;
}

CoarseResult run_coarse(const fs::path& scene_dir, const PipelineConfig& cfg_in, const fs::path& out_dir) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  validate(cfg);
  const Scene scene = load_scene(scene_dir);
  prepare_out_dir(out_dir);
  auto provider = make_provider(scene, cfg.provider, out_dir / "provider_work");
  const CoarseResult res = coarse_estimate(make_observation(scene), scene.mesh, *provider, cfg.coarse);
  write_json(pose_json(res.best, mesh_extents(scene.mesh), cfg), out_dir / "coarse_pose.json");
  json report = {{"coarse", coarse_json(res)}, {"config", config_to_json(cfg)}};
  if (scene.gt) report["ground_truth"] = ground_truth_metrics(scene, res.best, mesh_extents(scene.mesh));
  write_json(report, out_dir / "coarse_report.json");
  return res;
}

RefineResult run_refine(const fs::path& scene_dir, const fs::path& coarse_pose, const PipelineConfig& cfg_in,
                        const fs::path& out_dir) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  validate(cfg);
  const Scene scene = load_scene(scene_dir);
  const PoseEstimate init = pose_from_json(read_json(need(coarse_pose)));
  prepare_out_dir(out_dir);
  std::unique_ptr<FeatureProvider> provider;
  if (cfg.refine.weights.a_g > 0.0) provider = make_provider(scene, cfg.provider, out_dir / "provider_work");
  const RefineResult res = refine_pose(make_observation(scene), scene.mesh, init, provider.get(), cfg.refine);
  const Vec3 extents = mesh_extents(res.deformed);
  write_json(pose_json(res.pose, extents, cfg), out_dir / "pose.json");
  write_obj(res.deformed, out_dir / "mesh.obj");
  write_text(loss_trace_csv(res.trace), out_dir / "loss_trace.csv");
  json report = {{"refine", refine_json(res)}, {"config", config_to_json(cfg)}};
  if (scene.gt) report["ground_truth"] = ground_truth_metrics(scene, res.pose, extents);
  write_json(report, out_dir / "refine_report.json");
  return res;
}

ViewPass run_match(const fs::path& scene_dir, int view, const PipelineConfig& cfg_in, const fs::path& out_dir) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  validate(cfg);
  require(view >= 0 && view <= 3, "match: view must be 0..3");
  const Scene scene = load_scene(scene_dir);
  prepare_out_dir(out_dir);
  auto provider = make_provider(scene, cfg.provider, out_dir / "provider_work");
  Observation obs = make_observation(scene);
  ImageFeatureRequest req;
  req.role = FeatureRole::kTarget;
  req.intrinsics = obs.intrinsics;
  obs.features = provider->features2d(req);
  require(!obs.features.empty(), "provider returned no target feature maps");
  validate(obs);
  const auto views = canonical_view_poses(bounding_box(scene.mesh.vertices).diagonal(), obs.intrinsics);
  ViewPass pass = run_single_view(obs, scene.mesh, views[view], *provider, cfg.coarse, view, 0);

  std::ostringstream lines;
  for (std::size_t i = 0; i < pass.correspondences.size(); ++i) {
    const auto& c = pass.correspondences[i];
    json j = {{"p", c.p},
              {"q", c.q},
              {"sim", c.sim},
              {"cyc", c.cyc},
              {"target_px", {pass.target_px[i].x(), pass.target_px[i].y()}},
              {"reference_px", {pass.reference_px[i].x(), pass.reference_px[i].y()}},
              {"inlier", bool(pass.fit.inliers[i])}};
    lines << j.dump() << "\n";
  }
  write_text(lines.str(), out_dir / "matches.jsonl");

  const int w = obs.intrinsics.width, h = obs.intrinsics.height;
  const Image8 left = fs::exists(scene_dir / "rgb.png") ? to_rgb(read_png8(scene_dir / "rgb.png")) : mask_image(scene.mask);
  const Image8 right = pass.render.shaded ? *pass.render.shaded : mask_image(pass.render.mask);
  require(left.width == w && left.height == h, (scene_dir / "rgb.png").string() + ": size does not match intrinsics");
  Image8 canvas(2 * w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::copy(left.at(x, y), left.at(x, y) + 3, canvas.at(x, y));
      std::copy(right.at(x, y), right.at(x, y) + 3, canvas.at(w + x, y));
    }
  const std::uint8_t green[3] = {40, 220, 40}, red[3] = {230, 40, 40};
  for (std::size_t i = 0; i < pass.correspondences.size(); ++i)
    draw_line(canvas, pass.target_px[i], pass.reference_px[i] + Eigen::Vector2d(w, 0),
              pass.fit.inliers[i] ? green : red);
  write_png8(canvas, out_dir / "matches.png");
  write_json({{"view", view},
              {"correspondences", pass.correspondences.size()},
              {"inliers", pass.fit.inlier_count},
              {"confidence", pass.estimate.confidence},
              {"pose", transform_to_json(pass.estimate.transform)},
              {"config", config_to_json(cfg)}},
             out_dir / "match_report.json");
  return pass;
}

RenderOutput run_render(const fs::path& mesh_path, const fs::path& pose_path, const fs::path& intrinsics_path,
                        const fs::path& out_dir) {
  const TriangleMesh mesh = read_obj(need(mesh_path));
  validate(mesh);
  const SimilarityTransform pose = transform_from_json(read_json(need(pose_path)));
  const CameraIntrinsics k = read_intrinsics(need(intrinsics_path));
  prepare_out_dir(out_dir);
  RenderOutput r = render(mesh, pose, k, mesh.has_colors() ? Shading::kVertexColor : Shading::kFlat);
  write_depth_uftn(r.depth, out_dir / "depth.uftn");
  write_mask_png(r.mask, out_dir / "mask.png");
  if (r.shaded) write_png8(*r.shaded, out_dir / "shaded.png");
  return r;
}

EvalOutput run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_dir,
                    std::size_t iou_samples) {
  if (!fs::is_directory(pred_dir)) fail(ErrorKind::kValidation, "prediction directory not found: " + pred_dir.string());
  if (!fs::is_directory(gt_dir)) fail(ErrorKind::kValidation, "ground-truth directory not found: " + gt_dir.string());
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  if (preds.empty()) fail(ErrorKind::kValidation, "no prediction JSON files in " + pred_dir.string());

  EvalOutput out;
  json instances = json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string name = preds[i].stem().string();
    const json pj = read_json(preds[i]);
    const json gj = read_json(need(gt_dir / preds[i].filename()));
    if (!gj.contains("extents")) fail(ErrorKind::kValidation, (gt_dir / preds[i].filename()).string() + ": missing extents");
    const SimilarityTransform pred = transform_from_json(pj);
    const SimilarityTransform gt = transform_from_json(gj);
    const Vec3 gt_ext = vec3_from_json(gj.at("extents"));
    const Vec3 pred_ext = pj.contains("extents") ? vec3_from_json(pj.at("extents")) : gt_ext;
    const std::string category = gj.value("category", std::string());
    EvalRecord rec;
    rec.error = pose_error(pred, gt, symmetry_for_category(category));
    rec.iou = iou3d({pred, pred_ext}, {gt, gt_ext}, iou_samples, i);
    out.names.push_back(name);
    out.records.push_back(rec);
    instances.push_back({{"name", name},
                         {"category", category},
                         {"rot_deg", rec.error.rot_deg},
                         {"trans_cm", rec.error.trans_cm},
                         {"iou3d", rec.iou}});
  }
  out.table = accuracy_table(out.records);
  prepare_out_dir(out_dir);
  const auto& t = out.table;
  write_json({{"count", t.count},
              {"IOU_0.25", t.iou25},
              {"IOU_0.5", t.iou50},
              {"5deg2cm", t.deg5_cm2},
              {"5deg5cm", t.deg5_cm5},
              {"10deg2cm", t.deg10_cm2},
              {"10deg5cm", t.deg10_cm5},
              {"box_extents", "pose scale times model-frame extents of the (possibly deformed) mesh"},
              {"iou_samples", iou_samples},
              {"instances", instances}},
             out_dir / "metrics.json");
  write_text(format_accuracy_table(t), out_dir / "table.txt");
  return out;
}

}  // namespace unipose
