#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "oracles.hpp"
#include "unipose/error.hpp"
#include "unipose/pipeline.hpp"
#include "unipose/provider.hpp"
#include "unipose/synthetic.hpp"

using namespace unipose;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.intrinsics = {300.0, 300.0, 160.0, 120.0, 320, 240};
  return s;
}

PointCloud cloud_of(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PointCloud pc;
  pc.points = oracle::random_points(rng, n, 0.5);
  return pc;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kFormat;
}

std::string fake(const std::string& flags = "") { return std::string(FAKE_PROVIDER) + " " + flags; }

double cosine(std::span<const float> a, std::span<const float> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return d / std::sqrt(na * nb);
}

}  // namespace

TEST(FilesProvider, ReadsWhatSynthWrote) {
  oracle::TempDir dir("files");
  const SynthScene scene = run_synth(small_spec(1), dir.path());
  FilesProvider files(dir.path(), {"dinov2", "sd"});
  SyntheticProvider synth(scene.depth, scene.mask, scene.spec.intrinsics, scene.gt, scene.spec.shape_scale,
                          scene.spec.features);
  ImageFeatureRequest req;
  req.intrinsics = scene.spec.intrinsics;
  const auto got = files.features2d(req);
  const auto want = synth.features2d(req);
  ASSERT_EQ(got.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(got[i].source_tag, want[i].source_tag);
    EXPECT_EQ(got[i].values, want[i].values);
    EXPECT_EQ(got[i].patch_size_px, 8u);
    EXPECT_EQ(got[i].image_w_px, 320u);
    EXPECT_TRUE(fs::exists(feature_sidecar_path(dir / ("features/target." + got[i].source_tag + ".uftn"))));
  }
}

TEST(FilesProvider, MissingFileNamesThePath) {
  oracle::TempDir dir("files_missing");
  FilesProvider files(dir.path(), {"dinov2"});
  ImageFeatureRequest req;
  req.role = FeatureRole::kReference;
  req.view = 2;
  req.iteration = 1;
  try {
    files.features2d(req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProvider);
    EXPECT_NE(std::string(e.what()).find("ref_v2_i1.dinov2.uftn"), std::string::npos);
  }
  const PointCloud pc = cloud_of(5, 1);
  CloudFeatureRequest creq;
  creq.cloud = &pc;
  EXPECT_EQ(kind_of([&] { files.features3d(creq); }), ErrorKind::kProvider);
}

TEST(SubprocessProvider, TargetFeaturesMatchTheSyntheticOracle) {
  oracle::TempDir dir("sub_target");
  const SynthScene scene = run_synth(small_spec(2), dir.path());
  SyntheticProvider synth(scene.depth, scene.mask, scene.spec.intrinsics, scene.gt, scene.spec.shape_scale,
                          scene.spec.features);
  SubprocessProvider sub(fake("--log " + (dir / "log.jsonl").string()), dir / "work", {"dinov2", "sd"},
                         dir / "rgb.png");
  ImageFeatureRequest req;
  req.intrinsics = scene.spec.intrinsics;
  const auto got = sub.features2d(req);
  const auto want = synth.features2d(req);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t m = 0; m < got.size(); ++m) {
    EXPECT_EQ(got[m].source_tag, want[m].source_tag);
    ASSERT_EQ(got[m].values.shape(), want[m].values.shape());
    std::size_t agree = 0, both = 0;
    double cos_sum = 0.0;
    for (std::size_t p = 0; p < got[m].num_patches(); ++p) {
      const bool a = std::any_of(got[m].patch(p).begin(), got[m].patch(p).end(), [](float v) { return v != 0; });
      const bool b = std::any_of(want[m].patch(p).begin(), want[m].patch(p).end(), [](float v) { return v != 0; });
      agree += a == b;
      if (a && b) {
        ++both;
        cos_sum += cosine(got[m].patch(p), want[m].patch(p));
      }
    }
    EXPECT_GE(double(agree), 0.99 * double(got[m].num_patches()));
    ASSERT_GT(both, 20u);
    EXPECT_GT(cos_sum / double(both), 0.97);
  }

  // The wire format: one request per tag, each naming its model and output file.
  std::ifstream log(dir / "log.jsonl");
  std::string line;
  std::vector<nlohmann::json> reqs;
  while (std::getline(log, line)) reqs.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_EQ(reqs[0]["id"], 0);
  EXPECT_EQ(reqs[0]["op"], "features2d");
  EXPECT_EQ(reqs[0]["model"], "dinov2");
  EXPECT_EQ(reqs[1]["model"], "sd");
  EXPECT_EQ(reqs[0]["image"], (dir / "rgb.png").string());
  EXPECT_TRUE(fs::exists(feature_sidecar_path(reqs[1]["out"].get<std::string>())));
}

TEST(SubprocessProvider, ReferenceRenderIsWrittenAndEncoded) {
  oracle::TempDir dir("sub_ref");
  const SynthScene scene = make_synthetic_scene(small_spec(3));
  const CameraIntrinsics k = scene.spec.intrinsics;
  const auto poses = canonical_view_poses(1.0, k);
  const RenderOutput r = render(scene.reference, poses[1], k, Shading::kVertexColor);
  SubprocessProvider sub(fake(), dir / "work", {"dinov2"}, dir / "unused.png");
  ImageFeatureRequest req;
  req.role = FeatureRole::kReference;
  req.view = 1;
  req.render = &r;
  req.pose = poses[1];
  req.intrinsics = k;
  const auto maps = sub.features2d(req);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "work" / "ref_v1_i0.png"));
  std::size_t nonzero = 0;
  for (std::size_t p = 0; p < maps[0].num_patches(); ++p) nonzero += maps[0].patch(p)[0] != 0.0f;
  EXPECT_GT(nonzero, 0u);
  RenderOutput unshaded = render(scene.reference, poses[1], k, Shading::kNone);
  req.render = &unshaded;
  EXPECT_THROW(sub.features2d(req), Error);
}

TEST(SubprocessProvider, CloudFeaturesAreTheFourierEmbedding) {
  oracle::TempDir dir("sub_cloud");
  SubprocessProvider sub(fake(), dir / "work", {"dinov2"}, dir / "x.png");
  const PointCloud pc = cloud_of(37, 4);
  CloudFeatureRequest req;
  req.cloud = &pc;
  const Tensor t = sub.features3d(req);
  const SyntheticFeatureConfig cfg;
  ASSERT_EQ(t.dim(0), 37u);
  ASSERT_EQ(t.dim(1), cfg.cloud.channels());
  std::vector<float> want(cfg.cloud.channels());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    cfg.cloud.encode(pc.points[i].cast<float>().cast<double>(), want);
    for (std::size_t c = 0; c < want.size(); ++c) ASSERT_NEAR(t[i * want.size() + c], want[c], 1e-6);
  }
}

TEST(SubprocessProvider, ErrorRepliesBecomeProviderErrors) {
  oracle::TempDir dir("sub_err");
  const PointCloud pc = cloud_of(4, 5);
  CloudFeatureRequest req;
  req.cloud = &pc;
  for (const std::string flags : {"--fail-op 1", "--exit-at 1", "--garbage-at 1", "--wrong-id-at 1"}) {
    SubprocessProvider sub(fake(flags), dir / "work", {"dinov2"}, dir / "x.png");
    EXPECT_NO_THROW(sub.features3d(req)) << flags;
    try {
      sub.features3d(req);
      ADD_FAILURE() << flags;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kProvider) << flags;
      if (flags == "--fail-op 1") EXPECT_NE(std::string(e.what()).find("injected failure"), std::string::npos);
    }
  }
  SubprocessProvider missing("/nonexistent/provider-binary", dir / "work", {"dinov2"}, dir / "x.png");
  EXPECT_EQ(kind_of([&] { missing.features3d(req); }), ErrorKind::kProvider);
  SubprocessProvider bad_image(fake(), dir / "work", {"dinov2"}, dir / "no-such.png");
  EXPECT_EQ(kind_of([&] { bad_image.features2d(ImageFeatureRequest{}); }), ErrorKind::kProvider);
}

TEST(SubprocessProvider, HundredRequestSoak) {
  oracle::TempDir dir("sub_soak");
  const fs::path log = dir / "log.jsonl";
  {
    SubprocessProvider sub(fake("--log " + log.string()), dir / "work", {"dinov2"}, dir / "x.png");
    for (std::size_t i = 0; i < 100; ++i) {
      const PointCloud pc = cloud_of(1 + i % 17, i);
      CloudFeatureRequest req;
      req.cloud = &pc;
      ASSERT_EQ(sub.features3d(req).dim(0), pc.size());
    }
    EXPECT_EQ(sub.requests_sent(), 100u);
  }
  std::ifstream in(log);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["id"].get<std::size_t>(), n);
    EXPECT_EQ(j["op"], "features3d");
    ++n;
  }
  EXPECT_EQ(n, 100u);
}

TEST(MakeProvider, AutoModeFollowsSceneContents) {
  oracle::TempDir dir("auto");
  run_synth(small_spec(6), dir.path());
  const Scene scene = load_scene(dir.path());
  ProviderSettings s;
  EXPECT_NE(dynamic_cast<SyntheticProvider*>(make_provider(scene, s, dir / "work").get()), nullptr);
  Scene plain = scene;
  plain.gt.reset();
  plain.synth.reset();
  EXPECT_NE(dynamic_cast<FilesProvider*>(make_provider(plain, s, dir / "work").get()), nullptr);
  s.mode = "subprocess";
  s.command = fake();
  EXPECT_NE(dynamic_cast<SubprocessProvider*>(make_provider(scene, s, dir / "work").get()), nullptr);
  s.mode = "synthetic";
  EXPECT_EQ(kind_of([&] { make_provider(plain, s, dir / "work"); }), ErrorKind::kValidation);
  s.mode = "bogus";
  EXPECT_THROW(make_provider(scene, s, dir / "work"), Error);
}
