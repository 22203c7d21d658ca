#pragma once

// Synthetic scenes and an oracle feature provider for testing the pipeline
// without pretrained models.
//
// Features are a Fourier embedding of the canonical (NOCS) coordinate of the
// surface point seen at each patch centre: [cos(w c_a), sin(w c_a)] for every
// axis a and frequency w. Identical surface points get identical features, so
// matching is exact up to patch sampling, and noise can be dialled in.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "unipose/geometry.hpp"
#include "unipose/io.hpp"
#include "unipose/provider.hpp"

namespace unipose {

struct FourierEmbedding {
  std::vector<double> frequencies;

  std::uint32_t channels() const { return static_cast<std::uint32_t>(6 * frequencies.size()); }
  void encode(const Vec3& c, std::span<float> out) const;
};

struct SyntheticFeatureConfig {
  FourierEmbedding local{{6.0, 12.0, 24.0}};   // emitted with tag "dinov2"
  FourierEmbedding global{{1.5, 3.0}};         // emitted with tag "sd"
  FourierEmbedding cloud{{1.5, 3.0, 6.0, 12.0}};
  std::uint32_t patch_size_px = 8;
  double target_noise = 0.0;  // Gaussian sigma added to target 2D features
  double gap_slope = 0.0;     // reference 2D noise sigma per degree of rotation gap to ground truth
  double outlier_rate = 0.0;  // fraction of target patches given random canonical coordinates
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SyntheticFeatureConfig& c);
void from_json(const nlohmann::json& j, SyntheticFeatureConfig& c);

// Canonical-frame primitives (unit bounding-box diagonal, centred, y up) with
// outward-wound faces and NOCS vertex colours. Names: cube, box, cylinder, sphere.
TriangleMesh make_primitive(const std::string& name, int resolution = 8);
TriangleMesh make_box_mesh(const Vec3& extents, int resolution = 8);
bool is_primitive_name(const std::string& name);

// colour = canonical position + 0.5, clamped to [0, 1].
void assign_nocs_colors(TriangleMesh& mesh);

// splitmix64 finaliser; used to derive independent seeds from tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// One FeatureMap per embedding (tags "dinov2", "sd"). Patches without a
// coordinate get zero vectors.
std::vector<FeatureMap> embed_patch_coordinates(const std::vector<std::optional<Vec3>>& coords,
                                                std::uint32_t grid_h, std::uint32_t grid_w,
                                                const CameraIntrinsics& k, const SyntheticFeatureConfig& cfg,
                                                double noise_sigma, std::uint64_t noise_seed);

// Knows the ground truth. The target object is diag(shape_scale) times the
// canonical shape, posed by `gt`; its canonical coordinate at camera point p is
// diag(shape_scale)^-1 gt^-1 p.
class SyntheticProvider final : public FeatureProvider {
 public:
  SyntheticProvider(DepthMap target_depth, Mask target_mask, CameraIntrinsics k, SimilarityTransform gt,
                    Vec3 shape_scale, SyntheticFeatureConfig cfg);

  std::vector<FeatureMap> features2d(const ImageFeatureRequest& req) override;
  Tensor features3d(const CloudFeatureRequest& req) override;

  std::size_t calls() const { return calls_; }

 private:
  Vec3 target_canonical(const Vec3& camera_point) const;

  DepthMap depth_;
  Mask mask_;
  CameraIntrinsics k_;
  SimilarityTransform gt_;
  Vec3 shape_scale_;
  SyntheticFeatureConfig cfg_;
  std::size_t calls_ = 0;
};

struct SynthSpec {
  std::string shape = "cube";  // primitive name or path to an OBJ
  std::uint64_t seed = 0;
  CameraIntrinsics intrinsics{600.0, 600.0, 320.0, 240.0, 640, 480};
  double depth_noise_m = 0.0;
  Vec3 shape_scale = Vec3::Ones();
  std::optional<SimilarityTransform> pose;  // sampled from `seed` when absent
  SyntheticFeatureConfig features;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct SynthScene {
  SynthSpec spec;
  TriangleMesh reference;  // canonical, NOCS coloured
  SimilarityTransform gt;  // reference model -> camera
  DepthMap depth;
  Mask mask;
  Image8 rgb;              // NOCS render of the target
};

// Random tabletop-like pose: yaw uniform, camera elevation 10-50 degrees, small
// roll, 0.7-1.1 m away, scale 0.2-0.35 m, lateral offset up to 10% of distance.
SimilarityTransform sample_object_pose(std::uint64_t seed);

SynthScene make_synthetic_scene(const SynthSpec& spec);

}  // namespace unipose
