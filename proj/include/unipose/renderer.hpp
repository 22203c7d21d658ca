#pragma once

// Software z-buffer rasteriser. Pixels are sampled at their centres
// (x + 0.5, y + 0.5); edge ownership follows the top-left rule; depth is
// interpolated perspective-correctly. No anti-aliasing.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/io.hpp"

namespace unipose {

enum class Shading {
  kNone,         // depth / mask / face index only
  kFlat,         // per-face colour times a headlight Lambert term
  kVertexColor,  // unlit, perspective-correct vertex colour interpolation
};

struct RenderOutput {
  DepthMap depth;
  Mask mask;
  std::vector<std::int32_t> face_index;  // -1 = background
  std::optional<Image8> shaded;           // RGB

  std::int32_t face_at(int x, int y) const { return face_index[std::size_t(y) * depth.width + x]; }
};

// Faces with any vertex at z <= 1e-6 after posing are dropped.
RenderOutput render(const TriangleMesh& mesh, const SimilarityTransform& pose, const CameraIntrinsics& k,
                    Shading shading = Shading::kFlat);

// Four model->camera poses rotating the canonical object by 0, 90, 180 and 270
// degrees about its up (+y) axis, viewed upright, pushed along +z until the
// diameter spans 60% of the smaller image extent.
std::array<SimilarityTransform, 4> canonical_view_poses(double mesh_diameter, const CameraIntrinsics& k);

// Upright viewing rotation: canonical +y maps to image up, canonical +z faces the camera.
Mat3 upright_view_rotation();

}  // namespace unipose
