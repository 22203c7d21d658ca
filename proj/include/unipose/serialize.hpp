#pragma once

// JSON encodings shared by the CLI outputs and configs.
//
// Pose JSON: {"R": [9 floats, row-major], "T": [x, y, z] metres, "s": scale,
//             "confidence": c, "view_index": i}

#include <json.hpp>

#include "unipose/geometry.hpp"

namespace unipose {

nlohmann::json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const nlohmann::json& j);

nlohmann::json transform_to_json(const SimilarityTransform& x);
// Accepts R/T/s keys; validates the rotation (throws kValidation).
SimilarityTransform transform_from_json(const nlohmann::json& j);

nlohmann::json intrinsics_to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);

}  // namespace unipose
