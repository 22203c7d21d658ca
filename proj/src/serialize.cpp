#include "unipose/serialize.hpp"

#include "unipose/error.hpp"

namespace unipose {

nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json transform_to_json(const SimilarityTransform& x) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(x.r(i, k));
  return {{"R", r}, {"T", vec3_to_json(x.t)}, {"s", x.s}};
}

SimilarityTransform transform_from_json(const nlohmann::json& j) {
  SimilarityTransform x;
  try {
    const auto& r = j.at("R");
    require(r.is_array() && r.size() == 9, "pose R must have 9 entries");
    for (int i = 0; i < 9; ++i) x.r(i / 3, i % 3) = r[i].get<double>();
    x.t = vec3_from_json(j.at("T"));
    x.s = j.value("s", 1.0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, std::string("malformed pose: ") + e.what());
  }
  validate(x, 1e-5);
  x.r = orthonormalize(x.r);
  return x;
}

nlohmann::json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  try {
    k.fx = j.at("fx");
    k.fy = j.at("fy");
    k.cx = j.at("cx");
    k.cy = j.at("cy");
    k.width = j.at("width");
    k.height = j.at("height");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, std::string("malformed intrinsics: ") + e.what());
  }
  validate(k);
  return k;
}

}  // namespace unipose
