#pragma once

// Signed distance field of a binary mask, in pixels, negative inside. Values
// live at pixel centres and place the zero crossing on the pixel boundary
// between a masked and an unmasked pixel.

#include <vector>

#include <Eigen/Core>

#include "unipose/geometry.hpp"

namespace unipose {

struct DistanceField {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int x, int y) const { return values[std::size_t(y) * width + x]; }

  // Bilinear interpolation between pixel centres at continuous pixel
  // coordinate (u, v). Outside the centre lattice the field is extended
  // linearly with unit slope, so points off-image still feel a pull inward.
  double sample(double u, double v, Eigen::Vector2d* grad = nullptr) const;
};

// Throws kValidation on an empty mask.
DistanceField signed_distance_field(const Mask& mask);

// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher):
// for every pixel, squared distance to the nearest pixel where `feature` is set.
std::vector<double> squared_distance_transform(const std::vector<bool>& feature, int width, int height);

}  // namespace unipose
