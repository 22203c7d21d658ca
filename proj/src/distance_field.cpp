#include "unipose/distance_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unipose/error.hpp"

namespace unipose {

namespace {

constexpr double kInf = 1e20;

// 1-D lower envelope of parabolas.
void dt1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<bool>& feature, int width, int height) {
  require(width > 0 && height > 0 && feature.size() == std::size_t(width) * height, "distance transform: bad size");
  std::vector<double> g(feature.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = feature[i] ? 0.0 : kInf;
  const int n = std::max(width, height);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = g[std::size_t(y) * width + x];
    dt1d(f.data(), height, d.data(), v, z);
    for (int y = 0; y < height; ++y) g[std::size_t(y) * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    double* row = g.data() + std::size_t(y) * width;
    std::copy(row, row + width, f.begin());
    dt1d(f.data(), width, d.data(), v, z);
    std::copy(d.begin(), d.begin() + width, row);
  }
  return g;
}

DistanceField signed_distance_field(const Mask& mask) {
  require(mask.count() > 0, "signed_distance_field: empty mask");
  const std::size_t n = std::size_t(mask.width) * mask.height;
  std::vector<bool> inside(n), outside(n);
  for (std::size_t i = 0; i < n; ++i) {
    inside[i] = mask.values[i] != 0;
    outside[i] = !inside[i];
  }
  const std::vector<double> to_inside = squared_distance_transform(inside, mask.width, mask.height);
  const bool any_outside = std::find(outside.begin(), outside.end(), true) != outside.end();
  const std::vector<double> to_outside =
      any_outside ? squared_distance_transform(outside, mask.width, mask.height) : std::vector<double>();
  const double cap = double(mask.width + mask.height);

  DistanceField df;
  df.width = mask.width;
  df.height = mask.height;
  df.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (inside[i]) {
      const double d = any_outside ? std::sqrt(to_outside[i]) : cap;
      df.values[i] = static_cast<float>(-(d - 0.5));
    } else {
      df.values[i] = static_cast<float>(std::sqrt(to_inside[i]) - 0.5);
    }
  }
  return df;
}

double DistanceField::sample(double u, double v, Eigen::Vector2d* grad) const {
  // Lattice coordinates: pixel centre (i + 0.5) maps to i.
  const double x = u - 0.5;
  const double y = v - 0.5;
  const double xc = std::clamp(x, 0.0, double(width - 1));
  const double yc = std::clamp(y, 0.0, double(height - 1));
  const int x0 = std::min(int(std::floor(xc)), std::max(0, width - 2));
  const int y0 = std::min(int(std::floor(yc)), std::max(0, height - 2));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = xc - x0;
  const double fy = yc - y0;
  const double v00 = at(x0, y0), v10 = at(x1, y0), v01 = at(x0, y1), v11 = at(x1, y1);
  double value = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
  double gx = (x1 != x0) ? (1 - fy) * (v10 - v00) + fy * (v11 - v01) : 0.0;
  double gy = (y1 != y0) ? (1 - fx) * (v01 - v00) + fx * (v11 - v10) : 0.0;
  if (x != xc) {
    value += std::abs(x - xc);
    gx = x > xc ? 1.0 : -1.0;
  }
  if (y != yc) {
    value += std::abs(y - yc);
    gy = y > yc ? 1.0 : -1.0;
  }
  if (grad) *grad = {gx, gy};
  return value;
}

}  // namespace unipose
