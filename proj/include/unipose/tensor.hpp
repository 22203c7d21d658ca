#pragma once

// Dense f32 tensors, patch-grid feature maps, the UFTN file format, weighted
// feature fusion and joint PCA reduction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace unipose {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::uint32_t> shape, std::vector<float> data);
  explicit Tensor(std::vector<std::uint32_t> shape);  // zero-filled

  const std::vector<std::uint32_t>& shape() const { return shape_; }
  std::size_t ndims() const { return shape_.size(); }
  std::uint32_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::uint32_t> shape_;
  std::vector<float> data_;
};

// Product of dimensions; throws on overflow of size_t.
std::size_t element_count(std::span<const std::uint32_t> shape);

// UFTN: "UFTN" | u32 version=1 | u32 ndims | ndims x u32 dims | f32 payload, all LE.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);

struct FeatureMap {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t channels = 0;
  Tensor values;  // [grid_h, grid_w, channels]
  std::uint32_t patch_size_px = 1;
  std::uint32_t image_w_px = 0;
  std::uint32_t image_h_px = 0;
  std::string source_tag;

  std::size_t num_patches() const { return std::size_t(grid_h) * grid_w; }
  std::span<const float> patch(std::size_t p) const {
    return values.data().subspan(p * channels, channels);
  }
  std::span<float> patch(std::size_t p) { return values.data().subspan(p * channels, channels); }

  static FeatureMap zeros(std::uint32_t grid_h, std::uint32_t grid_w, std::uint32_t channels,
                          std::uint32_t patch_size_px, std::uint32_t image_w_px,
                          std::uint32_t image_h_px, std::string source_tag);
};

// Throws ValidationError when the map violates its invariants.
void validate(const FeatureMap& fm);

// Tensor at `path` plus a JSON sidecar with the same basename.
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path);
std::filesystem::path feature_sidecar_path(const std::filesystem::path& tensor_path);

struct CombineWeights {
  double alpha_d1 = 0.0;
  double alpha_d2 = 0.7;
  double alpha_sd = 0.3;

  // Weight for a map by source tag; tags other than dinov1/dinov2/sd weigh 1.
  double weight_for(const std::string& source_tag) const;
};

struct WeightedMap {
  const FeatureMap* map;
  double weight;
};

// Per patch: each input vector scaled to unit L2 norm (zero stays zero), times
// its weight, concatenated along channels. Zero-weight maps are dropped.
FeatureMap combine_features(std::span<const WeightedMap> maps);
FeatureMap combine_features(std::span<const FeatureMap> maps, const CombineWeights& weights);

struct PcaInfo {
  std::size_t dims = 0;              // actual output dims (may be < requested on rank deficit)
  Eigen::VectorXd mean;              // of the fitted vectors
  Eigen::MatrixXd basis;             // channels x dims, orthonormal columns
  Eigen::VectorXd eigenvalues;       // variance along each basis column, descending
  double total_variance = 0.0;
};

// Fits a basis on the rows of `samples` (mean-centred) and returns the top
// `dims` principal directions.
PcaInfo fit_pca(const Eigen::MatrixXd& samples, std::size_t dims);

// Joint PCA over the non-zero patch vectors of both maps. Outputs are the
// uncentred projections onto the basis, so all-zero (masked) patches stay zero
// and a full-rank reduction is a pure rotation.
std::pair<FeatureMap, FeatureMap> pca_reduce_pair(const FeatureMap& a, const FeatureMap& b,
                                                  std::size_t dims, PcaInfo* info = nullptr);

// Same reduction for row-major [N, C] tensors (per-point 3D features).
std::pair<Tensor, Tensor> pca_reduce_rows(const Tensor& a, const Tensor& b, std::size_t dims,
                                          PcaInfo* info = nullptr);

}  // namespace unipose
