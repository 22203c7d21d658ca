#include "unipose/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "unipose/error.hpp"

namespace unipose {

static_assert(std::endian::native == std::endian::little, "UFTN I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'U', 'F', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxDims = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated header", offset);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t element_count(std::span<const std::uint32_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
      fail(ErrorKind::kValidation, "tensor dimension product overflows");
    }
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::uint32_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
  require(data_.size() == element_count(shape_), "tensor data length does not match shape");
  for (float v : data_) require(std::isfinite(v), "tensor values must be finite");
}

Tensor::Tensor(std::vector<std::uint32_t> shape) : shape_(std::move(shape)) {
  for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
  data_.assign(element_count(shape_), 0.0f);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * t.ndims() + 4 * t.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(t.ndims()));
  for (auto d : t.shape()) put_u32(out, d);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), raw, raw + 4 * t.size());
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected UFTN", 0);
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) throw FormatError("unsupported UFTN version " + std::to_string(version), 4);
  const std::uint32_t ndims = get_u32(bytes, 8);
  if (ndims == 0 || ndims > kMaxDims) throw FormatError("invalid ndims " + std::to_string(ndims), 8);
  std::vector<std::uint32_t> shape(ndims);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const std::size_t off = 12 + 4 * std::size_t(i);
    shape[i] = get_u32(bytes, off);
    if (shape[i] == 0) throw FormatError("zero dimension", off);
    if (count > (std::numeric_limits<std::size_t>::max() / 4) / shape[i]) {
      throw FormatError("dimension overflow", off);
    }
    count *= shape[i];
  }
  const std::size_t payload = 12 + 4 * std::size_t(ndims);
  if (bytes.size() - payload < count * 4 || bytes.size() < payload) {
    throw FormatError("truncated payload: need " + std::to_string(count * 4) + " bytes", bytes.size());
  }
  if (bytes.size() != payload + count * 4) {
    throw FormatError("trailing bytes after payload", payload + count * 4);
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + payload, count * 4);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(data[i])) throw FormatError("non-finite value", payload + 4 * i);
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte_offset());
  }
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

FeatureMap FeatureMap::zeros(std::uint32_t grid_h, std::uint32_t grid_w, std::uint32_t channels,
                             std::uint32_t patch_size_px, std::uint32_t image_w_px,
                             std::uint32_t image_h_px, std::string source_tag) {
  FeatureMap fm;
  fm.grid_h = grid_h;
  fm.grid_w = grid_w;
  fm.channels = channels;
  fm.values = Tensor({grid_h, grid_w, channels});
  fm.patch_size_px = patch_size_px;
  fm.image_w_px = image_w_px;
  fm.image_h_px = image_h_px;
  fm.source_tag = std::move(source_tag);
  return fm;
}

void validate(const FeatureMap& fm) {
  require(fm.grid_h > 0 && fm.grid_w > 0, "feature map grid must be non-empty");
  require(fm.channels >= 1, "feature map needs at least one channel");
  require(fm.patch_size_px > 0, "patch size must be positive");
  const auto& s = fm.values.shape();
  require(s.size() == 3 && s[0] == fm.grid_h && s[1] == fm.grid_w && s[2] == fm.channels,
          "feature map tensor shape must be [grid_h, grid_w, channels]");
  require(std::uint64_t(fm.grid_h) * fm.patch_size_px <= std::uint64_t(fm.image_h_px) + fm.patch_size_px,
          "feature grid height exceeds image");
  require(std::uint64_t(fm.grid_w) * fm.patch_size_px <= std::uint64_t(fm.image_w_px) + fm.patch_size_px,
          "feature grid width exceeds image");
  require(fm.image_w_px > 0 && fm.image_h_px > 0, "feature map image size must be positive");
}

std::filesystem::path feature_sidecar_path(const std::filesystem::path& tensor_path) {
  auto p = tensor_path;
  p.replace_extension(".json");
  return p;
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  Tensor t = read_tensor(path);
  if (t.ndims() != 3) fail(ErrorKind::kValidation, path.string() + ": feature map tensor must be 3-D");
  const auto side = feature_sidecar_path(path);
  std::ifstream in(side);
  if (!in) fail(ErrorKind::kIo, "missing feature sidecar " + side.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, side.string() + ": " + e.what());
  }
  FeatureMap fm;
  fm.grid_h = t.dim(0);
  fm.grid_w = t.dim(1);
  fm.channels = t.dim(2);
  fm.values = std::move(t);
  try {
    fm.patch_size_px = j.at("patch_size_px").get<std::uint32_t>();
    fm.image_w_px = j.at("image_w_px").get<std::uint32_t>();
    fm.image_h_px = j.at("image_h_px").get<std::uint32_t>();
    fm.source_tag = j.value("source_tag", std::string());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, side.string() + ": " + e.what());
  }
  validate(fm);
  return fm;
}

void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path) {
  validate(fm);
  write_tensor(fm.values, path);
  nlohmann::json j = {{"patch_size_px", fm.patch_size_px},
                      {"image_w_px", fm.image_w_px},
                      {"image_h_px", fm.image_h_px},
                      {"source_tag", fm.source_tag}};
  std::ofstream out(feature_sidecar_path(path), std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write sidecar for " + path.string());
  out << j.dump(2) << '\n';
}

double CombineWeights::weight_for(const std::string& source_tag) const {
  if (source_tag == "dinov1") return alpha_d1;
  if (source_tag == "dinov2") return alpha_d2;
  if (source_tag == "sd") return alpha_sd;
  return 1.0;
}

FeatureMap combine_features(std::span<const WeightedMap> maps) {
  std::vector<WeightedMap> kept;
  for (const auto& m : maps) {
    require(m.map != nullptr, "null feature map");
    require(m.weight >= 0.0 && std::isfinite(m.weight), "combine weights must be non-negative");
    if (m.weight > 0.0) kept.push_back(m);
  }
  require(!kept.empty(), "combine_features: no map with positive weight");
  const FeatureMap& first = *kept.front().map;
  std::uint32_t channels = 0;
  std::string tag;
  for (const auto& m : kept) {
    require(m.map->grid_h == first.grid_h && m.map->grid_w == first.grid_w,
            "combine_features: grid shape mismatch");
    channels += m.map->channels;
    tag += (tag.empty() ? "" : "+") + m.map->source_tag;
  }
  FeatureMap out = FeatureMap::zeros(first.grid_h, first.grid_w, channels, first.patch_size_px,
                                     first.image_w_px, first.image_h_px, tag);
  for (std::size_t p = 0; p < out.num_patches(); ++p) {
    auto dst = out.patch(p);
    std::size_t offset = 0;
    for (const auto& m : kept) {
      const auto src = m.map->patch(p);
      double sq = 0.0;
      for (float v : src) sq += double(v) * v;
      const double norm = std::sqrt(sq);
      if (norm > 0.0) {
        const double scale = m.weight / norm;
        for (std::size_t c = 0; c < src.size(); ++c) dst[offset + c] = static_cast<float>(src[c] * scale);
      }
      offset += src.size();
    }
  }
  return out;
}

FeatureMap combine_features(std::span<const FeatureMap> maps, const CombineWeights& weights) {
  std::vector<WeightedMap> wm;
  wm.reserve(maps.size());
  for (const auto& m : maps) wm.push_back({&m, weights.weight_for(m.source_tag)});
  return combine_features(wm);
}

PcaInfo fit_pca(const Eigen::MatrixXd& samples, std::size_t dims) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index c = samples.cols();
  require(dims >= 1, "PCA dims must be positive");
  require(static_cast<Eigen::Index>(dims) <= c, "PCA dims exceed channel count");
  require(n >= 1, "PCA needs at least one sample");

  PcaInfo info;
  info.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centred = samples.rowwise() - info.mean.transpose();

  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;  // c x k, columns are directions
  if (c <= n) {
    const Eigen::MatrixXd cov = (centred.transpose() * centred) / double(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    evals = es.eigenvalues().reverse();
    evecs = es.eigenvectors().rowwise().reverse();
  } else {
    // Gram route: eigenvectors u of X X^T / n map to X^T u / sqrt(n lambda).
    const Eigen::MatrixXd gram = (centred * centred.transpose()) / double(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    evals = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    evecs = Eigen::MatrixXd::Zero(c, u.cols());
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
      if (evals[k] > 0.0) evecs.col(k) = centred.transpose() * u.col(k) / std::sqrt(double(n) * evals[k]);
    }
  }
  info.total_variance = std::max(0.0, evals.sum());

  const double top = evals.size() > 0 ? std::max(evals[0], 0.0) : 0.0;
  const double tol = std::max(top * 1e-10, 1e-300);
  std::size_t rank = 0;
  while (rank < std::size_t(evals.size()) && evals[rank] > tol) ++rank;
  info.dims = std::max<std::size_t>(1, std::min(dims, rank));

  info.basis = evecs.leftCols(info.dims);
  info.eigenvalues = evals.head(info.dims).cwiseMax(0.0);
  if (rank == 0) {
    // Constant data: any axis is as good as another.
    info.basis = Eigen::MatrixXd::Identity(c, 1);
    info.eigenvalues = Eigen::VectorXd::Zero(1);
  }
  for (Eigen::Index k = 0; k < info.basis.cols(); ++k) {
    auto col = info.basis.col(k);
    col.normalize();
    Eigen::Index arg;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0.0) col = -col;
  }
  return info;
}

namespace {

bool is_zero_row(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

Eigen::MatrixXd nonzero_rows(std::span<const float> a, std::size_t rows_a, std::span<const float> b,
                             std::size_t rows_b, std::size_t c) {
  std::vector<const float*> rows;
  for (std::size_t i = 0; i < rows_a; ++i)
    if (!is_zero_row(a.subspan(i * c, c))) rows.push_back(a.data() + i * c);
  for (std::size_t i = 0; i < rows_b; ++i)
    if (!is_zero_row(b.subspan(i * c, c))) rows.push_back(b.data() + i * c);
  Eigen::MatrixXd m(rows.size(), c);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < c; ++k) m(r, k) = rows[r][k];
  return m;
}

std::vector<float> project_rows(std::span<const float> src, std::size_t rows, std::size_t c,
                                const Eigen::MatrixXd& basis) {
  const std::size_t d = basis.cols();
  std::vector<float> out(rows * d, 0.0f);
  Eigen::VectorXd v(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = src.subspan(r * c, c);
    if (is_zero_row(row)) continue;
    for (std::size_t k = 0; k < c; ++k) v[k] = row[k];
    const Eigen::VectorXd y = basis.transpose() * v;
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = static_cast<float>(y[k]);
  }
  return out;
}

}  // namespace

std::pair<FeatureMap, FeatureMap> pca_reduce_pair(const FeatureMap& a, const FeatureMap& b,
                                                  std::size_t dims, PcaInfo* info_out) {
  require(a.channels == b.channels, "pca_reduce_pair: channel mismatch");
  require(dims >= 1 && dims <= a.channels, "pca_reduce_pair: dims exceed channels");
  const std::size_t c = a.channels;
  Eigen::MatrixXd samples = nonzero_rows(a.values.data(), a.num_patches(), b.values.data(), b.num_patches(), c);
  require(samples.rows() > 0, "pca_reduce_pair: both maps are entirely zero");
  PcaInfo info = fit_pca(samples, dims);

  auto reduce = [&](const FeatureMap& fm) {
    FeatureMap out = fm;
    out.channels = static_cast<std::uint32_t>(info.dims);
    out.values = Tensor({fm.grid_h, fm.grid_w, out.channels},
                        project_rows(fm.values.data(), fm.num_patches(), c, info.basis));
    return out;
  };
  auto result = std::make_pair(reduce(a), reduce(b));
  if (info_out) *info_out = std::move(info);
  return result;
}

std::pair<Tensor, Tensor> pca_reduce_rows(const Tensor& a, const Tensor& b, std::size_t dims,
                                          PcaInfo* info_out) {
  require(a.ndims() == 2 && b.ndims() == 2 && a.dim(1) == b.dim(1), "pca_reduce_rows: need [N,C] tensors");
  const std::size_t c = a.dim(1);
  require(dims >= 1 && dims <= c, "pca_reduce_rows: dims exceed channels");
  Eigen::MatrixXd samples = nonzero_rows(a.data(), a.dim(0), b.data(), b.dim(0), c);
  require(samples.rows() > 0, "pca_reduce_rows: both tensors are entirely zero");
  PcaInfo info = fit_pca(samples, dims);
  const auto d = static_cast<std::uint32_t>(info.dims);
  Tensor ra({a.dim(0), d}, project_rows(a.data(), a.dim(0), c, info.basis));
  Tensor rb({b.dim(0), d}, project_rows(b.data(), b.dim(0), c, info.basis));
  if (info_out) *info_out = std::move(info);
  return {std::move(ra), std::move(rb)};
}

}  // namespace unipose
