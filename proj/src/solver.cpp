#include "unipose/solver.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/SVD>

#include "unipose/error.hpp"

namespace unipose {

SimilarityTransform umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) fail(ErrorKind::kValidation, "umeyama: point counts differ");
  const std::size_t n = src.size();
  if (n < 3) fail(ErrorKind::kDegenerate, "umeyama: need at least 3 correspondences");

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= double(n);
  mu_d /= double(n);

  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = src[i] - mu_s;
    const Vec3 b = dst[i] - mu_d;
    cov += b * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= double(n);
  var_s /= double(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (!(var_s > 0.0) || d[1] <= 1e-12 * std::max(d[0], 1e-300)) {
    fail(ErrorKind::kDegenerate, "umeyama: degenerate (collinear or coincident) configuration");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 sign(1.0, 1.0, 1.0);
  if (u.determinant() * v.determinant() < 0.0) sign[2] = -1.0;

  SimilarityTransform x;
  x.r = u * sign.asDiagonal() * v.transpose();
  x.s = d.dot(sign) / var_s;
  x.t = mu_d - x.s * (x.r * mu_s);
  return x;
}

SimilarityTransform umeyama(const PointCloud& src, const PointCloud& dst) { return umeyama(src.points, dst.points); }

void validate(const RansacConfig& cfg) {
  require(cfg.max_iters >= 1, "ransac: max_iters must be >= 1");
  require(cfg.sample_size >= 3, "ransac: sample_size must be >= 3");
  require(cfg.inlier_threshold_rel > 0.0, "ransac: inlier threshold must be positive");
  require(cfg.confidence_stop > 0.0 && cfg.confidence_stop <= 1.0, "ransac: confidence_stop must be in (0, 1]");
}

namespace {

// Unbiased index in [0, n) from the 64-bit engine; avoids the
// implementation-defined std::uniform_int_distribution.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::size_t count_inliers(const SimilarityTransform& x, const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                          double thr2, std::vector<bool>* flags) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const bool in = (dst[i] - x.apply(src[i])).squaredNorm() <= thr2;
    if (flags) (*flags)[i] = in;
    count += in ? 1 : 0;
  }
  return count;
}

}  // namespace

RobustFitResult ransac_umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const RansacConfig& cfg) {
  validate(cfg);
  require(src.size() == dst.size(), "ransac: point counts differ");
  const std::size_t n = src.size();
  const auto k = static_cast<std::size_t>(cfg.sample_size);
  if (n < k) fail(ErrorKind::kValidation, "ransac: fewer correspondences than sample_size");

  const double thr = cfg.inlier_threshold_rel * bounding_box(dst).diagonal();
  const double thr2 = thr * thr;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> sample(k);
  std::vector<Vec3> s_src(k), s_dst(k);

  std::size_t best_count = 0;
  SimilarityTransform best;
  bool have_best = false;
  double needed = double(cfg.max_iters);
  int it = 0;
  for (; it < cfg.max_iters && double(it) < needed; ++it) {
    // Partial Fisher-Yates without materialising the index array.
    for (std::size_t j = 0; j < k; ++j) {
      bool fresh;
      do {
        sample[j] = uniform_index(rng, n);
        fresh = std::find(sample.begin(), sample.begin() + j, sample[j]) == sample.begin() + j;
      } while (!fresh);
      s_src[j] = src[sample[j]];
      s_dst[j] = dst[sample[j]];
    }
    SimilarityTransform hyp;
    try {
      hyp = umeyama(s_src, s_dst);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDegenerate) continue;
      throw;
    }
    const std::size_t c = count_inliers(hyp, src, dst, thr2, nullptr);
    if (c > best_count) {
      best_count = c;
      best = hyp;
      have_best = true;
      const double w = double(c) / double(n);
      const double p_fail = 1.0 - std::pow(w, double(k));
      if (p_fail <= 0.0) {
        needed = 0.0;
      } else if (p_fail < 1.0) {
        needed = std::log(1.0 - cfg.confidence_stop) / std::log(p_fail);
      }
    }
  }
  if (!have_best || best_count < k) fail(ErrorKind::kNoConsensus, "ransac: no hypothesis reached sample_size inliers");

  RobustFitResult out;
  out.iterations = it;
  out.inliers.assign(n, false);
  count_inliers(best, src, dst, thr2, &out.inliers);
  std::vector<Vec3> in_src, in_dst;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.inliers[i]) continue;
    in_src.push_back(src[i]);
    in_dst.push_back(dst[i]);
  }
  out.inlier_count = in_src.size();
  try {
    out.transform = umeyama(in_src, in_dst);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerate) throw;
    out.transform = best;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < in_src.size(); ++i) sq += (in_dst[i] - out.transform.apply(in_src[i])).squaredNorm();
  out.rms_inlier_error = std::sqrt(sq / double(in_src.size()));
  return out;
}

}  // namespace unipose
