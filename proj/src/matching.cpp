#include "unipose/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unipose/error.hpp"

namespace unipose {

namespace {

bool valid_at(const PatchMask& mask, std::size_t i) { return mask.empty() || mask[i]; }

std::vector<double> row_norms(const FeatureMap& fm) {
  std::vector<double> norms(fm.num_patches());
  for (std::size_t p = 0; p < norms.size(); ++p) {
    double sq = 0.0;
    for (float v : fm.patch(p)) sq += double(v) * double(v);
    norms[p] = std::sqrt(sq);
  }
  return norms;
}

std::size_t best_reference(const ScoreMatrix& s, std::size_t p, const PatchMask& reference_valid) {
  std::size_t best = s.cols;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < s.cols; ++q) {
    if (!valid_at(reference_valid, q)) continue;
    if (s(p, q) > best_val) {
      best_val = s(p, q);
      best = q;
    }
  }
  return best;
}

double cosine(const float* a, const float* b, std::size_t c, double na, double nb) {
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < c; ++k) dot += double(a[k]) * double(b[k]);
  return dot / (na * nb);
}

}  // namespace

ScoreMatrix score_matrix(const FeatureMap& target, const FeatureMap& reference) {
  require(target.channels == reference.channels, "score_matrix: channel mismatch");
  ScoreMatrix s;
  s.rows = target.num_patches();
  s.cols = reference.num_patches();
  s.values.assign(s.rows * s.cols, 0.0);
  const std::vector<double> nt = row_norms(target);
  const std::vector<double> nr = row_norms(reference);
  const std::size_t c = target.channels;
  for (std::size_t p = 0; p < s.rows; ++p) {
    if (nt[p] == 0.0) continue;
    const float* a = target.values.data().data() + p * c;
    double* out = s.values.data() + p * s.cols;
    for (std::size_t q = 0; q < s.cols; ++q)
      out[q] = cosine(a, reference.values.data().data() + q * c, c, nt[p], nr[q]);
  }
  return s;
}

std::vector<double> cyclical_distances(const ScoreMatrix& s, GridShape target_grid,
                                       const PatchMask& target_valid, const PatchMask& reference_valid) {
  require(target_grid.h * target_grid.w == s.rows, "cyclical_distances: grid does not match score rows");
  require(target_valid.empty() || target_valid.size() == s.rows, "target mask size mismatch");
  require(reference_valid.empty() || reference_valid.size() == s.cols, "reference mask size mismatch");

  // Column-wise argmax over valid targets, computed once.
  std::vector<std::size_t> back(s.cols, s.rows);
  std::vector<double> back_val(s.cols, -std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < s.rows; ++p) {
    if (!valid_at(target_valid, p)) continue;
    for (std::size_t q = 0; q < s.cols; ++q) {
      if (s(p, q) > back_val[q]) {
        back_val[q] = s(p, q);
        back[q] = p;
      }
    }
  }

  std::vector<double> d(s.rows, std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < s.rows; ++p) {
    if (!valid_at(target_valid, p)) continue;
    const std::size_t q = best_reference(s, p, reference_valid);
    if (q == s.cols) continue;
    const std::size_t pp = back[q];
    const double dr = double(p / target_grid.w) - double(pp / target_grid.w);
    const double dc = double(p % target_grid.w) - double(pp % target_grid.w);
    d[p] = std::sqrt(dr * dr + dc * dc);
  }
  return d;
}

CorrespondenceSet select_correspondences(const ScoreMatrix& s, const std::vector<double>& cyc, int m,
                                         const PatchMask& target_valid, const PatchMask& reference_valid) {
  require(m > 0, "select_correspondences: m must be positive");
  require(cyc.size() == s.rows, "select_correspondences: distance vector size mismatch");
  CorrespondenceSet all;
  for (std::size_t p = 0; p < s.rows; ++p) {
    if (!valid_at(target_valid, p) || !std::isfinite(cyc[p])) continue;
    const std::size_t q = best_reference(s, p, reference_valid);
    if (q == s.cols) continue;
    all.push_back({p, q, s(p, q), cyc[p]});
  }
  const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(m));
  auto order = [](const Correspondence& a, const Correspondence& b) {
    if (a.cyc != b.cyc) return a.cyc < b.cyc;
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.p < b.p;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), order);
  all.resize(keep);
  return all;
}

CorrespondenceSet match_valid_patches(const FeatureMap& target, const FeatureMap& reference,
                                      const PatchMask& target_valid, const PatchMask& reference_valid, int m) {
  require(target.channels == reference.channels, "match_valid_patches: channel mismatch");
  require(m > 0, "match_valid_patches: m must be positive");
  require(target_valid.empty() || target_valid.size() == target.num_patches(), "target mask size mismatch");
  require(reference_valid.empty() || reference_valid.size() == reference.num_patches(), "reference mask size mismatch");
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  for (std::size_t p = 0; p < target.num_patches(); ++p)
    if (valid_at(target_valid, p)) rows.push_back(p);
  for (std::size_t q = 0; q < reference.num_patches(); ++q)
    if (valid_at(reference_valid, q)) cols.push_back(q);
  if (rows.empty() || cols.empty()) return {};

  const std::vector<double> nt = row_norms(target);
  const std::vector<double> nr = row_norms(reference);
  const std::size_t c = target.channels;
  ScoreMatrix s;
  s.rows = rows.size();
  s.cols = cols.size();
  s.values.resize(s.rows * s.cols);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const float* a = target.values.data().data() + rows[i] * c;
    for (std::size_t j = 0; j < s.cols; ++j)
      s.values[i * s.cols + j] = cosine(a, reference.values.data().data() + cols[j] * c, c, nt[rows[i]], nr[cols[j]]);
  }

  // Compaction preserves index order, so lowest-index tie-breaking and the
  // (cyc, -sim, p) ordering carry over unchanged.
  std::vector<double> cyc(s.rows);
  std::vector<std::size_t> back(s.cols, 0);
  for (std::size_t j = 0; j < s.cols; ++j)
    for (std::size_t i = 1; i < s.rows; ++i)
      if (s(i, j) > s(back[j], j)) back[j] = i;
  CorrespondenceSet all;
  all.reserve(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const std::size_t j = best_reference(s, i, {});
    const std::size_t p = rows[i];
    const std::size_t pp = rows[back[j]];
    const double dr = double(p / target.grid_w) - double(pp / target.grid_w);
    const double dc = double(p % target.grid_w) - double(pp % target.grid_w);
    all.push_back({p, cols[j], s(i, j), std::sqrt(dr * dr + dc * dc)});
  }
  const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(m));
  auto order = [](const Correspondence& a, const Correspondence& b) {
    if (a.cyc != b.cyc) return a.cyc < b.cyc;
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.p < b.p;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), order);
  all.resize(keep);
  return all;
}

double view_confidence(const CorrespondenceSet& c) {
  if (c.empty()) return -1.0;
  double sum = 0.0;
  for (const auto& x : c) sum += x.sim;
  return sum / double(c.size());
}

}  // namespace unipose
