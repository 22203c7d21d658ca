#pragma once

// Dense patch matching: cosine score matrix, cyclical (round-trip) distance
// and Top-M correspondence selection.

#include <cstddef>
#include <vector>

#include "unipose/tensor.hpp"

namespace unipose {

// Row-major [rows = target patches, cols = reference patches]. Stored in
// double so ranking ties are resolved on exact values.
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t p, std::size_t q) const { return values[p * cols + q]; }
};

struct GridShape {
  std::size_t h = 0;
  std::size_t w = 0;
};

struct Correspondence {
  std::size_t p = 0;  // target patch
  std::size_t q = 0;  // reference patch
  double sim = 0.0;
  double cyc = 0.0;  // patch-grid units
};

using CorrespondenceSet = std::vector<Correspondence>;

// Per-patch validity flags; an empty vector means "all valid".
using PatchMask = std::vector<bool>;

// Cosine similarity for every (target, reference) patch pair. Zero vectors
// score 0 against everything.
ScoreMatrix score_matrix(const FeatureMap& target, const FeatureMap& reference);

// For each target patch p: q* = argmax_q S(p, q), p' = argmax_p'' S(p'', q*),
// D_p = grid distance between p and p'. Ties go to the lowest index. Invalid
// patches are skipped in both argmaxes; invalid targets get +inf.
std::vector<double> cyclical_distances(const ScoreMatrix& s, GridShape target_grid,
                                       const PatchMask& target_valid = {},
                                       const PatchMask& reference_valid = {});

// The m valid target patches with the smallest cyclical distance, each paired
// with its best reference patch, ordered by (cyc, -sim, p).
CorrespondenceSet select_correspondences(const ScoreMatrix& s, const std::vector<double>& cyc, int m,
                                         const PatchMask& target_valid = {},
                                         const PatchMask& reference_valid = {});

// score_matrix + cyclical_distances + select_correspondences restricted to
// the valid patches of both maps. Scores only valid rows and columns, so it is
// much cheaper when masks are sparse; the result is identical to the dense
// path with the same masks.
CorrespondenceSet match_valid_patches(const FeatureMap& target, const FeatureMap& reference,
                                      const PatchMask& target_valid, const PatchMask& reference_valid, int m);

// Mean similarity of the set; -1 for an empty set.
double view_confidence(const CorrespondenceSet& c);

}  // namespace unipose
