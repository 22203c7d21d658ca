#pragma once

// Category-level pose metrics: Monte-Carlo 3D IoU of oriented boxes,
// rotation/translation error with continuous symmetry about the up axis, and
// thresholded accuracy tables.

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/geometry.hpp"

namespace unipose {

// Box of size pose.s * extents, centred on the model origin and posed by `pose`.
struct OrientedBox {
  SimilarityTransform pose;
  Vec3 extents = Vec3::Ones();  // canonical units
};

void validate(const OrientedBox& b);

// Fraction of `samples` uniform points in the union's bounding box that lie in
// both boxes over those in either. Identical boxes return exactly 1.
double iou3d(const OrientedBox& a, const OrientedBox& b, std::size_t samples = 100000, std::uint64_t seed = 0);

enum class SymmetryKind { kNone, kContinuousUp };

struct SymmetrySpec {
  SymmetryKind kind = SymmetryKind::kNone;
};

// bottle, bowl, can and mug are symmetric about the canonical up axis (+y);
// everything else, including unknown names, is not.
SymmetrySpec symmetry_for_category(const std::string& category);
const std::vector<std::string>& known_categories();

struct PoseError {
  double rot_deg = 0.0;
  double trans_cm = 0.0;
};

PoseError pose_error(const SimilarityTransform& pred, const SimilarityTransform& gt, const SymmetrySpec& sym);

struct EvalRecord {
  PoseError error;
  double iou = 0.0;
};

struct AccuracyTable {
  std::size_t count = 0;
  // Percentages rounded to two decimals.
  double iou25 = 0.0;
  double iou50 = 0.0;
  double deg5_cm2 = 0.0;
  double deg5_cm5 = 0.0;
  double deg10_cm2 = 0.0;
  double deg10_cm5 = 0.0;
};

// IoU columns use iou >= threshold; pose columns use rot < n and trans < m.
AccuracyTable accuracy_table(const std::vector<EvalRecord>& records);

// Header plus one aligned row.
std::string format_accuracy_table(const AccuracyTable& t);

}  // namespace unipose
