#include "unipose/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "unipose/error.hpp"

namespace unipose {

void validate(const OrientedBox& b) {
  validate(b.pose);
  require(b.extents.allFinite() && (b.extents.array() > 0.0).all(), "box extents must be positive");
}

namespace {

struct BoxTest {
  SimilarityTransform to_local;
  Vec3 half;
  bool contains(const Vec3& p) const { return (to_local.apply(p).cwiseAbs().array() <= half.array()).all(); }
};

BoxTest box_test(const OrientedBox& b) { return {invert(b.pose), 0.5 * b.extents}; }

void extend_bounds(const OrientedBox& b, Vec3& lo, Vec3& hi) {
  for (int i = 0; i < 8; ++i) {
    const Vec3 c((i & 1 ? 0.5 : -0.5) * b.extents.x(), (i & 2 ? 0.5 : -0.5) * b.extents.y(),
                 (i & 4 ? 0.5 : -0.5) * b.extents.z());
    const Vec3 w = b.pose.apply(c);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
}

double percent(std::size_t hits, std::size_t n) {
  return n == 0 ? 0.0 : std::round(10000.0 * double(hits) / double(n)) / 100.0;
}

}  // namespace

double iou3d(const OrientedBox& a, const OrientedBox& b, std::size_t samples, std::uint64_t seed) {
  validate(a);
  validate(b);
  require(samples > 0, "iou3d: samples must be positive");
  if (a.pose.r == b.pose.r && a.pose.t == b.pose.t && a.pose.s == b.pose.s && a.extents == b.extents) return 1.0;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  extend_bounds(a, lo, hi);
  extend_bounds(b, lo, hi);
  const BoxTest ta = box_test(a), tb = box_test(b);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec3 p(lo.x() + u01(rng) * (hi.x() - lo.x()), lo.y() + u01(rng) * (hi.y() - lo.y()),
                 lo.z() + u01(rng) * (hi.z() - lo.z()));
    const bool in_a = ta.contains(p), in_b = tb.contains(p);
    both += (in_a && in_b) ? 1 : 0;
    either += (in_a || in_b) ? 1 : 0;
  }
  return either == 0 ? 0.0 : double(both) / double(either);
}

const std::vector<std::string>& known_categories() {
  static const std::vector<std::string> names = {"bottle", "bowl", "camera", "can", "laptop", "mug"};
  return names;
}

SymmetrySpec symmetry_for_category(const std::string& category) {
  static const std::array<const char*, 4> symmetric = {"bottle", "bowl", "can", "mug"};
  for (const char* s : symmetric)
    if (category == s) return {SymmetryKind::kContinuousUp};
  return {SymmetryKind::kNone};
}

PoseError pose_error(const SimilarityTransform& pred, const SimilarityTransform& gt, const SymmetrySpec& sym) {
  PoseError e;
  if (sym.kind == SymmetryKind::kContinuousUp) {
    // Spinning pred about its up axis can align everything except the up axes
    // themselves, so the minimum geodesic is the angle between them.
    const Vec3 a = pred.r.col(1), b = gt.r.col(1);
    e.rot_deg = std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / M_PI;
  } else {
    e.rot_deg = rotation_geodesic_deg(pred.r, gt.r);
  }
  e.trans_cm = 100.0 * (pred.t - gt.t).norm();
  return e;
}

AccuracyTable accuracy_table(const std::vector<EvalRecord>& records) {
  AccuracyTable t;
  t.count = records.size();
  std::size_t i25 = 0, i50 = 0, a52 = 0, a55 = 0, a102 = 0, a105 = 0;
  for (const auto& r : records) {
    i25 += r.iou >= 0.25;
    i50 += r.iou >= 0.5;
    a52 += r.error.rot_deg < 5.0 && r.error.trans_cm < 2.0;
    a55 += r.error.rot_deg < 5.0 && r.error.trans_cm < 5.0;
    a102 += r.error.rot_deg < 10.0 && r.error.trans_cm < 2.0;
    a105 += r.error.rot_deg < 10.0 && r.error.trans_cm < 5.0;
  }
  t.iou25 = percent(i25, t.count);
  t.iou50 = percent(i50, t.count);
  t.deg5_cm2 = percent(a52, t.count);
  t.deg5_cm5 = percent(a55, t.count);
  t.deg10_cm2 = percent(a102, t.count);
  t.deg10_cm5 = percent(a105, t.count);
  return t;
}

std::string format_accuracy_table(const AccuracyTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s %6s\n%8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %6zu\n",
                "IOU_0.25", "IOU_0.5", "5d2cm", "5d5cm", "10d2cm", "10d5cm", "n", t.iou25, t.iou50, t.deg5_cm2,
                t.deg5_cm5, t.deg10_cm2, t.deg10_cm5, t.count);
  return buf;
}

}  // namespace unipose
