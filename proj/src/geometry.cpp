#include "mlsynth/geometry.hpp"

#include <algorithm>

#include "mlsynth/errors.hpp"

namespace mlsynth {

bool Ellipsoid::axis_aligned() const {
  Mat off = shape;
  off.diagonal().setZero();
  return off.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, shape.cwiseAbs().maxCoeff());
}

Box Ellipsoid::bounding_box() const {
  Vec h = half_widths();
  Box b;
  b.low = center - h;
  b.high = center + h;
  return b;
}

Ellipsoid output_ellipsoid(const Mat& C, const Mat& D, const Vec& x_center, double radius) {
  Ellipsoid e;
  e.center = C * x_center;
  e.shape = radius * radius * C * D.ldlt().solve(C.transpose());
  return e;
}

bool intersects(const Ellipsoid& e, const Box& b, bool allow_bbox) {
  if (!e.axis_aligned()) {
    if (!allow_bbox)
      throw ConfigError("non-diagonal weighting needs the bounding-box fallback to be enabled");
    Box bb = e.bounding_box();
    return (bb.low.array() <= b.high.array()).all() && (bb.high.array() >= b.low.array()).all();
  }
  Vec h = e.half_widths();
  double s = 0.0;
  for (int d = 0; d < e.center.size(); ++d) {
    double c = std::clamp(e.center[d], b.low[d], b.high[d]);
    double diff = c - e.center[d];
    if (diff == 0.0) continue;
    if (h[d] == 0.0) return false;
    s += (diff / h[d]) * (diff / h[d]);
  }
  return s <= 1.0 + 1e-12;
}

bool contained_in(const Ellipsoid& e, const Box& b) {
  Box bb = e.bounding_box();
  return (bb.low.array() >= b.low.array()).all() && (bb.high.array() <= b.high.array()).all();
}

bool disjoint(const Ellipsoid& e, const Box& b) {
  if (e.axis_aligned()) return !intersects(e, b, false);
  Box bb = e.bounding_box();
  return !((bb.low.array() <= b.high.array()).all() && (bb.high.array() >= b.low.array()).all());
}

std::vector<Letter> achievable_letters(const Ellipsoid& e, const LabelMap& labels, bool allow_bbox) {
  std::vector<int> touched;
  for (std::size_t r = 0; r < labels.regions.size(); ++r)
    if (intersects(e, labels.regions[r].box, allow_bbox)) touched.push_back(static_cast<int>(r));
  const Box bb = e.bounding_box();
  std::vector<Letter> out;
  const std::size_t n = touched.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    Box meet = bb;
    bool empty = false;
    Letter l = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (!(mask >> k & 1)) continue;
      const Region& reg = labels.regions[touched[k]];
      l |= Letter{1} << labels.bit_of(reg.name);
      meet.low = meet.low.cwiseMax(reg.box.low);
      meet.high = meet.high.cwiseMin(reg.box.high);
      if ((meet.low.array() > meet.high.array()).any()) {
        empty = true;
        break;
      }
      if (!intersects(e, meet, true) && e.axis_aligned()) {
        empty = true;
        break;
      }
    }
    if (empty) continue;
    // a region outside the letter that covers the whole candidate area forbids it
    bool forced = false;
    for (std::size_t k = 0; k < n && !forced; ++k) {
      if (mask >> k & 1) continue;
      const Box& rb = labels.regions[touched[k]].box;
      if ((meet.low.array() >= rb.low.array()).all() && (meet.high.array() <= rb.high.array()).all()) forced = true;
    }
    if (!forced) out.push_back(l);
  }
  return out;
}

long uniform_letter(const Ellipsoid& e, const LabelMap& labels) {
  Letter l = 0;
  for (const auto& r : labels.regions) {
    if (contained_in(e, r.box))
      l |= Letter{1} << labels.bit_of(r.name);
    else if (!disjoint(e, r.box))
      return -1;
  }
  return static_cast<long>(l);
}

double d_norm(const Vec& v, const Mat& D) { return std::sqrt(std::max(0.0, v.dot(D * v))); }

}  // namespace mlsynth
