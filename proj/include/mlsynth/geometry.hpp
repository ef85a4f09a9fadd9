#pragma once
#include <vector>

#include "mlsynth/model.hpp"

namespace mlsynth {

// {y : (y - center)^T shape^{-1} (y - center) <= 1}
struct Ellipsoid {
  Vec center;
  Mat shape;

  bool axis_aligned() const;
  Vec half_widths() const { return shape.diagonal().cwiseSqrt(); }
  Box bounding_box() const;
};

// Image under C of the state ellipsoid {x : |x - c|_D <= radius}.
Ellipsoid output_ellipsoid(const Mat& C, const Mat& D, const Vec& x_center, double radius);

// Exact for axis-aligned ellipsoids. Otherwise the bounding box is used,
// which over-approximates intersection; `allow_bbox` must then be set.
bool intersects(const Ellipsoid& e, const Box& b, bool allow_bbox);
// Sound in every case: exact for axis-aligned ellipsoids, via bounding box otherwise.
bool contained_in(const Ellipsoid& e, const Box& b);
bool disjoint(const Ellipsoid& e, const Box& b);

// Letters that some point of the ellipsoid may carry. May contain extra
// letters; never misses one.
std::vector<Letter> achievable_letters(const Ellipsoid& e, const LabelMap& labels, bool allow_bbox);

// Single letter shared by every point of the ellipsoid, or -1 when the
// ellipsoid straddles a region boundary.
long uniform_letter(const Ellipsoid& e, const LabelMap& labels);

double d_norm(const Vec& v, const Mat& D);

}  // namespace mlsynth
