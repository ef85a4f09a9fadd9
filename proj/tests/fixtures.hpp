#pragma once
#include <cmath>

#include "mlsynth/model.hpp"

namespace fixtures {

using mlsynth::Box;
using mlsynth::LtiGmdp;
using mlsynth::Mat;
using mlsynth::Vec;

inline Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline Box box2(double x0, double x1, double y0, double y1) { return Box(v2(x0, y0), v2(x1, y1)); }

inline LtiGmdp make_model(double a, double b, double bw, Box state, Box input, double cov = 1.0) {
  LtiGmdp m;
  m.A = a * Mat::Identity(2, 2);
  m.B = b * Mat::Identity(2, 2);
  m.Bw = bw * Mat::Identity(2, 2);
  m.C = Mat::Identity(2, 2);
  m.state_box = state;
  m.input_box = input;
  m.noise_mean = Vec::Zero(2);
  m.noise_cov = cov * Mat::Identity(2, 2);
  m.x0 = state.center();
  return m;
}

// x+ = 0.9x + 0.5u + 0.5w on [-20,5]^2, inputs [-5,5]^2
inline LtiGmdp running_example() { return make_model(0.9, 0.5, 0.5, box2(-20, 5, -20, 5), box2(-5, 5, -5, 5)); }

// same dynamics on [-5,5]^2 with inputs [-1.25,1.25]^2
inline LtiGmdp running_example_a() {
  return make_model(0.9, 0.5, 0.5, box2(-5, 5, -5, 5), box2(-1.25, 1.25, -1.25, 1.25));
}

// unit noise gain, covariance 0.5
inline LtiGmdp carpark() { return make_model(0.9, 0.5, 1.0, box2(-5, 5, -5, 5), box2(-1, 1, -1, 1), 0.5); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace fixtures
