#pragma once
#include <vector>

#include "mlsynth/model.hpp"

namespace mlsynth {

struct LayerSpec {
  std::vector<double> eps;
  Mat delta;  // delta(i, j): cost of moving from layer i to layer j
  Mat D;
  Mat K;      // interface gain, u = u_hat + K (x - x_hat)
  std::vector<std::vector<Mat>> F;
  Mat lambda;

  int n_layers() const { return static_cast<int>(eps.size()); }
};

struct DeltaResult {
  double delta = 0.0;
  Mat F;
  double lambda = 0.0;
};

Mat weighting_matrix(const Mat& C, double shift = 1e-6);

double shift_radius(double delta);

// Both matrix inequalities positive semidefinite for every beta vertex.
bool check_feasibility(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j, double delta,
                       const std::vector<Vec>& beta_vertices, const Mat& F, double lambda, const Mat& K = Mat());

// Largest smallest-eigenvalue of the contraction block over lambda in (0, alpha^2).
// Returns the best lambda and writes the margin.
double best_lambda(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j,
                   const std::vector<Vec>& beta_vertices, const Mat& F, const Mat& K, double* margin);

DeltaResult min_delta(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j, const Box& beta_box,
                      const Mat& K = Mat());

LayerSpec layer_matrix(const LtiGmdp& model, const Mat& D, const std::vector<double>& eps, const Box& beta_box,
                       const Mat& K = Mat());

}  // namespace mlsynth
