#include "mlsynth/simrel.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "mlsynth/errors.hpp"

namespace mlsynth {

namespace {

constexpr double kPsdTol = -1e-9;

double min_eig(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Mat gain_or_zero(const LtiGmdp& model, const Mat& K) {
  if (K.size() == 0) return Mat::Zero(model.nu(), model.nx());
  require(K.rows() == model.nu() && K.cols() == model.nx(), "interface gain must be nu x nx");
  return K;
}

double input_margin(const Mat& D, double eps_i, double r, const Mat& F) {
  const int nx = static_cast<int>(D.rows());
  const int nw = static_cast<int>(F.rows());
  Mat M = Mat::Zero(nx + nw, nx + nw);
  M.topLeftCorner(nx, nx) = D / (eps_i * eps_i);
  M.bottomLeftCorner(nw, nx) = F;
  M.topRightCorner(nx, nw) = F.transpose();
  M.bottomRightCorner(nw, nw) = r * r * Mat::Identity(nw, nw);
  return min_eig(M);
}

double contraction_margin(const Mat& D, const Mat& Acl, double eps_i, double alpha, double lambda,
                          const std::vector<Vec>& betas) {
  const int n = static_cast<int>(D.rows());
  double worst = INFINITY;
  Mat M = Mat::Zero(2 * n + 1, 2 * n + 1);
  const Mat DA = D * Acl;
  M.topLeftCorner(n, n) = lambda * D;
  M(n, n) = (alpha * alpha - lambda) * eps_i * eps_i;
  M.block(n + 1, 0, n, n) = DA;
  M.block(0, n + 1, n, n) = DA.transpose();
  M.bottomRightCorner(n, n) = D;
  for (const Vec& b : betas) {
    Vec Db = D * b;
    M.block(n + 1, n, n, 1) = Db;
    M.block(n, n + 1, 1, n) = Db.transpose();
    worst = std::min(worst, min_eig(M));
  }
  return worst;
}

std::vector<Vec> box_vertices(const Box& b) {
  require(b.low.size() <= 12, "offset box vertex enumeration is capped at 12 dimensions");
  const int n = static_cast<int>(b.low.size());
  std::vector<Vec> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    Vec v(n);
    for (int d = 0; d < n; ++d) v[d] = (mask >> d) & 1 ? b.high[d] : b.low[d];
    out.push_back(v);
  }
  return out;
}

bool scalar_multiple_of_identity(const Mat& M) {
  if (M.rows() != M.cols()) return false;
  return (M - M(0, 0) * Mat::Identity(M.rows(), M.cols())).cwiseAbs().maxCoeff() <= 1e-14;
}

}  // namespace

Mat weighting_matrix(const Mat& C, double shift) {
  const int n = static_cast<int>(C.cols());
  Mat CtC = C.transpose() * C;
  Mat pinv = C.completeOrthogonalDecomposition().pseudoInverse();
  Mat D = CtC + shift * (Mat::Identity(n, n) - pinv * C);
  D = 0.5 * (D + D.transpose());
  if (min_eig(D - CtC) < -1e-12 || min_eig(D) <= 0.0)
    throw ContractViolation("weighting matrix failed the ordering check");
  return D;
}

double shift_radius(double delta) {
  if (!(delta >= 0.0) || delta >= 1.0) throw DomainError("shift radius needs delta in [0, 1)");
  if (delta == 0.0) return 0.0;
  boost::math::normal_distribution<double> n01;
  return std::abs(2.0 * boost::math::quantile(n01, (1.0 - delta) / 2.0));
}

bool check_feasibility(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j, double delta,
                       const std::vector<Vec>& beta_vertices, const Mat& F, double lambda, const Mat& K) {
  const double alpha = eps_j / eps_i;
  if (!(lambda > 0.0) || lambda >= alpha * alpha) return false;
  const Mat Kx = gain_or_zero(model, K);
  const Mat G = model.whitened_noise_gain();
  double r;
  try {
    r = shift_radius(delta);
  } catch (const DomainError&) {
    return false;
  }
  if (input_margin(D, eps_i, r, F) < kPsdTol) return false;
  const Mat Acl = model.A + model.B * Kx + G * F;
  return contraction_margin(D, Acl, eps_i, alpha, lambda, beta_vertices) >= kPsdTol;
}

double best_lambda(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j,
                   const std::vector<Vec>& betas, const Mat& F, const Mat& K, double* margin) {
  const double alpha = eps_j / eps_i;
  const Mat Acl = model.A + model.B * gain_or_zero(model, K) + model.whitened_noise_gain() * F;
  auto f = [&](double lam) { return contraction_margin(D, Acl, eps_i, alpha, lam, betas); };
  const int n_pts = 64;
  const double lo = std::log(1e-6), hi = std::log(alpha * alpha * (1.0 - 1e-9));
  std::vector<double> lam(n_pts), val(n_pts);
  int best = 0;
  for (int k = 0; k < n_pts; ++k) {
    lam[k] = std::exp(lo + (hi - lo) * k / (n_pts - 1));
    val[k] = f(lam[k]);
    if (val[k] > val[best]) best = k;
  }
  double a = lam[std::max(0, best - 1)], b = lam[std::min(n_pts - 1, best + 1)];
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 60 && (b - a) > 1e-12 * b; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  double l_best = lam[best], v_best = val[best];
  if (fc > v_best) l_best = c, v_best = fc;
  if (fd > v_best) l_best = d, v_best = fd;
  if (margin) *margin = v_best;
  return l_best;
}

DeltaResult min_delta(const LtiGmdp& model, const Mat& D, double eps_i, double eps_j, const Box& beta_box,
                      const Mat& K) {
  require(eps_i > 0.0 && eps_j > 0.0, "layer radii must be positive");
  const auto betas = box_vertices(beta_box);
  const Mat Kx = gain_or_zero(model, K);
  const Mat G = model.whitened_noise_gain();
  const Mat Abar = model.A + model.B * Kx;
  // shift direction cancelling as much of the closed-loop drift as the noise channel allows
  const Mat F0 = -G.completeOrthogonalDecomposition().pseudoInverse() * Abar;
  const bool isotropic = scalar_multiple_of_identity(Abar) && scalar_multiple_of_identity(G) &&
                         scalar_multiple_of_identity(D);
  // largest scale c such that c*F0 passes the input bound for radius r
  Eigen::SelfAdjointEigenSolver<Mat> es(D);
  const Mat D_inv_half = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                         es.eigenvectors().transpose();
  const double f0_norm = (F0 * D_inv_half).norm() > 0 ? Eigen::JacobiSVD<Mat>(F0 * D_inv_half).singularValues()(0) : 0.0;

  auto attempt = [&](double delta, DeltaResult* out) {
    const double r = shift_radius(delta);
    const double c_max = f0_norm > 0 ? std::min(1.0, r / (eps_i * f0_norm)) : 0.0;
    std::vector<double> scales{c_max};
    if (!isotropic)
      for (int k = 0; k < 16; ++k) scales.push_back(c_max * k / 16.0);
    for (double c : scales) {
      Mat F = c * F0;
      if (input_margin(D, eps_i, r, F) < kPsdTol) continue;
      double margin = 0.0;
      double lam = best_lambda(model, D, eps_i, eps_j, betas, F, Kx, &margin);
      if (margin >= kPsdTol) {
        if (out) *out = DeltaResult{delta, F, lam};
        return true;
      }
    }
    return false;
  };

  DeltaResult res;
  if (attempt(0.0, &res)) return res;
  double hi = 1.0 - 1e-9;
  if (!attempt(hi, &res))
    throw InfeasibleError("no feasible deviation for eps " + std::to_string(eps_i) + " -> " + std::to_string(eps_j) +
                          "; the offset box may be too large for these radii");
  double lo = 0.0;
  while (hi - lo > 1e-4) {
    double mid = 0.5 * (lo + hi);
    DeltaResult r;
    if (attempt(mid, &r)) {
      hi = mid;
      res = r;
    } else {
      lo = mid;
    }
  }
  return res;
}

LayerSpec layer_matrix(const LtiGmdp& model, const Mat& D, const std::vector<double>& eps, const Box& beta_box,
                       const Mat& K) {
  const int n = static_cast<int>(eps.size());
  LayerSpec L;
  L.eps = eps;
  L.D = D;
  L.K = gain_or_zero(model, K);
  L.delta = Mat::Zero(n, n);
  L.lambda = Mat::Zero(n, n);
  L.F.assign(n, std::vector<Mat>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      DeltaResult r = min_delta(model, D, eps[i], eps[j], beta_box, K);
      L.delta(i, j) = r.delta;
      L.F[i][j] = r.F;
      L.lambda(i, j) = r.lambda;
    }
  return L;
}

}  // namespace mlsynth
