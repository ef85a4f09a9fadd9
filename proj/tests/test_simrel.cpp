#include <Eigen/Eigenvalues>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "mlsynth/errors.hpp"
#include "mlsynth/grid.hpp"
#include "mlsynth/simrel.hpp"

using namespace mlsynth;
using fixtures::normal_cdf;
using fixtures::v2;

namespace {

// Inverse normal CDF by bisection on erfc, independent of the library quantile.
double inverse_normal(double p) {
  double lo = -40, hi = 40;
  for (int k = 0; k < 200; ++k) {
    double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Box sym_box(double h) { return Box(v2(-h, -h), v2(h, h)); }

std::vector<Vec> vertices(double h) { return sym_box(h).vertices(); }

}  // namespace

TEST_CASE("weighting matrix") {
  CHECK((weighting_matrix(Mat::Identity(2, 2)) - Mat::Identity(2, 2)).norm() < 1e-12);
  CHECK((weighting_matrix(2 * Mat::Identity(2, 2)) - 4 * Mat::Identity(2, 2)).norm() < 1e-12);
  Mat C(1, 2);
  C << 1, 0;
  Mat D = weighting_matrix(C);
  CHECK(D(0, 0) == doctest::Approx(1.0));
  CHECK(D(1, 1) == doctest::Approx(1e-6));
  Eigen::SelfAdjointEigenSolver<Mat> es(D - C.transpose() * C);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("shift radius") {
  CHECK(shift_radius(0.0) == 0.0);
  CHECK(shift_radius(0.1586) == doctest::Approx(std::abs(2 * inverse_normal(0.5 * (1 - 0.1586)))).epsilon(1e-9));
  CHECK(shift_radius(0.1586) == doctest::Approx(0.3999).epsilon(1e-3));
  CHECK(shift_radius(0.0160) == doctest::Approx(0.0401).epsilon(1e-3));
  CHECK_THROWS_AS(shift_radius(1.0), DomainError);
  CHECK_THROWS_AS(shift_radius(-0.1), DomainError);
  double prev = 0.0;
  for (double d = 0.01; d < 0.99; d += 0.01) {
    CHECK(shift_radius(d) > prev);
    prev = shift_radius(d);
  }
}

TEST_CASE("feasibility checks") {
  auto m = fixtures::carpark();
  Mat D = Mat::Identity(2, 2);
  auto betas = vertices(10.0 / 283);
  Mat F0 = Mat::Zero(2, 2);
  double margin = 0.0;
  double lam = best_lambda(m, D, 0.5, 0.5, betas, F0, Mat(), &margin);
  CHECK(check_feasibility(m, D, 0.5, 0.5, 0.0, betas, F0, lam));
  // lambda at or above alpha^2 leaves a nonpositive scalar block
  CHECK_FALSE(check_feasibility(m, D, 0.5, 0.2, 0.5, betas, F0, 0.16));
  CHECK_FALSE(check_feasibility(m, D, 0.5, 0.2, 0.5, betas, F0, 0.2));
  // scalar reduction for 0.5 -> 0.2 at delta = 0.168
  double r = shift_radius(0.168);
  Mat F = -(r / 0.5) * Mat::Identity(2, 2);
  lam = best_lambda(m, D, 0.5, 0.2, betas, F, Mat(), &margin);
  CHECK(check_feasibility(m, D, 0.5, 0.2, 0.168, betas, F, lam));
  CHECK_FALSE(check_feasibility(m, D, 0.5, 0.2, 0.15, betas, F, lam));
}

TEST_CASE("delta matrix of the small delivery model") {
  auto m = fixtures::running_example_a();
  Mat D = Mat::Identity(2, 2);
  Box beta = sym_box(10.0 / 283);
  auto L = layer_matrix(m, D, {0.5, 0.3}, beta);
  CHECK(L.delta(0, 0) == 0.0);
  CHECK(std::abs(L.delta(0, 1) - 0.1586) <= 1e-2);
  CHECK(std::abs(L.delta(1, 0) - 0.0) <= 1e-2);
  CHECK(std::abs(L.delta(1, 1) - 0.0160) <= 1e-2);
  // the scalar closed form: r = (a eps_i + |beta| - eps_j) / b_w
  double nb = std::sqrt(2.0) * 10.0 / 283;
  double r12 = (0.9 * 0.5 + nb - 0.3) / 0.5, r22 = (0.9 * 0.3 + nb - 0.3) / 0.5;
  CHECK(L.delta(0, 1) == doctest::Approx(2 * normal_cdf(r12 / 2) - 1).epsilon(2e-3));
  CHECK(L.delta(1, 1) == doctest::Approx(2 * normal_cdf(r22 / 2) - 1).epsilon(1e-2));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(check_feasibility(m, D, L.eps[i], L.eps[j], L.delta(i, j), vertices(10.0 / 283), L.F[i][j],
                              L.lambda(i, j)));
  CHECK(L.delta(1, 1) == min_delta(m, D, 0.3, 0.3, beta).delta);
}

TEST_CASE("delta matrix of the car park") {
  auto m = fixtures::carpark();
  auto L = layer_matrix(m, Mat::Identity(2, 2), {0.5, 0.2}, sym_box(10.0 / 283));
  CHECK(std::abs(L.delta(0, 0)) <= 1e-2);
  CHECK(std::abs(L.delta(0, 1) - 0.168) <= 1e-2);
  CHECK(std::abs(L.delta(1, 0)) <= 1e-2);
  CHECK(std::abs(L.delta(1, 1) - 0.0169) <= 1e-2);
}

TEST_CASE("single layer on the fine running example grid") {
  auto m = fixtures::running_example();
  GridAbstraction g(m, m.state_box, {568, 563}, {2, 2});
  auto r = min_delta(m, Mat::Identity(2, 2), 0.18, 0.18, g.beta_box());
  CHECK(r.delta <= 0.1217);
  GridOptions full_width;
  full_width.beta = BetaPolicy::FullWidth;
  GridAbstraction gp(m, m.state_box, {568, 563}, {2, 2}, full_width);
  CHECK(min_delta(m, Mat::Identity(2, 2), 0.18, 0.18, gp.beta_box()).delta <= 0.1217);
}

TEST_CASE("monotonicity in radius and offset size") {
  auto m = fixtures::running_example_a();
  Mat D = Mat::Identity(2, 2);
  double prev = 1.0;
  for (double ej = 0.15; ej <= 0.6; ej += 0.05) {
    double d = min_delta(m, D, 0.4, ej, sym_box(0.03)).delta;
    CHECK(d <= prev + 1e-4);
    prev = d;
  }
  prev = 0.0;
  for (double h = 0.0; h <= 0.1; h += 0.01) {
    double d = min_delta(m, D, 0.4, 0.3, sym_box(std::max(h, 1e-9))).delta;
    CHECK(d >= prev - 1e-4);
    prev = d;
  }
}

TEST_CASE("generic search on a non-isotropic model") {
  auto m = fixtures::running_example_a();
  m.A(1, 1) = 0.8;
  m.Bw(1, 1) = 0.4;
  Mat D = Mat::Identity(2, 2);
  auto r = min_delta(m, D, 0.5, 0.3, sym_box(0.03));
  CHECK(check_feasibility(m, D, 0.5, 0.3, r.delta, vertices(0.03), r.F, r.lambda));
  CHECK(r.delta > 0.0);
  CHECK(r.delta < 1.0);
  CHECK_THROWS_AS(min_delta(m, D, 0.05, 0.05, sym_box(0.2)), InfeasibleError);
}

TEST_CASE("coupled one-step simulation stays related") {
  // Maximal coupling of N(gamma, I) and N(0, I); when the draws coincide the
  // error follows the shifted closed loop.
  auto m = fixtures::running_example_a();
  Mat D = Mat::Identity(2, 2);
  const double h = 10.0 / 283, ei = 0.5, ej = 0.3;
  auto res = min_delta(m, D, ei, ej, sym_box(h));
  const Mat G = m.whitened_noise_gain();
  std::mt19937_64 rng(123);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> unif(0, 1);
  auto pdf = [](const Vec& x, const Vec& mu) { return std::exp(-0.5 * (x - mu).squaredNorm()); };
  const int runs = 20000;
  int stayed = 0;
  for (int k = 0; k < runs; ++k) {
    double ang = 2 * M_PI * unif(rng);
    Vec xd = ei * v2(std::cos(ang), std::sin(ang));
    Vec gamma = res.F * xd;
    Vec beta = v2(xd[0] >= 0 ? h : -h, xd[1] >= 0 ? h : -h);
    Vec w = v2(n01(rng), n01(rng));
    Vec wh;
    if (unif(rng) * pdf(w, Vec::Zero(2)) <= pdf(w, gamma)) {
      wh = w - gamma;
    } else {
      for (;;) {
        Vec y = v2(n01(rng), n01(rng)) + gamma;
        if (unif(rng) * pdf(y, gamma) > pdf(y, Vec::Zero(2))) {
          wh = y - gamma;
          break;
        }
      }
    }
    Vec next = m.A * xd + G * (w - wh) + beta;
    stayed += d_norm(next, D) <= ej;
  }
  double p = static_cast<double>(stayed) / runs;
  double se = std::sqrt(p * (1 - p) / runs);
  CHECK(p + 3 * se >= 1 - res.delta);
}
