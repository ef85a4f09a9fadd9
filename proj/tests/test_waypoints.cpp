#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "mlsynth/errors.hpp"
#include "mlsynth/geometry.hpp"
#include "mlsynth/waypoints.hpp"

using namespace mlsynth;
using fixtures::box2;
using fixtures::v2;

namespace {

const std::uint64_t kPackagedSeed = 412;

Mat gain() { return -1.4 * Mat::Identity(2, 2); }

LabelMap pd_labels() {
  return LabelMap({{"p1", box2(-4, -3, -4, -3)},
                   {"p2", box2(0, 1, 0, 2.5)},
                   {"p3", box2(3, 5, -2, -0.5)},
                   {"p4", box2(0, 1, -4, 0)}});
}

WaypointParams packaged_params() {
  WaypointParams p;
  p.K = gain();
  p.seed = kPackagedSeed;
  p.margin = InputMargin::None;
  p.max_rounds = 1;
  return p;
}

// Letters met by a dense disc sampling at many points of a straight segment.
std::vector<std::set<Letter>> swept_letters(const LabelMap& labels, const Vec& a, const Vec& b, double eps) {
  std::vector<std::set<Letter>> out;
  for (int s = 0; s <= 200; ++s) {
    Vec c = a + (b - a) * (s / 200.0);
    std::set<Letter> seen;
    for (int ri = 0; ri <= 10; ++ri)
      for (int ai = 0; ai < 64; ++ai) {
        double r = eps * ri / 10.0, t = 2 * M_PI * ai / 64.0;
        seen.insert(labels.letter_at(c + v2(r * std::cos(t), r * std::sin(t))));
      }
    out.push_back(seen);
  }
  return out;
}

// Number of letter changes forced along the sweep when every ball has one letter.
int forced_changes(const std::vector<std::set<Letter>>& sweep) {
  int changes = 0;
  long last = -1;
  for (const auto& s : sweep) {
    if (s.size() != 1) continue;
    long l = *s.begin();
    if (last >= 0 && l != last) ++changes;
    last = l;
  }
  return changes;
}

WaypointModel graph(int n, const std::vector<std::pair<int, int>>& arcs) {
  WaypointModel m;
  m.points.assign(n, v2(0, 0));
  m.letters.assign(n, 0);
  m.edges.resize(n);
  for (auto [a, b] : arcs) {
    WaypointEdge e;
    e.to = b;
    m.edges[a].push_back(e);
  }
  return m;
}

bool closure_connected(const WaypointModel& m) {
  const int n = m.size();
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i) {
    r[i][i] = true;
    for (const auto& e : m.edges[i]) r[i][e.to] = true;
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (r[i][k] && r[k][j]) r[i][j] = true;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!r[i][j]) return false;
  return true;
}

}  // namespace

TEST_CASE("tube radius of the running example") {
  auto m = fixtures::running_example();
  CHECK(std::abs(epsilon_w(m, gain(), Mat::Identity(2, 2), 1e-4) - 2.6825) < 1e-3);
}

TEST_CASE("tube radius matches the two degree of freedom closed form") {
  auto m = fixtures::running_example();
  for (double dw : {1e-6, 1e-4, 1e-2, 0.3}) {
    double r = -2.0 * std::log(dw);
    double expected = 0.5 * std::sqrt(r) / (1.0 - 0.2);
    CHECK(epsilon_w(m, gain(), Mat::Identity(2, 2), dw) == doctest::Approx(expected).epsilon(1e-10));
  }
  CHECK(epsilon_w(m, gain(), 2.0 * Mat::Identity(2, 2), 1e-4) ==
        doctest::Approx(epsilon_w(m, gain(), Mat::Identity(2, 2), 1e-4) / 2.0));
  CHECK(epsilon_w(m, gain(), Mat::Identity(2, 2), 1.0 - 1e-12) < 1e-5);
}

TEST_CASE("tube radius rejects non-contractive gains and bad deviations") {
  auto m = fixtures::running_example();
  CHECK_THROWS_AS(epsilon_w(m, Mat::Identity(2, 2), Mat::Identity(2, 2), 1e-4), InfeasibleError);
  CHECK_THROWS_AS(epsilon_w(m, gain(), Mat::Identity(2, 2), 0.0), DomainError);
  CHECK_THROWS_AS(epsilon_w(m, gain(), Mat::Identity(2, 2), 1.0), DomainError);
}

TEST_CASE("point well-posedness") {
  auto m = fixtures::running_example();
  auto labels = pd_labels();
  Mat I = Mat::Identity(2, 2);
  CHECK(is_well_posed_point(m, labels, v2(-15, -15), 2.68, I));
  CHECK_FALSE(is_well_posed_point(m, labels, v2(-3.5, -3.5), 2.68, I));
  LabelMap big({{"p1", box2(-8, 1, -8, 1)}});
  CHECK(is_well_posed_point(m, big, v2(-3.5, -3.5), 2.68, I));
  CHECK_FALSE(is_well_posed_point(m, big, v2(-0.5, -3.5), 2.68, I));
}

TEST_CASE("edge well-posedness on clear cases") {
  auto m = fixtures::running_example();
  Mat I = Mat::Identity(2, 2);
  LabelMap goal({{"p5", box2(-9, -3, -5, 3)}});
  const Letter p5 = 1;
  // free space only
  CHECK(is_well_posed_edge(m, goal, {v2(-18, -15), v2(-12, -12)}, 0.5, I, 0, 0));
  // one entry into the goal
  CHECK(is_well_posed_edge(m, goal, {v2(-15, -1), v2(-6, -1)}, 0.5, I, 0, p5));
  // the reverse order of letters is a different claim
  CHECK_FALSE(is_well_posed_edge(m, goal, {v2(-15, -1), v2(-6, -1)}, 0.5, I, p5, 0));
  // free, p4, free: two changes
  auto labels = pd_labels();
  CHECK_FALSE(is_well_posed_edge(m, labels, {v2(-2, -2), v2(3, -2)}, 0.2, I, 0, 0));
  CHECK_FALSE(is_well_posed_edge(m, labels, {v2(-2, -2), v2(3, -2)}, 0.2, I, 0, 8));
}

TEST_CASE("edge well-posedness never accepts what the sweep oracle rejects") {
  auto m = fixtures::running_example();
  auto labels = pd_labels();
  Mat I = Mat::Identity(2, 2);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-6, 6);
  int accepted = 0;
  for (int t = 0; t < 300; ++t) {
    Vec a = v2(pos(rng), pos(rng)), b = v2(pos(rng), pos(rng));
    double eps = 0.1 + 0.4 * (t % 5) / 4.0;
    long la = uniform_letter(output_ellipsoid(m.C, I, a, eps), labels);
    long lb = uniform_letter(output_ellipsoid(m.C, I, b, eps), labels);
    if (la < 0 || lb < 0) continue;
    if (!is_well_posed_edge(m, labels, {a, b}, eps, I, static_cast<Letter>(la), static_cast<Letter>(lb))) continue;
    ++accepted;
    auto sweep = swept_letters(labels, a, b, eps);
    std::set<Letter> all;
    for (const auto& s : sweep) all.insert(s.begin(), s.end());
    CHECK(all.size() <= 2);
    for (Letter l : all) CHECK((l == static_cast<Letter>(la) || l == static_cast<Letter>(lb)));
    CHECK(forced_changes(sweep) <= (la == lb ? 0 : 1));
  }
  CHECK(accepted > 20);
}

TEST_CASE("nominal steering reaches the target inside the input box") {
  auto m = fixtures::running_example();
  auto e = steer(m, v2(-10, -8), v2(-9, -7), 3, 0.0);
  REQUIRE(e.has_value());
  REQUIRE(e->inputs.size() == 3);
  Vec x = v2(-10, -8);
  for (const auto& u : e->inputs) {
    CHECK(m.input_box.contains(u));
    x = m.A * x + m.B * u;
  }
  CHECK((x - v2(-9, -7)).norm() < 1e-9);
  // too far for three bounded steps
  CHECK_FALSE(steer(m, v2(-18, -18), v2(4, 4), 3, 0.0).has_value());
  // a margin can remove an otherwise feasible edge
  CHECK_FALSE(steer(m, v2(-10, -8), v2(-6, -4), 3, 4.0).has_value());
}

TEST_CASE("strong connectivity agrees with a reachability closure") {
  CHECK(strongly_connected(graph(1, {})));
  CHECK_FALSE(strongly_connected(graph(2, {{0, 1}})));
  CHECK(strongly_connected(graph(2, {{0, 1}, {1, 0}})));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    int n = 2 + static_cast<int>(rng() % 7);
    std::vector<std::pair<int, int>> arcs;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && rng() % 3 == 0) arcs.push_back({i, j});
    auto g = graph(n, arcs);
    CHECK(strongly_connected(g) == closure_connected(g));
    auto comps = strong_components(g);
    std::size_t total = 0;
    for (const auto& c : comps) {
      total += c.size();
      CHECK(closure_connected(restrict_to(g, c)));
    }
    CHECK(total == static_cast<std::size_t>(n));
  }
}

TEST_CASE("single sample gives a trivially connected model") {
  auto p = packaged_params();
  p.samples = 1;
  auto w = build_waypoint_model(fixtures::running_example(), pd_labels(), p);
  CHECK(w.size() == 1);
  CHECK(strongly_connected(w));
}

TEST_CASE("packaged seed builds a connected, well-posed 48 point model") {
  auto m = fixtures::running_example();
  auto labels = pd_labels();
  auto w = build_waypoint_model(m, labels, packaged_params());
  CHECK(w.size() == 48);
  CHECK(w.rounds == 1);
  CHECK(strongly_connected(w));
  for (int i = 0; i < w.size(); ++i) {
    CHECK(is_well_posed_point(m, labels, w.points[i], w.eps_w, w.D_w));
    CHECK(m.state_box.contains(w.points[i]));
    for (const auto& e : w.edges[i])
      CHECK(is_well_posed_edge(m, labels, e.path, w.eps_w, w.D_w, w.letters[i], w.letters[e.to]));
  }
  auto again = build_waypoint_model(m, labels, packaged_params());
  REQUIRE(again.size() == w.size());
  for (int i = 0; i < w.size(); ++i) {
    CHECK(again.points[i] == w.points[i]);
    REQUIRE(again.edges[i].size() == w.edges[i].size());
    for (std::size_t k = 0; k < w.edges[i].size(); ++k) CHECK(again.edges[i][k].to == w.edges[i][k].to);
  }
}

TEST_CASE("an unconnectable configuration reports its largest component") {
  auto p = packaged_params();
  p.margin = InputMargin::WorstCase;
  try {
    build_waypoint_model(fixtures::running_example(), pd_labels(), p);
    FAIL("expected a partial model");
  } catch (const PartialModelError& e) {
    CHECK(e.component.size() >= 1);
    CHECK(strongly_connected(e.component));
  }
}

TEST_CASE("edge words place the single letter change at every step") {
  WaypointModel w = graph(2, {{0, 1}});
  w.n_s = 3;
  w.letters = {0, 4};
  auto words = w.edge_words(0, 1);
  REQUIRE(words.size() == 3);
  CHECK(words[0] == std::vector<Letter>{4, 4, 4});
  CHECK(words[2] == std::vector<Letter>{0, 0, 4});
  CHECK(w.edge_words(1, 1) == std::vector<std::vector<Letter>>{{4, 4, 4}});
}

TEST_CASE("closed-loop edges land in the target tube") {
  auto m = fixtures::running_example();
  auto w = build_waypoint_model(m, pd_labels(), packaged_params());
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Mat G = m.whitened_noise_gain();
  const int runs = 2000;
  int checked = 0;
  for (int i = 0; i < w.size() && checked < 6; i += 7) {
    if (w.edges[i].empty()) continue;
    const auto& e = w.edges[i][rng() % w.edges[i].size()];
    int hits = 0;
    for (int r = 0; r < runs; ++r) {
      double t = 2 * M_PI * r / runs;
      Vec x = w.points[i] + w.eps_w * v2(std::cos(t), std::sin(t));
      for (int k = 0; k < w.n_s; ++k) {
        Vec u = e.inputs[k] + w.K * (x - e.path[k]);
        x = m.A * x + m.B * u + G * v2(nd(rng), nd(rng));
      }
      if (w.contains(e.to, x)) ++hits;
    }
    double p = static_cast<double>(hits) / runs;
    double se = std::sqrt(w.delta_w * (1 - w.delta_w) / runs);
    CHECK(p >= 1 - w.delta_w - 3 * se);
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("anchor boxes place one waypoint with its tube inside the box") {
  const auto m = fixtures::running_example();
  auto p = packaged_params();
  p.anchor_boxes = {box2(-9, 5, -5, 3)};
  p.max_rounds = 3;
  WaypointModel w;
  try {
    w = build_waypoint_model(m, pd_labels(), p);
  } catch (const PartialModelError& e) {
    w = e.component;
  }
  REQUIRE(w.size() >= 1);
  bool found = false;
  for (const auto& x : w.points)
    found = found || (x[0] - w.eps_w >= -9 && x[0] + w.eps_w <= 5 && x[1] - w.eps_w >= -5 && x[1] + w.eps_w <= 3);
  CHECK(found);

  // a box narrower than the tube gets no anchor
  auto q = packaged_params();
  q.anchor_boxes = {box2(-1, 1, -1, 1)};
  auto plain = build_waypoint_model(m, pd_labels(), packaged_params());
  auto skipped = build_waypoint_model(m, pd_labels(), q);
  REQUIRE(plain.size() == skipped.size());
  for (int k = 0; k < plain.size(); ++k) CHECK((plain.points[k] - skipped.points[k]).norm() == 0.0);
}
