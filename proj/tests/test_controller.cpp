#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "mlsynth/controller.hpp"
#include "mlsynth/errors.hpp"
#include "mlsynth/pipeline.hpp"

using namespace mlsynth;
using fixtures::box2;
using fixtures::v2;

namespace {

// Two waypoints joined by one single-step edge; the target sits in p1.
struct TwoPoints {
  LtiGmdp model = fixtures::make_model(0.9, 0.5, 0.5, box2(-5, 5, -5, 5), box2(-5, 5, -5, 5));
  LabelMap labels{{{"p1", box2(0.8, 1.2, -0.2, 0.2)}}};
  Dfa dfa = to_dfa(parse_scltl("F p1", {"p1"}));
  WaypointModel wm;
  DpResult result;

  TwoPoints() {
    wm.points = {v2(0, 0), v2(1, 0)};
    wm.letters = {0, 1};
    wm.edges.resize(2);
    WaypointEdge e;
    e.to = 1;
    e.inputs = {v2(0.3, 0.1)};
    e.path = {v2(0, 0), v2(1, 0)};
    wm.edges[0].push_back(e);
    wm.n_s = 1;
    wm.delta_w = 1e-3;
    wm.eps_w = 0.5;
    wm.D_w = Mat::Identity(2, 2);
    wm.K = -1.4 * Mat::Identity(2, 2);
    DpOptions o;
    result = value_iteration(dfa, nullptr, &wm, nullptr, o);
  }

  SynthesisContext context() const {
    SynthesisContext c;
    c.model = &model;
    c.labels = &labels;
    c.dfa = &dfa;
    c.waypoints = &wm;
    c.result = &result;
    return c;
  }
};

RunConfig small_grid_config() {
  nlohmann::json j = {
      {"mode", "db-single"},
      {"model",
       {{"A", 0.9},
        {"B", 0.5},
        {"Bw", 0.5},
        {"state_box", {{"low", {-5, -5}}, {"high", {5, 5}}}},
        {"input_box", {{"low", {-1.25, -1.25}}, {"high", {1.25, 1.25}}}}}},
      {"labels", {{"regions", {{{"name", "p1"}, {"low", {-4, -4}}, {"high", {-3, -3}}}}}}},
      {"spec", {{"formula", "F p1"}}},
      {"grid", {{"counts", {30, 30}}, {"input_counts", {3, 3}}}},
      {"layers", {{"eps", {0.5}}}},
      {"validation", {{"runs", 300}, {"seed", 5}, {"x0", {{-2, -2}, {-3.5, -3.5}}}}}};
  return parse_config(j);
}

}  // namespace

TEST_CASE("waypoint input is the nominal input plus feedback on the deviation") {
  TwoPoints f;
  auto ctx = f.context();
  RefinedController ctrl(ctx);
  const Vec x0 = v2(0.1, 0.0);
  ctrl.reset(x0);
  CHECK(ctrl.on_waypoints());
  Vec u = ctrl.input(x0);
  CHECK(u[0] == doctest::Approx(0.3 - 0.14).epsilon(1e-14));
  CHECK(u[1] == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("waypoint input is clamped to the input box") {
  TwoPoints f;
  f.model.input_box = box2(-0.2, 0.2, -0.2, 0.2);
  auto ctx = f.context();
  RefinedController ctrl(ctx);
  ctrl.reset(v2(-0.4, 0.0));
  Vec u = ctrl.input(v2(-0.4, 0.0));
  CHECK(u[0] == doctest::Approx(0.2));
  CHECK(u[1] == doctest::Approx(0.1));
}

TEST_CASE("certified value from a waypoint is one minus the edge deviation") {
  TwoPoints f;
  auto iv = certified_value(f.context(), v2(0.1, 0.0));
  CHECK(iv.origin == Origin::Waypoint);
  CHECK(iv.waypoint == 0);
  CHECK(iv.value == doctest::Approx(1.0 - 1e-3).epsilon(1e-14));
  auto outside = certified_value(f.context(), v2(-3.0, 3.0));
  CHECK(outside.value == 0.0);
  auto inside = certified_value(f.context(), v2(1.0, 0.0));
  CHECK(inside.origin == Origin::Accepting);
  CHECK(inside.value == 1.0);
}

TEST_CASE("grid input without interface gain is the stored input") {
  Pipeline p(small_grid_config());
  p.run_synthesize();
  auto ctx = p.context();
  RefinedController ctrl(ctx);
  const GridAbstraction& g = *p.grid;
  int checked = 0;
  for (double x = -4.9; x < 5; x += 0.7)
    for (double y = -4.9; y < 5; y += 0.9) {
      const Vec s = v2(x, y);
      ctrl.reset(s);
      if (ctrl.accepted()) continue;
      const std::int64_t cell = g.project(s);
      const int q = ctrl.automaton_state();
      const int in = p.result->db_input[p.result->db_index(q, 0, cell)];
      REQUIRE(in >= 0);
      Vec u = ctrl.input(s);
      CHECK((u - g.inputs()[static_cast<std::size_t>(in)]).norm() == 0.0);
      ++checked;
    }
  CHECK(checked > 100);
}

TEST_CASE("Monte-Carlo on trivial starts") {
  Pipeline p(small_grid_config());
  p.run_synthesize();
  auto ctx = p.context();
  auto in_target = monte_carlo(ctx, v2(-3.5, -3.5), 50, 10, 1);
  CHECK(in_target.probability == 1.0);
  CHECK(in_target.std_error == 0.0);
  CHECK(certified_value(ctx, v2(-3.5, -3.5)).value == 1.0);

  // an automaton that starts in its sink: nothing can be satisfied
  LabelMap labels{{{"p1", box2(-4, -3, -4, -3)}, {"p2", box2(-5, 5, -5, 5)}}};
  Dfa dfa = to_dfa(parse_scltl("!p2 U p1", {"p1", "p2"}));
  SynthesisContext c2 = ctx;
  c2.labels = &labels;
  c2.dfa = &dfa;
  DpResult empty;
  empty.n_states = dfa.n_states;
  c2.result = &empty;
  c2.grid = nullptr;
  auto dead = monte_carlo(c2, v2(0, 0), 40, 10, 1);
  CHECK(dead.probability == 0.0);
  CHECK(certified_value(c2, v2(0, 0)).value == 0.0);
}

TEST_CASE("Monte-Carlo is deterministic for a seed") {
  Pipeline p(small_grid_config());
  p.run_synthesize();
  auto ctx = p.context();
  Trace t1, t2;
  auto a = monte_carlo(ctx, v2(2, 2), 200, 60, 77, &t1);
  auto b = monte_carlo(ctx, v2(2, 2), 200, 60, 77, &t2);
  CHECK(a.successes == b.successes);
  REQUIRE(t1.states.size() == t2.states.size());
  for (std::size_t k = 0; k < t1.states.size(); ++k) CHECK((t1.states[k] - t2.states[k]).norm() == 0.0);
  auto c = monte_carlo(ctx, v2(2, 2), 200, 60, 78);
  CHECK(c.runs == 200);
  CHECK(a.half_width == doctest::Approx(1.96 * a.std_error));
  CHECK(a.std_error == doctest::Approx(std::sqrt(a.probability * (1 - a.probability) / 200)));
}

TEST_CASE("trace follows the automaton") {
  Pipeline p(small_grid_config());
  p.run_synthesize();
  auto ctx = p.context();
  Trace t;
  monte_carlo(ctx, v2(-2, -2), 1, 100, 3, &t);
  REQUIRE(t.states.size() == t.letters.size());
  REQUIRE(t.automaton.size() == t.states.size());
  CHECK(t.inputs.size() + 1 == t.states.size());
  int q = p.dfa.initial;
  for (std::size_t k = 0; k < t.letters.size(); ++k) {
    q = p.dfa.next(q, t.letters[k]);
    CHECK(q == t.automaton[k]);
  }
  CHECK(t.satisfied == p.dfa.is_accepting(q));
}

TEST_CASE("default horizon scales with distance over stride") {
  auto m = fixtures::make_model(0.9, 0.5, 0.5, box2(-5, 5, -5, 5), box2(-1, 1, -2, 2));
  Dfa dfa = to_dfa(parse_scltl("F p1", {"p1"}));
  // diameter 10 sqrt 2, one step moves at most 0.5 sqrt 5
  const int crossing = static_cast<int>(std::ceil(10 * std::sqrt(2.0) / (0.5 * std::sqrt(5.0))));
  CHECK(crossing == 13);
  CHECK(default_horizon(m, dfa) == 10 * 1 * crossing);
}

TEST_CASE("controller needs a complete context") {
  SynthesisContext empty;
  CHECK_THROWS_AS(RefinedController{empty}, ContractViolation);
}
