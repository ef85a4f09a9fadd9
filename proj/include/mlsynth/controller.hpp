#pragma once
#include <cstdint>
#include <vector>

#include "mlsynth/dp.hpp"
#include "mlsynth/simrel.hpp"

namespace mlsynth {

// Everything a refined controller reads; pointers are borrowed.
struct SynthesisContext {
  const LtiGmdp* model = nullptr;
  const LabelMap* labels = nullptr;
  const Dfa* dfa = nullptr;
  const GridAbstraction* grid = nullptr;  // null without grid layers
  const LayerSpec* layers = nullptr;
  std::vector<bool> layer_valid;          // layers whose relation holds for every state of a cell
  const WaypointModel* waypoints = nullptr;
  const DpResult* result = nullptr;
};

enum class Origin { Accepting, Grid, Waypoint, None };

struct InitialValue {
  double value = 0.0;
  Origin origin = Origin::None;
  int q = -1;  // automaton state after reading the initial letter
  int layer = -1;
  std::int64_t cell = -1;
  int waypoint = -1;
};

// Certified lower bound on the satisfaction probability from x0.
InitialValue certified_value(const SynthesisContext& ctx, const Vec& x0);

class RefinedController {
 public:
  explicit RefinedController(const SynthesisContext& ctx);

  void reset(const Vec& x0);
  Vec input(const Vec& x);
  void observe(const Vec& x_next);

  int automaton_state() const { return q_; }
  bool accepted() const;
  bool rejected() const;
  bool on_waypoints() const { return on_waypoints_; }
  int relation_exits() const { return exits_; }

 private:
  void enter_grid(const Vec& x);
  Vec clamp_input(const Vec& u) const;

  SynthesisContext ctx_;
  int q_ = -1;
  bool on_waypoints_ = false;
  int layer_ = 0;
  int waypoint_ = -1;
  int edge_ = -1;
  int edge_step_ = 0;
  int exits_ = 0;
  bool lost_ = false;
};

struct McResult {
  double probability = 0.0;
  double std_error = 0.0;
  double half_width = 0.0;  // 95% normal approximation
  int runs = 0;
  int successes = 0;
  int relation_exits = 0;
};

// Steps allowed per run when none is configured.
int default_horizon(const LtiGmdp& model, const Dfa& dfa);

McResult monte_carlo(const SynthesisContext& ctx, const Vec& x0, int runs, int horizon, std::uint64_t seed,
                     Trace* first_trace = nullptr);

}  // namespace mlsynth
