#pragma once
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlsynth/controller.hpp"
#include "mlsynth/dp.hpp"
#include "mlsynth/simrel.hpp"
#include "mlsynth/waypoints.hpp"

namespace mlsynth {

enum class Mode { DbSingle, DbMultilayer, DfOnly, Heterogeneous };

std::string mode_name(Mode m);

struct RunConfig {
  std::string name = "run";
  Mode mode = Mode::DbSingle;
  LtiGmdp model;
  LabelMap labels;
  std::string formula;
  std::string dfa_file;

  // grid layers
  std::vector<int> counts;
  std::optional<Box> grid_box;  // defaults to the state box
  std::vector<int> input_counts;
  std::vector<int> surrogate_counts;  // empty: switch freely between layers
  BetaPolicy beta = BetaPolicy::HalfWidth;
  bool bbox_fallback = false;
  std::vector<double> eps;
  Mat D;  // empty: derived from C
  Mat K;  // grid interface gain; empty: u = u_hat
  double memory_budget_bytes = 4e9;

  // waypoint layer
  bool has_waypoints = false;
  WaypointParams waypoints;

  // value iteration
  double tolerance = 1e-6;
  int max_iterations = 5000;
  std::vector<Box> frozen;

  // validation
  int runs = 2000;
  int horizon = 0;  // 0: default_horizon
  std::vector<Vec> initial_states;
  std::uint64_t validation_seed = 1;

  std::string output_dir = "out";
  nlohmann::json source;  // the configuration as read
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

struct ValidationRow {
  Vec x0;
  InitialValue certified;
  McResult mc;
  bool sound = false;  // empirical + 3 SE >= certified
};

// Stage outputs; each run_* fills its part and the ones it needs first.
struct Pipeline {
  explicit Pipeline(RunConfig c);

  RunConfig cfg;
  Dfa dfa;
  Mat D;
  std::unique_ptr<GridAbstraction> grid;
  std::unique_ptr<SuccessorTable> table;
  std::unique_ptr<GridTransitions> transitions;
  std::unique_ptr<LayerSpec> layers;
  std::vector<bool> layer_valid;
  std::unique_ptr<WaypointModel> waypoints;
  std::unique_ptr<SwitchSets> switches;
  std::vector<int> switch_strategy;
  std::unique_ptr<DpResult> result;
  std::vector<ValidationRow> validation;
  Trace first_trace;

  std::map<std::string, double> seconds;
  std::vector<std::string> warnings;

  bool uses_grid() const { return cfg.mode != Mode::DfOnly; }
  bool uses_waypoints() const { return cfg.mode == Mode::DfOnly || cfg.mode == Mode::Heterogeneous; }

  void run_quantify();
  void run_abstract();
  void run_waypoints();
  void run_switch_strategy();
  void run_synthesize();
  void run_validate();

  SynthesisContext context() const;
  // Certified value at every cell representative (grid) or waypoint (no grid).
  std::vector<double> value_field() const;
};

// Artifact writers; `dir` is created when missing.
void write_layerspec(const Pipeline& p, const std::string& dir);
void write_dfa(const Pipeline& p, const std::string& dir);
void write_abstraction_summary(const Pipeline& p, const std::string& dir);
void write_waypoints(const Pipeline& p, const std::string& dir);
void write_values(const Pipeline& p, const std::string& dir);
void write_validation(const Pipeline& p, const std::string& dir);
void write_manifest(const Pipeline& p, const std::string& dir, const std::vector<std::string>& stages);

nlohmann::json waypoints_to_json(const WaypointModel& wm);

}  // namespace mlsynth
