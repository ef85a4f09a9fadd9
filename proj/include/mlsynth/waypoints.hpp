#pragma once
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlsynth/model.hpp"

namespace mlsynth {

enum class InputMargin { WorstCase, None };

struct WaypointParams {
  int samples = 48;
  int n_s = 3;
  double delta_w = 1e-4;
  Mat K;             // feedback gain, nu x nx
  double d_w = 1.0;  // weighting D_w = d_w I
  std::uint64_t seed = 1;
  InputMargin margin = InputMargin::WorstCase;
  int tube_points = 32;
  int max_rounds = 10;
  bool seed_regions = true;  // try one waypoint inside every labeled region first
  std::vector<Box> anchor_boxes;  // then one waypoint with its ellipsoid inside each box
};

struct WaypointEdge {
  int to = -1;
  std::vector<Vec> inputs;  // nominal inputs u_0 .. u_{n_s-1}
  std::vector<Vec> path;    // nominal states x_0 .. x_{n_s}
};

struct WaypointModel {
  std::vector<Vec> points;
  std::vector<Letter> letters;
  std::vector<std::vector<WaypointEdge>> edges;
  double eps_w = 0.0;
  Mat D_w;
  Mat K;
  int n_s = 0;
  double delta_w = 0.0;
  int rounds = 0;

  int size() const { return static_cast<int>(points.size()); }
  std::size_t edge_count() const;
  bool contains(int w, const Vec& x) const;
  std::vector<int> containing(const Vec& x) const;
  // letters read by the automaton while traversing an edge, one word per possible change point
  std::vector<std::vector<Letter>> edge_words(int from, int to) const;
};

struct PartialModelError : std::runtime_error {
  PartialModelError(const std::string& msg, WaypointModel largest)
      : std::runtime_error(msg), component(std::move(largest)) {}
  WaypointModel component;
};

double epsilon_w(const LtiGmdp& model, const Mat& K, const Mat& D_w, double delta_w);

bool is_well_posed_point(const LtiGmdp& model, const LabelMap& labels, const Vec& x_w, double eps_w, const Mat& D_w);

// Tube through the polyline `path`, sampled at `points` places with the radius
// inflated by half the sample spacing.
bool is_well_posed_edge(const LtiGmdp& model, const LabelMap& labels, const std::vector<Vec>& path, double eps_w,
                        const Mat& D_w, Letter from_letter, Letter to_letter, int points = 32);

// Nominal n_s-step steering between two centers with inputs inside the shrunk box.
std::optional<WaypointEdge> steer(const LtiGmdp& model, const Vec& from, const Vec& to, int n_s, double margin);

WaypointModel build_waypoint_model(const LtiGmdp& model, const LabelMap& labels, const WaypointParams& params);

bool strongly_connected(const WaypointModel& m);
// Components in discovery order, each a sorted list of node indices.
std::vector<std::vector<int>> strong_components(const WaypointModel& m);
WaypointModel restrict_to(const WaypointModel& m, const std::vector<int>& keep);

}  // namespace mlsynth
