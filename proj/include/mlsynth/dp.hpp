#pragma once
#include <cstdint>
#include <functional>
#include <vector>

#include "mlsynth/grid.hpp"
#include "mlsynth/scltl.hpp"
#include "mlsynth/waypoints.hpp"

namespace mlsynth {

// Finite controlled chain over cells plus an absorbing sink that is worth 0.
class TransitionSource {
 public:
  virtual ~TransitionSource() = default;
  virtual std::int64_t n_cells() const = 0;
  virtual int n_inputs() const = 0;
  // out[u * n_cells + cell] = sum over successors of P(succ | cell, u) g(succ)
  virtual void expectation_all(const double* g, double* out) const = 0;
};

class GridTransitions : public TransitionSource {
 public:
  explicit GridTransitions(const GridAbstraction& grid) : grid_(grid) {}
  std::int64_t n_cells() const override { return grid_.n_cells(); }
  int n_inputs() const override { return grid_.n_inputs(); }
  void expectation_all(const double* g, double* out) const override { grid_.expectation_all(g, out); }

 private:
  const GridAbstraction& grid_;
};

// Explicit sparse rows; missing mass goes to the sink.
class ExplicitTransitions : public TransitionSource {
 public:
  using Row = std::vector<std::pair<std::int64_t, double>>;
  ExplicitTransitions(std::int64_t n_cells, int n_inputs);
  void set_row(std::int64_t cell, int u, Row row);
  const Row& row(std::int64_t cell, int u) const { return rows_[static_cast<std::size_t>(cell) * n_inputs_ + u]; }
  std::int64_t n_cells() const override { return n_cells_; }
  int n_inputs() const override { return n_inputs_; }
  void expectation_all(const double* g, double* out) const override;

 private:
  std::int64_t n_cells_;
  int n_inputs_;
  std::vector<Row> rows_;
};

// Letters an output related to (cell, layer) may carry.
using LetterLookup = std::function<const std::vector<Letter>&(std::int64_t cell, int layer)>;

LetterLookup letters_from(const SuccessorTable& table);

struct DbProblem {
  const TransitionSource* transitions = nullptr;
  LetterLookup letters;
  int n_layers = 1;
  Mat delta;                          // delta(i, j)
  std::vector<bool> layer_enabled;    // empty: all layers
  std::vector<bool> frozen;           // [layer * n_cells + cell] held at 0; empty: none
  // Fixed switch target per [(q * n_layers + i) * n_cells + cell]; empty: optimize over all targets.
  // Staying in layer i is always allowed as well.
  std::vector<int> switch_choice;
};

struct SwitchSets {
  // bf: waypoints whose tube contains every state related to (cell, layer); CSR over layer * n_cells + cell
  std::vector<std::size_t> bf_offset;
  std::vector<int> bf_target;
  // fb: cells covering the tube of a waypoint when entering layer i; CSR over layer * n_waypoints + w, empty if not allowed
  std::vector<std::size_t> fb_offset;
  std::vector<std::int64_t> fb_cells;
  std::int64_t n_cells = 0;
  int n_waypoints = 0;
  int n_layers = 0;

  std::vector<int> bf(std::int64_t cell, int layer) const;
  std::vector<std::int64_t> fb(int w, int layer) const;
};

// Radius in D-norm of the farthest point of a cell from its center.
double cell_radius(const GridAbstraction& grid, const Mat& D);

SwitchSets compute_switch_sets(const GridAbstraction& grid, const WaypointModel& wm, const std::vector<double>& eps,
                               const Mat& D, const std::vector<bool>& layer_enabled);

struct DpOptions {
  double tolerance = 1e-6;
  int max_iterations = 5000;
  std::function<void(int iteration, double residual)> observer;
};

struct DpResult {
  int n_states = 0;
  int n_layers = 0;
  std::int64_t n_cells = 0;
  int n_waypoints = 0;
  std::vector<double> db;     // [(q * n_layers + i) * n_cells + cell]
  std::vector<double> df;     // [w * n_states + q]
  std::vector<int> db_input;  // same layout as db; -1 where no backup is made
  std::vector<int> db_layer;
  std::vector<int> db_waypoint;  // waypoint entered instead of the grid backup, or -1
  std::vector<int> df_edge;      // index into the waypoint's edge list, or -1
  std::vector<int> df_layer;     // layer entered instead of following an edge, or -1
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  bool monotone = true;
  bool bounded = true;

  std::size_t db_index(int q, int layer, std::int64_t cell) const {
    return (static_cast<std::size_t>(q) * n_layers + layer) * static_cast<std::size_t>(n_cells) +
           static_cast<std::size_t>(cell);
  }
  double db_value(int q, int layer, std::int64_t cell) const { return db[db_index(q, layer, cell)]; }
  double df_value(int w, int q) const { return df[static_cast<std::size_t>(w) * n_states + q]; }
};

// Value iteration from V = 0 for the grid layers, the waypoint layer, or both
// (pass nullptr for an absent part; `switches` is needed only when both are given).
DpResult value_iteration(const Dfa& dfa, const DbProblem* db, const WaypointModel* wm, const SwitchSets* switches,
                         const DpOptions& opts = {});

// Successor states of q after an edge, one per possible change point.
std::vector<int> edge_successors(const Dfa& dfa, const WaypointModel& wm, int q, int from, int to);

// Switch targets chosen on a coarse grid, mapped to the fine grid's cells by nearest representative.
std::vector<int> map_switch_strategy(const DpResult& coarse, const GridAbstraction& coarse_grid,
                                     const GridAbstraction& fine_grid);

}  // namespace mlsynth
