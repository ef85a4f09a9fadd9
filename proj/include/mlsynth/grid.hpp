#pragma once
#include <cstdint>
#include <memory>
#include <vector>

#include "mlsynth/geometry.hpp"
#include "mlsynth/model.hpp"
#include "mlsynth/scltl.hpp"

namespace mlsynth {

enum class BetaPolicy { HalfWidth, FullWidth };

// Square matrix stored as one contiguous run of entries per row.
struct BandedMatrix {
  int n = 0;
  std::vector<int> start;       // first column of row i
  std::vector<std::size_t> offset;  // index into values; row i has offset[i+1]-offset[i] entries
  std::vector<double> values;

  double row_sum(int i) const;
  double at(int i, int j) const;
  std::size_t nnz() const { return values.size(); }
};

struct GridOptions {
  BetaPolicy beta = BetaPolicy::HalfWidth;
  double memory_budget_bytes = 4e9;
  bool allow_dense_kernel = true;
  double drop_below = 1e-12;
};

class GridAbstraction {
 public:
  GridAbstraction(const LtiGmdp& model, const Box& box, std::vector<int> counts,
                  std::vector<int> input_counts, GridOptions opts = {});

  int dim() const { return static_cast<int>(counts_.size()); }
  const Box& box() const { return box_; }
  const std::vector<int>& counts() const { return counts_; }
  const Vec& widths() const { return widths_; }
  const Box& beta_box() const { return beta_; }
  std::int64_t n_cells() const { return n_cells_; }
  std::int64_t sink() const { return n_cells_; }
  const std::vector<Vec>& inputs() const { return inputs_; }
  int n_inputs() const { return static_cast<int>(inputs_.size()); }
  const std::vector<double>& edges(int d) const { return edges_[d]; }

  Vec rep(std::int64_t cell) const;
  std::vector<int> multi_index(std::int64_t cell) const;
  std::int64_t flat_index(const std::vector<int>& idx) const;
  std::int64_t project(const Vec& x) const;
  Box cell_box(std::int64_t cell) const;

  bool factorized() const { return factorized_; }
  // E[g(next cell)] for every cell under input `u`; sink contributes 0.
  void expectation(const double* g, int u, double* out) const;
  // Same for all inputs at once; out is [u * n_cells + cell]. Shares partial contractions.
  void expectation_all(const double* g, double* out) const;
  // Transition row of one (cell, input) pair; for tests and small instances.
  std::vector<std::pair<std::int64_t, double>> transition_row(std::int64_t cell, int u) const;

  double memory_estimate() const { return memory_estimate_; }
  const BandedMatrix& factor(int d, int level) const { return factors_[d][level]; }
  int input_level(int u, int d) const { return input_levels_[static_cast<std::size_t>(u) * counts_.size() + d]; }

 private:
  void build_factorized(const LtiGmdp& model, const GridOptions& opts);
  void build_dense(const LtiGmdp& model, const GridOptions& opts);
  void contract(const std::vector<double>& in, int d, const BandedMatrix& P, std::vector<double>& out) const;
  void expect_rec(const std::vector<double>& t, int d, const std::vector<int>& inputs, double* out) const;

  Box box_;
  std::vector<int> counts_;
  std::vector<std::int64_t> strides_;
  std::vector<std::vector<double>> edges_;
  Vec widths_;
  Box beta_;
  std::int64_t n_cells_ = 0;
  std::vector<Vec> inputs_;
  bool factorized_ = true;
  double memory_estimate_ = 0.0;

  std::vector<std::vector<BandedMatrix>> factors_;  // [dim][drift level]
  std::vector<int> input_levels_;                   // [input * dim + d]

  // dense fallback: sparse rows per (cell, input)
  std::vector<std::size_t> dense_offset_;
  std::vector<std::int64_t> dense_col_;
  std::vector<double> dense_val_;
};

// Offsets between a state and its cell representative allowed for in quantification.
Box beta_box(const Box& box, const std::vector<int>& counts, BetaPolicy policy);

// Per-dimension probability that N(mean, sd^2) lands in each interval of `edges`.
BandedMatrix gaussian_factor(const std::vector<double>& edges, const std::vector<double>& means, double sd,
                             double drop_below);

// Letters reachable from a ball of radius eps around each cell's output, per layer.
class SuccessorTable {
 public:
  SuccessorTable(const GridAbstraction& grid, const LtiGmdp& model, const LabelMap& labels, const Mat& D,
                 const std::vector<double>& eps, bool allow_bbox = false);

  const std::vector<Letter>& letters(std::int64_t cell, int layer) const {
    return pool_[index_[static_cast<std::size_t>(layer) * n_cells_ + cell]];
  }
  // Q+ for DFA state q.
  std::vector<int> successors(const Dfa& dfa, int q, std::int64_t cell, int layer) const;
  int n_layers() const { return n_layers_; }

 private:
  std::int64_t n_cells_;
  int n_layers_;
  std::vector<std::vector<Letter>> pool_;
  std::vector<std::uint32_t> index_;
};

std::vector<int> qeps_plus(const GridAbstraction& grid, const LtiGmdp& model, const Dfa& dfa,
                           const LabelMap& labels, int q, std::int64_t cell, double eps, const Mat& D,
                           bool allow_bbox = false);

}  // namespace mlsynth
