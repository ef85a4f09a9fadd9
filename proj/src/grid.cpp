#include "mlsynth/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mlsynth/errors.hpp"

namespace mlsynth {

namespace {

constexpr double kTailSigmas = 8.5;

double interval_mass(double a, double b) {
  static const double r = 1.0 / std::sqrt(2.0);
  if (a >= 0.0) return 0.5 * (std::erfc(a * r) - std::erfc(b * r));
  if (b <= 0.0) return 0.5 * (std::erfc(-b * r) - std::erfc(-a * r));
  return 1.0 - 0.5 * std::erfc(b * r) - 0.5 * std::erfc(-a * r);
}

// Index of the interval containing v, lower index on shared edges, -1 outside.
int locate(const std::vector<double>& edges, double v) {
  if (!(v >= edges.front() && v <= edges.back())) return -1;
  auto it = std::lower_bound(edges.begin(), edges.end(), v);
  int k = static_cast<int>(it - edges.begin());
  return std::max(0, k - 1);
}

std::vector<double> linspace_edges(double lo, double hi, int n) {
  std::vector<double> e(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / n;
  e.back() = hi;
  return e;
}

// Probability run for one mean; returns first index and values.
std::pair<int, std::vector<double>> gaussian_run(const std::vector<double>& edges, double m, double sd,
                                                 double drop_below) {
  const int n = static_cast<int>(edges.size()) - 1;
  if (sd <= 0.0) {
    int j = locate(edges, m);
    if (j < 0) return {0, {}};
    return {j, {1.0}};
  }
  int j0 = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), m - kTailSigmas * sd) - edges.begin()) - 1;
  int j1 = static_cast<int>(std::lower_bound(edges.begin(), edges.end(), m + kTailSigmas * sd) - edges.begin());
  j0 = std::max(0, j0);
  j1 = std::min(n, j1);
  std::vector<double> vals;
  for (int j = j0; j < j1; ++j) vals.push_back(interval_mass((edges[j] - m) / sd, (edges[j + 1] - m) / sd));
  int first = 0, last = static_cast<int>(vals.size());
  while (first < last && vals[first] < drop_below) ++first;
  while (last > first && vals[last - 1] < drop_below) --last;
  return {j0 + first, std::vector<double>(vals.begin() + first, vals.begin() + last)};
}

bool is_diagonal(const Mat& m) {
  Mat off = m;
  off.diagonal().setZero();
  return off.cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

double BandedMatrix::row_sum(int i) const {
  double s = 0.0;
  for (std::size_t k = offset[i]; k < offset[i + 1]; ++k) s += values[k];
  return s;
}

double BandedMatrix::at(int i, int j) const {
  int k = j - start[i];
  if (k < 0 || static_cast<std::size_t>(k) >= offset[i + 1] - offset[i]) return 0.0;
  return values[offset[i] + static_cast<std::size_t>(k)];
}

Box beta_box(const Box& box, const std::vector<int>& counts, BetaPolicy policy) {
  const int n = box.dim();
  require(static_cast<int>(counts.size()) == n, "one cell count per dimension is required");
  Vec w(n);
  for (int d = 0; d < n; ++d) w[d] = (box.high[d] - box.low[d]) / counts[d];
  Vec half = policy == BetaPolicy::HalfWidth ? Vec(0.5 * w) : w;
  return Box(-half, half);
}

BandedMatrix gaussian_factor(const std::vector<double>& edges, const std::vector<double>& means, double sd,
                             double drop_below) {
  BandedMatrix P;
  P.n = static_cast<int>(means.size());
  P.offset.push_back(0);
  for (double m : means) {
    auto [first, vals] = gaussian_run(edges, m, sd, drop_below);
    P.start.push_back(first);
    P.values.insert(P.values.end(), vals.begin(), vals.end());
    P.offset.push_back(P.values.size());
  }
  return P;
}

GridAbstraction::GridAbstraction(const LtiGmdp& model, const Box& box, std::vector<int> counts,
                                 std::vector<int> input_counts, GridOptions opts)
    : box_(box), counts_(std::move(counts)) {
  const int n = model.nx();
  require(box_.dim() == n, "grid box dimension must match the state dimension");
  require(static_cast<int>(counts_.size()) == n, "one cell count per state dimension is required");
  require(static_cast<int>(input_counts.size()) == model.nu(), "one input count per input dimension is required");
  for (int c : counts_) require(c >= 1, "cell counts must be positive");
  for (int c : input_counts) require(c >= 1, "input counts must be positive");
  require(model.state_box.contains(box_), "gridded box must lie inside the state box");

  widths_ = box_.extent().array() / Eigen::Map<const Eigen::VectorXi>(counts_.data(), n).cast<double>().array();
  edges_.resize(n);
  strides_.assign(n, 1);
  n_cells_ = 1;
  for (int d = n - 1; d >= 0; --d) {
    edges_[d] = linspace_edges(box_.low[d], box_.high[d], counts_[d]);
    strides_[d] = n_cells_;
    n_cells_ *= counts_[d];
  }
  beta_ = mlsynth::beta_box(box_, counts_, opts.beta);

  // input grid, last dimension fastest
  const int nu = model.nu();
  std::size_t n_in = 1;
  for (int c : input_counts) n_in *= static_cast<std::size_t>(c);
  for (std::size_t k = 0; k < n_in; ++k) {
    Vec u(nu);
    std::size_t rem = k;
    for (int d = nu - 1; d >= 0; --d) {
      int i = static_cast<int>(rem % input_counts[d]);
      rem /= input_counts[d];
      const double lo = model.input_box.low[d], hi = model.input_box.high[d];
      u[d] = input_counts[d] == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (input_counts[d] - 1);
    }
    inputs_.push_back(u);
  }

  const Mat S = model.state_noise_cov();
  if (!is_diagonal(S)) {
    std::ostringstream os;
    os << "state noise covariance Bw*cov*Bw^T is not diagonal:\n" << S;
    throw ConfigError(os.str());
  }
  factorized_ = is_diagonal(model.A);
  if (factorized_) {
    build_factorized(model, opts);
  } else {
    if (!opts.allow_dense_kernel) throw ConfigError("A is not diagonal and the dense kernel fallback is disabled");
    build_dense(model, opts);
  }
}

void GridAbstraction::build_factorized(const LtiGmdp& model, const GridOptions& opts) {
  const int n = dim();
  const Vec c = model.noise_offset();
  const Vec sd = model.state_noise_cov().diagonal().cwiseMax(0.0).cwiseSqrt();
  std::vector<std::vector<double>> levels(n);
  input_levels_.assign(inputs_.size() * n, 0);
  for (std::size_t u = 0; u < inputs_.size(); ++u) {
    Vec drift = model.B * inputs_[u] + c;
    for (int d = 0; d < n; ++d) {
      auto& lv = levels[d];
      auto it = std::find_if(lv.begin(), lv.end(), [&](double v) {
        return std::abs(v - drift[d]) <= 1e-12 * std::max(1.0, std::abs(v));
      });
      if (it == lv.end()) {
        lv.push_back(drift[d]);
        it = lv.end() - 1;
      }
      input_levels_[u * n + d] = static_cast<int>(it - lv.begin());
    }
  }
  memory_estimate_ = 0.0;
  for (int d = 0; d < n; ++d) {
    double band = sd[d] > 0 ? std::min<double>(counts_[d], 2 * kTailSigmas * sd[d] / widths_[d] + 2) : 1.0;
    memory_estimate_ += static_cast<double>(levels[d].size()) * counts_[d] * band * 8.0;
  }
  memory_estimate_ += 4.0 * static_cast<double>(n_cells_) * 8.0;
  if (memory_estimate_ > opts.memory_budget_bytes) {
    std::ostringstream os;
    os << "abstraction needs about " << memory_estimate_ / 1e6 << " MB, above the budget of "
       << opts.memory_budget_bytes / 1e6 << " MB";
    throw ResourceError(os.str());
  }
  factors_.resize(n);
  for (int d = 0; d < n; ++d) {
    for (double level : levels[d]) {
      std::vector<double> means(counts_[d]);
      for (int i = 0; i < counts_[d]; ++i)
        means[i] = model.A(d, d) * 0.5 * (edges_[d][i] + edges_[d][i + 1]) + level;
      factors_[d].push_back(gaussian_factor(edges_[d], means, sd[d], opts.drop_below));
    }
  }
}

void GridAbstraction::build_dense(const LtiGmdp& model, const GridOptions& opts) {
  const int n = dim();
  const Vec c = model.noise_offset();
  const Vec sd = model.state_noise_cov().diagonal().cwiseMax(0.0).cwiseSqrt();
  double per_row = 1.0;
  for (int d = 0; d < n; ++d)
    per_row *= sd[d] > 0 ? std::min<double>(counts_[d], 2 * kTailSigmas * sd[d] / widths_[d] + 2) : 1.0;
  memory_estimate_ = static_cast<double>(n_cells_) * static_cast<double>(inputs_.size()) * per_row * 16.0;
  if (memory_estimate_ > opts.memory_budget_bytes) {
    std::ostringstream os;
    os << "dense kernel needs about " << memory_estimate_ / 1e6 << " MB, above the budget of "
       << opts.memory_budget_bytes / 1e6 << " MB";
    throw ResourceError(os.str());
  }
  dense_offset_.push_back(0);
  for (std::int64_t cell = 0; cell < n_cells_; ++cell) {
    const Vec x = rep(cell);
    for (std::size_t u = 0; u < inputs_.size(); ++u) {
      const Vec m = model.A * x + model.B * inputs_[u] + c;
      std::vector<std::pair<int, std::vector<double>>> runs;
      for (int d = 0; d < n; ++d) runs.push_back(gaussian_run(edges_[d], m[d], sd[d], opts.drop_below));
      std::vector<int> idx(n, 0);
      bool any = std::all_of(runs.begin(), runs.end(), [](const auto& r) { return !r.second.empty(); });
      while (any) {
        double p = 1.0;
        std::int64_t flat = 0;
        for (int d = 0; d < n; ++d) {
          p *= runs[d].second[idx[d]];
          flat += static_cast<std::int64_t>(runs[d].first + idx[d]) * strides_[d];
        }
        if (p >= opts.drop_below) {
          dense_col_.push_back(flat);
          dense_val_.push_back(p);
        }
        int d = n - 1;
        while (d >= 0 && ++idx[d] == static_cast<int>(runs[d].second.size())) idx[d--] = 0;
        if (d < 0) break;
      }
      dense_offset_.push_back(dense_col_.size());
    }
  }
}

Vec GridAbstraction::rep(std::int64_t cell) const {
  auto idx = multi_index(cell);
  Vec x(dim());
  for (int d = 0; d < dim(); ++d) x[d] = 0.5 * (edges_[d][idx[d]] + edges_[d][idx[d] + 1]);
  return x;
}

std::vector<int> GridAbstraction::multi_index(std::int64_t cell) const {
  std::vector<int> idx(dim());
  for (int d = 0; d < dim(); ++d) {
    idx[d] = static_cast<int>(cell / strides_[d]);
    cell %= strides_[d];
  }
  return idx;
}

std::int64_t GridAbstraction::flat_index(const std::vector<int>& idx) const {
  std::int64_t f = 0;
  for (int d = 0; d < dim(); ++d) f += static_cast<std::int64_t>(idx[d]) * strides_[d];
  return f;
}

std::int64_t GridAbstraction::project(const Vec& x) const {
  std::int64_t f = 0;
  for (int d = 0; d < dim(); ++d) {
    int j = locate(edges_[d], x[d]);
    if (j < 0) return sink();
    f += static_cast<std::int64_t>(j) * strides_[d];
  }
  return f;
}

Box GridAbstraction::cell_box(std::int64_t cell) const {
  auto idx = multi_index(cell);
  Box b;
  b.low.resize(dim());
  b.high.resize(dim());
  for (int d = 0; d < dim(); ++d) {
    b.low[d] = edges_[d][idx[d]];
    b.high[d] = edges_[d][idx[d] + 1];
  }
  return b;
}

void GridAbstraction::contract(const std::vector<double>& in, int d, const BandedMatrix& P,
                               std::vector<double>& out) const {
  std::int64_t post = strides_[d];
  std::int64_t nd = counts_[d];
  std::int64_t pre = n_cells_ / (post * nd);
  out.assign(static_cast<std::size_t>(n_cells_), 0.0);
  for (std::int64_t a = 0; a < pre; ++a) {
    const double* src = in.data() + a * nd * post;
    double* dst = out.data() + a * nd * post;
    for (std::int64_t i = 0; i < nd; ++i) {
      const std::size_t k0 = P.offset[i], k1 = P.offset[i + 1];
      const double* v = P.values.data() + k0;
      const std::int64_t j0 = P.start[i];
      const std::size_t len = k1 - k0;
      if (post == 1) {
        double s = 0.0;
        const double* s0 = src + j0;
        for (std::size_t k = 0; k < len; ++k) s += v[k] * s0[k];
        dst[i] = s;
      } else {
        double* row = dst + i * post;
        for (std::size_t k = 0; k < len; ++k) {
          const double w = v[k];
          const double* s0 = src + (j0 + static_cast<std::int64_t>(k)) * post;
          for (std::int64_t b = 0; b < post; ++b) row[b] += w * s0[b];
        }
      }
    }
  }
}

void GridAbstraction::expect_rec(const std::vector<double>& t, int d, const std::vector<int>& inputs,
                                 double* out) const {
  if (d < 0) {
    for (int u : inputs) std::copy(t.begin(), t.end(), out + static_cast<std::int64_t>(u) * n_cells_);
    return;
  }
  std::map<int, std::vector<int>> groups;
  for (int u : inputs) groups[input_level(u, d)].push_back(u);
  std::vector<double> next;
  for (const auto& [level, members] : groups) {
    contract(t, d, factors_[d][level], next);
    expect_rec(next, d - 1, members, out);
  }
}

void GridAbstraction::expectation_all(const double* g, double* out) const {
  if (factorized_) {
    std::vector<double> t(g, g + n_cells_);
    std::vector<int> all(inputs_.size());
    std::iota(all.begin(), all.end(), 0);
    expect_rec(t, dim() - 1, all, out);
    return;
  }
  for (int u = 0; u < n_inputs(); ++u) expectation(g, u, out + static_cast<std::int64_t>(u) * n_cells_);
}

void GridAbstraction::expectation(const double* g, int u, double* out) const {
  if (factorized_) {
    std::vector<double> t(g, g + n_cells_);
    std::vector<double> next;
    for (int d = dim() - 1; d >= 0; --d) {
      contract(t, d, factors_[d][input_level(u, d)], next);
      t.swap(next);
    }
    std::copy(t.begin(), t.end(), out);
    return;
  }
  const std::size_t nin = inputs_.size();
  for (std::int64_t cell = 0; cell < n_cells_; ++cell) {
    std::size_t r = static_cast<std::size_t>(cell) * nin + static_cast<std::size_t>(u);
    double s = 0.0;
    for (std::size_t k = dense_offset_[r]; k < dense_offset_[r + 1]; ++k) s += dense_val_[k] * g[dense_col_[k]];
    out[cell] = s;
  }
}

std::vector<std::pair<std::int64_t, double>> GridAbstraction::transition_row(std::int64_t cell, int u) const {
  std::vector<std::pair<std::int64_t, double>> row;
  if (!factorized_) {
    std::size_t r = static_cast<std::size_t>(cell) * inputs_.size() + static_cast<std::size_t>(u);
    for (std::size_t k = dense_offset_[r]; k < dense_offset_[r + 1]; ++k) row.emplace_back(dense_col_[k], dense_val_[k]);
    return row;
  }
  auto idx = multi_index(cell);
  const int n = dim();
  std::vector<const BandedMatrix*> P(n);
  std::vector<int> len(n);
  for (int d = 0; d < n; ++d) {
    P[d] = &factors_[d][input_level(u, d)];
    len[d] = static_cast<int>(P[d]->offset[idx[d] + 1] - P[d]->offset[idx[d]]);
    if (len[d] == 0) return row;
  }
  std::vector<int> k(n, 0);
  for (;;) {
    double p = 1.0;
    std::int64_t flat = 0;
    for (int d = 0; d < n; ++d) {
      p *= P[d]->values[P[d]->offset[idx[d]] + k[d]];
      flat += static_cast<std::int64_t>(P[d]->start[idx[d]] + k[d]) * strides_[d];
    }
    row.emplace_back(flat, p);
    int d = n - 1;
    while (d >= 0 && ++k[d] == len[d]) k[d--] = 0;
    if (d < 0) break;
  }
  return row;
}

SuccessorTable::SuccessorTable(const GridAbstraction& grid, const LtiGmdp& model, const LabelMap& labels,
                               const Mat& D, const std::vector<double>& eps, bool allow_bbox)
    : n_cells_(grid.n_cells()), n_layers_(static_cast<int>(eps.size())) {
  std::map<std::vector<Letter>, std::uint32_t> seen;
  index_.resize(static_cast<std::size_t>(n_layers_) * static_cast<std::size_t>(n_cells_));
  for (int j = 0; j < n_layers_; ++j)
    for (std::int64_t c = 0; c < n_cells_; ++c) {
      Ellipsoid e = output_ellipsoid(model.C, D, grid.rep(c), eps[j]);
      auto letters = achievable_letters(e, labels, allow_bbox);
      auto [it, fresh] = seen.emplace(letters, static_cast<std::uint32_t>(pool_.size()));
      if (fresh) pool_.push_back(letters);
      index_[static_cast<std::size_t>(j) * n_cells_ + c] = it->second;
    }
}

std::vector<int> SuccessorTable::successors(const Dfa& dfa, int q, std::int64_t cell, int layer) const {
  std::vector<int> out;
  for (Letter l : letters(cell, layer)) out.push_back(dfa.next(q, l));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> qeps_plus(const GridAbstraction& grid, const LtiGmdp& model, const Dfa& dfa,
                           const LabelMap& labels, int q, std::int64_t cell, double eps, const Mat& D,
                           bool allow_bbox) {
  Ellipsoid e = output_ellipsoid(model.C, D, grid.rep(cell), eps);
  std::vector<int> out;
  for (Letter l : achievable_letters(e, labels, allow_bbox)) out.push_back(dfa.next(q, l));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace mlsynth
