#include "mlsynth/dp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "mlsynth/errors.hpp"
#include "mlsynth/geometry.hpp"

namespace mlsynth {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool enabled(const std::vector<bool>& mask, int i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; }

}  // namespace

ExplicitTransitions::ExplicitTransitions(std::int64_t n_cells, int n_inputs)
    : n_cells_(n_cells), n_inputs_(n_inputs), rows_(static_cast<std::size_t>(n_cells) * n_inputs) {}

void ExplicitTransitions::set_row(std::int64_t cell, int u, Row row) {
  double total = 0.0;
  for (const auto& [c, p] : row) {
    require(c >= 0 && c < n_cells_ && p >= 0.0, "transition entries must be valid cells with non-negative mass");
    total += p;
  }
  require(total <= 1.0 + 1e-12, "transition row mass exceeds 1");
  rows_[static_cast<std::size_t>(cell) * n_inputs_ + u] = std::move(row);
}

void ExplicitTransitions::expectation_all(const double* g, double* out) const {
  for (int u = 0; u < n_inputs_; ++u)
    for (std::int64_t c = 0; c < n_cells_; ++c) {
      double s = 0.0;
      for (const auto& [to, p] : row(c, u)) s += p * g[to];
      out[static_cast<std::size_t>(u) * n_cells_ + c] = s;
    }
}

LetterLookup letters_from(const SuccessorTable& table) {
  return [&table](std::int64_t cell, int layer) -> const std::vector<Letter>& { return table.letters(cell, layer); };
}

std::vector<int> SwitchSets::bf(std::int64_t cell, int layer) const {
  std::size_t r = static_cast<std::size_t>(layer) * n_cells + cell;
  return {bf_target.begin() + bf_offset[r], bf_target.begin() + bf_offset[r + 1]};
}

std::vector<std::int64_t> SwitchSets::fb(int w, int layer) const {
  std::size_t r = static_cast<std::size_t>(layer) * n_waypoints + w;
  return {fb_cells.begin() + fb_offset[r], fb_cells.begin() + fb_offset[r + 1]};
}

double cell_radius(const GridAbstraction& grid, const Mat& D) {
  const int n = grid.dim();
  double best = 0.0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    Vec h = 0.5 * grid.widths();
    for (int d = 0; d < n; ++d)
      if (mask & (1 << d)) h[d] = -h[d];
    best = std::max(best, d_norm(h, D));
  }
  return best;
}

SwitchSets compute_switch_sets(const GridAbstraction& grid, const WaypointModel& wm, const std::vector<double>& eps,
                               const Mat& D, const std::vector<bool>& layer_enabled) {
  SwitchSets s;
  s.n_cells = grid.n_cells();
  s.n_waypoints = wm.size();
  s.n_layers = static_cast<int>(eps.size());
  const int n = grid.dim();

  // sup of |v|_{D_w} over |v|_D <= 1
  Eigen::LLT<Mat> llt(D);
  require(llt.info() == Eigen::Success, "layer weighting must be positive definite");
  Mat Linv = llt.matrixL().solve(Mat::Identity(n, n));
  Mat M = Linv * wm.D_w * Linv.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  const double scale = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
  const double radius = cell_radius(grid, D);

  s.bf_offset.push_back(0);
  for (int i = 0; i < s.n_layers; ++i)
    for (std::int64_t c = 0; c < s.n_cells; ++c) {
      if (enabled(layer_enabled, i)) {
        const Vec r = grid.rep(c);
        for (int w = 0; w < wm.size(); ++w)
          if (d_norm(r - wm.points[w], wm.D_w) + eps[i] * scale <= wm.eps_w) s.bf_target.push_back(w);
      }
      s.bf_offset.push_back(s.bf_target.size());
    }

  s.fb_offset.push_back(0);
  for (int i = 0; i < s.n_layers; ++i)
    for (int w = 0; w < wm.size(); ++w) {
      const Ellipsoid e = output_ellipsoid(Mat::Identity(n, n), wm.D_w, wm.points[w], wm.eps_w);
      if (enabled(layer_enabled, i) && radius <= eps[i] && contained_in(e, grid.box())) {
        const Box bb = e.bounding_box();
        std::vector<int> lo(n), hi(n);
        for (int d = 0; d < n; ++d) {
          const auto& ed = grid.edges(d);
          int a = static_cast<int>(std::upper_bound(ed.begin(), ed.end(), bb.low[d]) - ed.begin()) - 1;
          int b = static_cast<int>(std::lower_bound(ed.begin(), ed.end(), bb.high[d]) - ed.begin()) - 1;
          lo[d] = std::clamp(a, 0, grid.counts()[d] - 1);
          hi[d] = std::clamp(b, 0, grid.counts()[d] - 1);
        }
        std::vector<int> idx = lo;
        while (true) {
          std::int64_t c = grid.flat_index(idx);
          if (intersects(e, grid.cell_box(c), true)) s.fb_cells.push_back(c);
          int d = n - 1;
          while (d >= 0 && idx[d] == hi[d]) {
            idx[d] = lo[d];
            --d;
          }
          if (d < 0) break;
          ++idx[d];
        }
      }
      s.fb_offset.push_back(s.fb_cells.size());
    }
  return s;
}

std::vector<int> edge_successors(const Dfa& dfa, const WaypointModel& wm, int q, int from, int to) {
  std::vector<int> out;
  for (const auto& word : wm.edge_words(from, to)) {
    int s = q;
    for (Letter l : word) s = dfa.next(s, l);
    out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

DpResult value_iteration(const Dfa& dfa, const DbProblem* db, const WaypointModel* wm, const SwitchSets* switches,
                         const DpOptions& opts) {
  require(db || wm, "value iteration needs a grid layer or a waypoint layer");
  require(!(db && wm) || switches, "combined iteration needs switch sets");
  DpResult r;
  r.n_states = dfa.n_states;
  const int NQ = dfa.n_states;
  auto trivial = [&](int q) { return dfa.is_accepting(q) || dfa.is_sink(q); };

  std::int64_t N = 0;
  int NR = 0;
  if (db) {
    require(db->transitions && db->letters, "grid problem needs transitions and letters");
    N = db->transitions->n_cells();
    NR = db->n_layers;
    require(db->delta.rows() == NR && db->delta.cols() == NR, "delta must be n_layers x n_layers");
    require(db->layer_enabled.empty() || static_cast<int>(db->layer_enabled.size()) == NR, "layer mask size");
    require(db->frozen.empty() || db->frozen.size() == static_cast<std::size_t>(NR * N), "frozen mask size");
    require(db->switch_choice.empty() || db->switch_choice.size() == static_cast<std::size_t>(NQ) * NR * N,
            "switch strategy size");
  }
  const int W = wm ? wm->size() : 0;
  r.n_layers = NR;
  r.n_cells = N;
  r.n_waypoints = W;
  const std::size_t db_size = static_cast<std::size_t>(NQ) * NR * N;
  const std::size_t df_size = static_cast<std::size_t>(W) * NQ;
  r.db.assign(db_size, 0.0);
  r.df.assign(df_size, 0.0);
  r.db_input.assign(db_size, -1);
  r.db_layer.assign(db_size, -1);
  r.db_waypoint.assign(db_size, -1);
  r.df_edge.assign(df_size, -1);
  r.df_layer.assign(df_size, -1);

  const int NU = db ? db->transitions->n_inputs() : 0;
  std::vector<double> g(static_cast<std::size_t>(N)), buf(static_cast<std::size_t>(N) * NU);
  std::vector<double> best(static_cast<std::size_t>(NR) * N);
  std::vector<int> best_u(static_cast<std::size_t>(NR) * N);
  std::vector<double> db_next, df_next;

  for (int it = 1; it <= opts.max_iterations; ++it) {
    db_next.assign(db_size, 0.0);
    df_next.assign(df_size, 0.0);

    if (db) {
      for (int q = 0; q < NQ; ++q) {
        if (trivial(q)) continue;
        for (int j = 0; j < NR; ++j) {
          if (!enabled(db->layer_enabled, j)) continue;
          for (std::int64_t c = 0; c < N; ++c) {
            const auto& ls = db->letters(c, j);
            double v = ls.empty() ? 0.0 : 1.0;
            for (Letter l : ls) {
              int qn = dfa.next(q, l);
              double x = dfa.is_accepting(qn) ? 1.0 : r.db[r.db_index(qn, j, c)];
              v = std::min(v, x);
            }
            g[static_cast<std::size_t>(c)] = v;
          }
          db->transitions->expectation_all(g.data(), buf.data());
          for (std::int64_t c = 0; c < N; ++c) {
            double b = buf[static_cast<std::size_t>(c)];
            int bu = 0;
            for (int u = 1; u < NU; ++u) {
              double x = buf[static_cast<std::size_t>(u) * N + c];
              if (x > b) {
                b = x;
                bu = u;
              }
            }
            best[static_cast<std::size_t>(j) * N + c] = b;
            best_u[static_cast<std::size_t>(j) * N + c] = bu;
          }
        }
        for (int i = 0; i < NR; ++i) {
          if (!enabled(db->layer_enabled, i)) continue;
          for (std::int64_t c = 0; c < N; ++c) {
            const std::size_t k = r.db_index(q, i, c);
            if (!db->frozen.empty() && db->frozen[static_cast<std::size_t>(i) * N + c]) continue;
            double v = -1.0;
            int bj = -1;
            auto consider = [&](int j) {
              if (!enabled(db->layer_enabled, j)) return;
              double x = clamp01(best[static_cast<std::size_t>(j) * N + c] - db->delta(i, j));
              if (x > v || (x == v && j < bj)) {
                v = x;
                bj = j;
              }
            };
            if (db->switch_choice.empty()) {
              for (int j = 0; j < NR; ++j) consider(j);
            } else {
              int s = db->switch_choice[k];
              if (s >= 0 && s < NR) consider(s);
              consider(i);
            }
            if (bj < 0) continue;
            db_next[k] = v;
            r.db_layer[k] = bj;
            r.db_input[k] = best_u[static_cast<std::size_t>(bj) * N + c];
            r.db_waypoint[k] = -1;
          }
        }
      }
    }

    if (wm) {
      for (int w = 0; w < W; ++w)
        for (int q = 0; q < NQ; ++q) {
          if (trivial(q)) continue;
          double v = -1.0;
          int be = -1;
          for (std::size_t e = 0; e < wm->edges[w].size(); ++e) {
            const int to = wm->edges[w][e].to;
            double m = 1.0;
            for (int qn : edge_successors(dfa, *wm, q, w, to))
              m = std::min(m, dfa.is_accepting(qn) ? 1.0 : r.df_value(to, qn));
            double x = clamp01(m - wm->delta_w);
            if (x > v) {
              v = x;
              be = static_cast<int>(e);
            }
          }
          const std::size_t k = static_cast<std::size_t>(w) * NQ + q;
          df_next[k] = std::max(v, 0.0);
          r.df_edge[k] = be;
          r.df_layer[k] = -1;
        }
    }

    if (db && wm) {
      std::vector<double> df_comb = df_next;
      for (int w = 0; w < W; ++w)
        for (int q = 0; q < NQ; ++q) {
          if (trivial(q)) continue;
          const std::size_t k = static_cast<std::size_t>(w) * NQ + q;
          for (int i = 0; i < NR; ++i) {
            auto cover = switches->fb(w, i);
            if (cover.empty()) continue;
            double m = 1.0;
            for (auto c : cover) m = std::min(m, db_next[r.db_index(q, i, c)]);
            if (m > df_comb[k]) {
              df_comb[k] = m;
              r.df_layer[k] = i;
            }
          }
        }
      for (int q = 0; q < NQ; ++q) {
        if (trivial(q)) continue;
        for (int i = 0; i < NR; ++i)
          for (std::int64_t c = 0; c < N; ++c) {
            const std::size_t k = r.db_index(q, i, c);
            if (!db->frozen.empty() && db->frozen[static_cast<std::size_t>(i) * N + c]) continue;
            for (int w : switches->bf(c, i)) {
              double x = df_next[static_cast<std::size_t>(w) * NQ + q];
              if (x > db_next[k]) {
                db_next[k] = x;
                r.db_waypoint[k] = w;
              }
            }
          }
      }
      df_next.swap(df_comb);
    }

    double res = 0.0;
    for (std::size_t k = 0; k < db_size; ++k) {
      double d = db_next[k] - r.db[k];
      if (d < -1e-12) r.monotone = false;
      if (db_next[k] < 0.0 || db_next[k] > 1.0) r.bounded = false;
      res = std::max(res, std::abs(d));
    }
    for (std::size_t k = 0; k < df_size; ++k) {
      double d = df_next[k] - r.df[k];
      if (d < -1e-12) r.monotone = false;
      if (df_next[k] < 0.0 || df_next[k] > 1.0) r.bounded = false;
      res = std::max(res, std::abs(d));
    }
    r.db.swap(db_next);
    r.df.swap(df_next);
    r.iterations = it;
    r.residual = res;
    if (opts.observer) opts.observer(it, res);
    if (res < opts.tolerance) {
      r.converged = true;
      break;
    }
  }
  return r;
}

std::vector<int> map_switch_strategy(const DpResult& coarse, const GridAbstraction& coarse_grid,
                                     const GridAbstraction& fine_grid) {
  const int NQ = coarse.n_states, NR = coarse.n_layers;
  const std::int64_t N = fine_grid.n_cells();
  std::vector<std::int64_t> nearest(static_cast<std::size_t>(N));
  for (std::int64_t c = 0; c < N; ++c) {
    // clamp into the coarse box so cells outside it fall back to the closest coarse cell
    Vec x = fine_grid.rep(c).cwiseMax(coarse_grid.box().low).cwiseMin(coarse_grid.box().high);
    nearest[static_cast<std::size_t>(c)] = coarse_grid.project(x);
  }
  std::vector<int> out(static_cast<std::size_t>(NQ) * NR * N);
  for (int q = 0; q < NQ; ++q)
    for (int i = 0; i < NR; ++i)
      for (std::int64_t c = 0; c < N; ++c) {
        int j = coarse.db_layer[coarse.db_index(q, i, nearest[static_cast<std::size_t>(c)])];
        out[(static_cast<std::size_t>(q) * NR + i) * N + c] = j >= 0 ? j : i;
      }
  return out;
}

}  // namespace mlsynth
