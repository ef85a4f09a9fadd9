#include "mlsynth/controller.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "mlsynth/errors.hpp"

namespace mlsynth {

InitialValue certified_value(const SynthesisContext& ctx, const Vec& x0) {
  require(ctx.model && ctx.labels && ctx.dfa && ctx.result, "synthesis context is incomplete");
  const Dfa& dfa = *ctx.dfa;
  InitialValue iv;
  iv.q = dfa.next(dfa.initial, output_letter(*ctx.model, *ctx.labels, x0));
  if (dfa.is_accepting(iv.q)) {
    iv.value = 1.0;
    iv.origin = Origin::Accepting;
    return iv;
  }
  if (dfa.is_sink(iv.q)) return iv;
  double best = -1.0;
  if (ctx.grid && ctx.result->n_layers > 0) {
    std::int64_t cell = ctx.grid->project(x0);
    if (cell != ctx.grid->sink())
      for (int i = 0; i < ctx.result->n_layers; ++i) {
        if (!ctx.layer_valid.empty() && !ctx.layer_valid[static_cast<std::size_t>(i)]) continue;
        double v = ctx.result->db_value(iv.q, i, cell);
        if (v > best) {
          best = v;
          iv.origin = Origin::Grid;
          iv.layer = i;
          iv.cell = cell;
        }
      }
  }
  if (ctx.waypoints && ctx.result->n_waypoints > 0)
    for (int w : ctx.waypoints->containing(x0)) {
      double v = ctx.result->df_value(w, iv.q);
      if (v > best) {
        best = v;
        iv.origin = Origin::Waypoint;
        iv.waypoint = w;
        iv.layer = -1;
        iv.cell = -1;
      }
    }
  iv.value = std::max(best, 0.0);
  return iv;
}

RefinedController::RefinedController(const SynthesisContext& ctx) : ctx_(ctx) {
  require(ctx.model && ctx.labels && ctx.dfa && ctx.result, "synthesis context is incomplete");
}

bool RefinedController::accepted() const { return q_ >= 0 && ctx_.dfa->is_accepting(q_); }
bool RefinedController::rejected() const { return q_ >= 0 && ctx_.dfa->is_sink(q_); }

void RefinedController::reset(const Vec& x0) {
  InitialValue iv = certified_value(ctx_, x0);
  q_ = iv.q;
  exits_ = 0;
  lost_ = false;
  edge_ = -1;
  edge_step_ = 0;
  on_waypoints_ = iv.origin == Origin::Waypoint || !ctx_.grid;
  waypoint_ = iv.waypoint;
  if (on_waypoints_ && waypoint_ < 0 && ctx_.waypoints) {
    auto c = ctx_.waypoints->containing(x0);
    if (!c.empty()) waypoint_ = c.front();
  }
  layer_ = iv.layer;
  if (!on_waypoints_ && layer_ < 0) enter_grid(x0);
}

void RefinedController::enter_grid(const Vec& x) {
  on_waypoints_ = false;
  layer_ = -1;
  std::int64_t cell = ctx_.grid->project(x);
  double best = -1.0;
  for (int i = 0; i < ctx_.result->n_layers; ++i) {
    if (!ctx_.layer_valid.empty() && !ctx_.layer_valid[static_cast<std::size_t>(i)]) continue;
    double v = (cell == ctx_.grid->sink() || ctx_.dfa->is_accepting(q_) || ctx_.dfa->is_sink(q_))
                   ? 0.0
                   : ctx_.result->db_value(q_, i, cell);
    if (v > best) {
      best = v;
      layer_ = i;
    }
  }
}

Vec RefinedController::clamp_input(const Vec& u) const {
  return u.cwiseMax(ctx_.model->input_box.low).cwiseMin(ctx_.model->input_box.high);
}

Vec RefinedController::input(const Vec& x) {
  const Vec idle = clamp_input(Vec::Zero(ctx_.model->nu()));
  if (accepted() || rejected() || lost_) return idle;
  const DpResult& r = *ctx_.result;
  // switches between the grid and the waypoints take no time; a bounded number per step
  for (int hop = 0; hop < 4; ++hop) {
    if (on_waypoints_) {
      const WaypointModel& wm = *ctx_.waypoints;
      if (waypoint_ < 0) {
        lost_ = true;
        return idle;
      }
      if (edge_ < 0) {
        const std::size_t k = static_cast<std::size_t>(waypoint_) * r.n_states + q_;
        if (r.df_layer[k] >= 0 && ctx_.grid) {
          on_waypoints_ = false;
          layer_ = r.df_layer[k];
          continue;
        }
        edge_ = r.df_edge[k];
        edge_step_ = 0;
        if (edge_ < 0) return idle;
      }
      const WaypointEdge& e = wm.edges[waypoint_][edge_];
      const Vec& xn = e.path[edge_step_];
      return clamp_input(e.inputs[edge_step_] + wm.K * (x - xn));
    }
    if (layer_ < 0) {
      lost_ = true;
      return idle;
    }
    const GridAbstraction& g = *ctx_.grid;
    std::int64_t cell = g.project(x);
    if (cell == g.sink()) {
      ++exits_;
      lost_ = true;
      return idle;
    }
    const std::size_t k = r.db_index(q_, layer_, cell);
    if (r.db_waypoint[k] >= 0 && ctx_.waypoints) {
      on_waypoints_ = true;
      waypoint_ = r.db_waypoint[k];
      edge_ = -1;
      continue;
    }
    if (r.db_input[k] < 0) return idle;
    Vec u = g.inputs()[static_cast<std::size_t>(r.db_input[k])];
    if (ctx_.layers && ctx_.layers->K.size() > 0) u += ctx_.layers->K * (x - g.rep(cell));
    layer_ = r.db_layer[k];
    return clamp_input(u);
  }
  return idle;
}

void RefinedController::observe(const Vec& x_next) {
  q_ = ctx_.dfa->next(q_, output_letter(*ctx_.model, *ctx_.labels, x_next));
  if (!on_waypoints_ || edge_ < 0) return;
  const WaypointModel& wm = *ctx_.waypoints;
  if (++edge_step_ < wm.n_s) return;
  waypoint_ = wm.edges[waypoint_][edge_].to;
  edge_ = -1;
  if (wm.contains(waypoint_, x_next)) return;
  // the tube was left: the event the edge deviation budgets for
  ++exits_;
  if (ctx_.grid && ctx_.grid->project(x_next) != ctx_.grid->sink()) enter_grid(x_next);
}

int default_horizon(const LtiGmdp& model, const Dfa& dfa) {
  int live = 0;
  for (int q = 0; q < dfa.n_states; ++q)
    if (!dfa.is_accepting(q) && !dfa.is_sink(q)) ++live;
  const double diameter = model.state_box.extent().norm();
  Vec u_reach = model.input_box.low.cwiseAbs().cwiseMax(model.input_box.high.cwiseAbs());
  const double stride = Eigen::JacobiSVD<Mat>(model.B).singularValues()(0) * u_reach.norm();
  const int crossing = stride > 0 ? static_cast<int>(std::ceil(diameter / stride)) : 100;
  return 10 * std::max(1, live) * std::max(1, crossing);
}

McResult monte_carlo(const SynthesisContext& ctx, const Vec& x0, int runs, int horizon, std::uint64_t seed,
                     Trace* first_trace) {
  require(runs >= 1 && horizon >= 1, "runs and horizon must be at least 1");
  const LtiGmdp& m = *ctx.model;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.noise_cov);
  const Mat root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                   es.eigenvectors().transpose();
  McResult res;
  res.runs = runs;
  RefinedController ctrl(ctx);
  for (int run = 0; run < runs; ++run) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> nd(0.0, 1.0);
    Trace* tr = (run == 0) ? first_trace : nullptr;
    if (tr) *tr = Trace{};
    Vec x = x0;
    ctrl.reset(x);
    if (tr) {
      tr->states.push_back(x);
      tr->letters.push_back(output_letter(m, *ctx.labels, x));
      tr->automaton.push_back(ctrl.automaton_state());
    }
    for (int t = 0; t < horizon && !ctrl.accepted() && !ctrl.rejected(); ++t) {
      Vec u = ctrl.input(x);
      Vec z(m.nw());
      for (int k = 0; k < m.nw(); ++k) z[k] = nd(rng);
      x = step(m, x, u, m.noise_mean + root * z);
      ctrl.observe(x);
      if (tr) {
        tr->inputs.push_back(u);
        tr->states.push_back(x);
        tr->letters.push_back(output_letter(m, *ctx.labels, x));
        tr->automaton.push_back(ctrl.automaton_state());
      }
    }
    if (ctrl.accepted()) ++res.successes;
    res.relation_exits += ctrl.relation_exits();
    if (tr) tr->satisfied = ctrl.accepted();
  }
  const double p = static_cast<double>(res.successes) / runs;
  res.probability = p;
  res.std_error = std::sqrt(p * (1.0 - p) / runs);
  res.half_width = 1.96 * res.std_error;
  return res;
}

}  // namespace mlsynth
