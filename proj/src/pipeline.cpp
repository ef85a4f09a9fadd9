#include "mlsynth/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mlsynth/errors.hpp"
#include "mlsynth/geometry.hpp"

namespace mlsynth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Stopwatch {
 public:
  Stopwatch(std::map<std::string, double>& sink, std::string key)
      : sink_(sink), key_(std::move(key)), t0_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    sink_[key_] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::map<std::string, double>& sink_;
  std::string key_;
  std::chrono::steady_clock::time_point t0_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / name);
  if (!out) throw ResourceError("cannot write '" + (fs::path(dir) / name).string() + "'");
  out << std::setprecision(9);
  return out;
}

json mat_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vec_json(const Vec& v) {
  json a = json::array();
  for (int k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

void coords_header(std::ostream& out, int n, const std::string& prefix = "x") {
  for (int d = 0; d < n; ++d) out << prefix << d + 1 << ',';
}

void coords(std::ostream& out, const Vec& x) {
  for (int d = 0; d < x.size(); ++d) out << x[d] << ',';
}

}  // namespace

Pipeline::Pipeline(RunConfig c) : cfg(std::move(c)) {
  Stopwatch sw(seconds, "spec");
  if (!cfg.formula.empty()) {
    dfa = to_dfa(parse_scltl(cfg.formula, cfg.labels.propositions));
  } else {
    dfa = reorder_props(Dfa::from_text(read_file(cfg.dfa_file)), cfg.labels.propositions);
  }
  D = cfg.D.size() > 0 ? cfg.D : weighting_matrix(cfg.model.C);
}

void Pipeline::run_quantify() {
  if (layers || !uses_grid()) return;
  Stopwatch sw(seconds, "quantify");
  const Box box = cfg.grid_box.value_or(cfg.model.state_box);
  layers = std::make_unique<LayerSpec>(layer_matrix(cfg.model, D, cfg.eps, beta_box(box, cfg.counts, cfg.beta), cfg.K));
}

void Pipeline::run_abstract() {
  if (grid || !uses_grid()) return;
  Stopwatch sw(seconds, "abstract");
  GridOptions opts;
  opts.beta = cfg.beta;
  opts.memory_budget_bytes = cfg.memory_budget_bytes;
  grid = std::make_unique<GridAbstraction>(cfg.model, cfg.grid_box.value_or(cfg.model.state_box), cfg.counts,
                                           cfg.input_counts, opts);
  table = std::make_unique<SuccessorTable>(*grid, cfg.model, cfg.labels, D, cfg.eps, cfg.bbox_fallback);
  transitions = std::make_unique<GridTransitions>(*grid);
  const double radius = cell_radius(*grid, D);
  layer_valid.assign(cfg.eps.size(), true);
  for (std::size_t i = 0; i < cfg.eps.size(); ++i)
    if (radius > cfg.eps[i]) {
      layer_valid[i] = false;
      std::ostringstream msg;
      msg << "layer " << i << " (eps " << cfg.eps[i] << ") is finer than the cell radius " << radius
          << "; it is left out";
      warnings.push_back(msg.str());
    }
}

void Pipeline::run_waypoints() {
  if (waypoints || !uses_waypoints()) return;
  Stopwatch sw(seconds, "waypoints");
  try {
    waypoints = std::make_unique<WaypointModel>(build_waypoint_model(cfg.model, cfg.labels, cfg.waypoints));
  } catch (const PartialModelError& e) {
    waypoints = std::make_unique<WaypointModel>(e.component);
    warnings.push_back(e.what());
    throw;
  }
}

void Pipeline::run_switch_strategy() {
  if (!switch_strategy.empty() || cfg.mode != Mode::DbMultilayer || cfg.surrogate_counts.empty()) return;
  run_abstract();
  run_quantify();
  Stopwatch sw(seconds, "switch_strategy");
  GridOptions opts;
  opts.beta = cfg.beta;
  opts.memory_budget_bytes = cfg.memory_budget_bytes;
  GridAbstraction coarse(cfg.model, grid->box(), cfg.surrogate_counts, cfg.input_counts, opts);
  SuccessorTable coarse_table(coarse, cfg.model, cfg.labels, D, cfg.eps, cfg.bbox_fallback);
  GridTransitions coarse_trans(coarse);
  DbProblem p;
  p.transitions = &coarse_trans;
  p.letters = letters_from(coarse_table);
  p.n_layers = static_cast<int>(cfg.eps.size());
  p.delta = layers->delta;
  DpOptions o;
  o.tolerance = cfg.tolerance;
  o.max_iterations = cfg.max_iterations;
  DpResult r = value_iteration(dfa, &p, nullptr, nullptr, o);
  switch_strategy = map_switch_strategy(r, coarse, *grid);
}

void Pipeline::run_synthesize() {
  if (result) return;
  if (uses_grid()) {
    run_abstract();
    run_quantify();
    run_switch_strategy();
  }
  if (uses_waypoints()) run_waypoints();
  Stopwatch sw(seconds, "synthesize");
  DbProblem p;
  if (uses_grid()) {
    p.transitions = transitions.get();
    p.letters = letters_from(*table);
    p.n_layers = static_cast<int>(cfg.eps.size());
    p.delta = layers->delta;
    p.layer_enabled = layer_valid;
    p.switch_choice = switch_strategy;
    if (!cfg.frozen.empty()) {
      p.frozen.assign(static_cast<std::size_t>(p.n_layers) * grid->n_cells(), false);
      for (std::int64_t c = 0; c < grid->n_cells(); ++c) {
        Vec r = grid->rep(c);
        for (const auto& b : cfg.frozen)
          if (b.contains(r))
            for (int i = 0; i < p.n_layers; ++i) p.frozen[static_cast<std::size_t>(i) * grid->n_cells() + c] = true;
      }
    }
  }
  if (uses_grid() && uses_waypoints())
    switches = std::make_unique<SwitchSets>(compute_switch_sets(*grid, *waypoints, cfg.eps, D, layer_valid));
  DpOptions o;
  o.tolerance = cfg.tolerance;
  o.max_iterations = cfg.max_iterations;
  result = std::make_unique<DpResult>(value_iteration(dfa, uses_grid() ? &p : nullptr,
                                                      uses_waypoints() ? waypoints.get() : nullptr, switches.get(), o));
  if (!result->converged) {
    std::ostringstream msg;
    msg << "value iteration stopped after " << result->iterations << " sweeps with residual " << result->residual
        << "; values remain lower bounds";
    warnings.push_back(msg.str());
  }
}

SynthesisContext Pipeline::context() const {
  SynthesisContext ctx;
  ctx.model = &cfg.model;
  ctx.labels = &cfg.labels;
  ctx.dfa = &dfa;
  ctx.grid = grid.get();
  ctx.layers = layers.get();
  ctx.layer_valid = layer_valid;
  ctx.waypoints = uses_waypoints() ? waypoints.get() : nullptr;
  ctx.result = result.get();
  return ctx;
}

std::vector<double> Pipeline::value_field() const {
  require(result != nullptr, "value field needs a synthesized result");
  SynthesisContext ctx = context();
  std::vector<double> out;
  if (grid) {
    out.reserve(static_cast<std::size_t>(grid->n_cells()));
    for (std::int64_t c = 0; c < grid->n_cells(); ++c) out.push_back(certified_value(ctx, grid->rep(c)).value);
  } else if (waypoints) {
    for (const auto& x : waypoints->points) out.push_back(certified_value(ctx, x).value);
  }
  return out;
}

void Pipeline::run_validate() {
  run_synthesize();
  Stopwatch sw(seconds, "validate");
  const int horizon = cfg.horizon > 0 ? cfg.horizon : default_horizon(cfg.model, dfa);
  SynthesisContext ctx = context();
  validation.clear();
  for (std::size_t k = 0; k < cfg.initial_states.size(); ++k) {
    ValidationRow row;
    row.x0 = cfg.initial_states[k];
    row.certified = certified_value(ctx, row.x0);
    const std::uint64_t seed = cfg.validation_seed + 0x9E3779B97F4A7C15ULL * (k + 1);
    row.mc = monte_carlo(ctx, row.x0, cfg.runs, horizon, seed, k == 0 ? &first_trace : nullptr);
    row.sound = row.mc.probability + 3.0 * row.mc.std_error >= row.certified.value;
    validation.push_back(row);
  }
}

void write_layerspec(const Pipeline& p, const std::string& dir) {
  require(p.layers != nullptr, "layer specification not computed");
  const LayerSpec& L = *p.layers;
  auto csv = open_out(dir, "layerspec.csv");
  csv << "i,j,eps_i,eps_j,delta,lambda\n";
  for (int i = 0; i < L.n_layers(); ++i)
    for (int j = 0; j < L.n_layers(); ++j)
      csv << i << ',' << j << ',' << L.eps[i] << ',' << L.eps[j] << ',' << L.delta(i, j) << ',' << L.lambda(i, j)
          << '\n';
  auto txt = open_out(dir, "layerspec.txt");
  txt << "eps:";
  for (double e : L.eps) txt << ' ' << e;
  txt << "\ndelta (row: from layer, column: to layer):\n" << L.delta << "\nD:\n" << L.D << "\nK:\n" << L.K << '\n';
  for (int i = 0; i < L.n_layers(); ++i)
    for (int j = 0; j < L.n_layers(); ++j)
      txt << "F[" << i << "][" << j << "] (lambda " << L.lambda(i, j) << "):\n" << L.F[i][j] << '\n';
}

void write_dfa(const Pipeline& p, const std::string& dir) {
  auto out = open_out(dir, "dfa.txt");
  out << p.dfa.to_text();
}

void write_abstraction_summary(const Pipeline& p, const std::string& dir) {
  require(p.grid != nullptr, "abstraction not built");
  const GridAbstraction& g = *p.grid;
  json j;
  j["counts"] = g.counts();
  j["box"] = {{"low", vec_json(g.box().low)}, {"high", vec_json(g.box().high)}};
  j["widths"] = vec_json(g.widths());
  j["beta"] = {{"low", vec_json(g.beta_box().low)}, {"high", vec_json(g.beta_box().high)}};
  j["cells"] = g.n_cells();
  j["inputs"] = g.n_inputs();
  j["factorized_kernel"] = g.factorized();
  j["memory_estimate_bytes"] = g.memory_estimate();
  j["cell_radius"] = cell_radius(g, p.D);
  j["eps"] = p.cfg.eps;
  j["layer_valid"] = p.layer_valid;
  auto out = open_out(dir, "abstraction.json");
  out << j.dump(2) << '\n';
}

json waypoints_to_json(const WaypointModel& wm) {
  json j;
  j["eps_w"] = wm.eps_w;
  j["D_w"] = mat_json(wm.D_w);
  j["K"] = mat_json(wm.K);
  j["n_s"] = wm.n_s;
  j["delta_w"] = wm.delta_w;
  j["rounds"] = wm.rounds;
  j["points"] = json::array();
  for (int w = 0; w < wm.size(); ++w) j["points"].push_back({{"x", vec_json(wm.points[w])}, {"letter", wm.letters[w]}});
  j["edges"] = json::array();
  for (int w = 0; w < wm.size(); ++w)
    for (const auto& e : wm.edges[w]) {
      json inputs = json::array();
      for (const auto& u : e.inputs) inputs.push_back(vec_json(u));
      j["edges"].push_back({{"from", w}, {"to", e.to}, {"inputs", inputs}});
    }
  return j;
}

void write_waypoints(const Pipeline& p, const std::string& dir) {
  require(p.waypoints != nullptr, "waypoint model not built");
  json j = waypoints_to_json(*p.waypoints);
  j["strongly_connected"] = strongly_connected(*p.waypoints);
  auto out = open_out(dir, "waypoints.json");
  out << std::setprecision(17) << j.dump(2) << '\n';
}

void write_values(const Pipeline& p, const std::string& dir) {
  require(p.result != nullptr, "no synthesis result");
  const DpResult& r = *p.result;
  const Dfa& dfa = p.dfa;
  auto live = [&](int q) { return !dfa.is_accepting(q) && !dfa.is_sink(q); };
  if (p.grid) {
    const GridAbstraction& g = *p.grid;
    const int n = g.dim();
    auto values = open_out(dir, "values.csv");
    auto policy = open_out(dir, "policy.csv");
    coords_header(values, n);
    values << "q,layer,value\n";
    coords_header(policy, n);
    policy << "q,layer,input_index,";
    coords_header(policy, p.cfg.model.nu(), "u");
    policy << "switch_target,waypoint_target\n";
    for (int q = 0; q < dfa.n_states; ++q) {
      if (!live(q)) continue;
      for (int i = 0; i < r.n_layers; ++i) {
        if (!p.layer_valid.empty() && !p.layer_valid[static_cast<std::size_t>(i)]) continue;
        for (std::int64_t c = 0; c < g.n_cells(); ++c) {
          const Vec x = g.rep(c);
          const std::size_t k = r.db_index(q, i, c);
          coords(values, x);
          values << q << ',' << i << ',' << r.db[k] << '\n';
          coords(policy, x);
          policy << q << ',' << i << ',' << r.db_input[k] << ',';
          if (r.db_input[k] >= 0)
            coords(policy, g.inputs()[static_cast<std::size_t>(r.db_input[k])]);
          else
            for (int d = 0; d < p.cfg.model.nu(); ++d) policy << "nan,";
          policy << r.db_layer[k] << ',' << r.db_waypoint[k] << '\n';
        }
      }
    }
    auto field = p.value_field();
    auto prob = open_out(dir, "probability.csv");
    coords_header(prob, n);
    prob << "value\n";
    for (std::int64_t c = 0; c < g.n_cells(); ++c) {
      coords(prob, g.rep(c));
      prob << field[static_cast<std::size_t>(c)] << '\n';
    }
  }
  if (p.waypoints && p.uses_waypoints()) {
    const WaypointModel& wm = *p.waypoints;
    auto out = open_out(dir, "waypoint_values.csv");
    out << "waypoint,";
    coords_header(out, p.cfg.model.nx());
    out << "letter,q,value,edge_target,switch_layer\n";
    for (int w = 0; w < wm.size(); ++w)
      for (int q = 0; q < dfa.n_states; ++q) {
        if (!live(q)) continue;
        const std::size_t k = static_cast<std::size_t>(w) * r.n_states + q;
        const int e = r.df_edge[k];
        out << w << ',';
        coords(out, wm.points[w]);
        out << wm.letters[w] << ',' << q << ',' << r.df[k] << ',' << (e >= 0 ? wm.edges[w][e].to : -1) << ','
            << r.df_layer[k] << '\n';
      }
  }
}

void write_validation(const Pipeline& p, const std::string& dir) {
  const int n = p.cfg.model.nx();
  auto out = open_out(dir, "validation.csv");
  coords_header(out, n);
  out << "certified,origin,empirical,std_error,half_width,runs,relation_exits,sound\n";
  for (const auto& row : p.validation) {
    coords(out, row.x0);
    const char* origin = row.certified.origin == Origin::Grid       ? "grid"
                         : row.certified.origin == Origin::Waypoint ? "waypoint"
                         : row.certified.origin == Origin::Accepting ? "accepting"
                                                                      : "none";
    out << row.certified.value << ',' << origin << ',' << row.mc.probability << ',' << row.mc.std_error << ','
        << row.mc.half_width << ',' << row.mc.runs << ',' << row.mc.relation_exits << ',' << (row.sound ? 1 : 0)
        << '\n';
  }
  if (p.first_trace.states.empty()) return;
  auto tr = open_out(dir, "trace.csv");
  tr << "t,";
  coords_header(tr, n);
  coords_header(tr, p.cfg.model.nu(), "u");
  coords_header(tr, p.cfg.model.ny(), "y");
  tr << "letter,q\n";
  const Trace& t = p.first_trace;
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    tr << k << ',';
    coords(tr, t.states[k]);
    if (k < t.inputs.size())
      coords(tr, t.inputs[k]);
    else
      for (int d = 0; d < p.cfg.model.nu(); ++d) tr << "nan,";
    coords(tr, p.cfg.model.C * t.states[k]);
    tr << p.cfg.labels.letter_name(t.letters[k]) << ',' << t.automaton[k] << '\n';
  }
}

void write_manifest(const Pipeline& p, const std::string& dir, const std::vector<std::string>& stages) {
  json j;
  j["tool"] = "mlsynth";
  j["version"] = "0.1.0";
  j["config"] = p.cfg.source;
  j["mode"] = mode_name(p.cfg.mode);
  j["stages"] = stages;
  j["seconds"] = p.seconds;
  j["warnings"] = p.warnings;
  j["dfa_states"] = p.dfa.n_states;
  if (p.cfg.has_waypoints) j["waypoint_seed"] = p.cfg.waypoints.seed;
  j["validation_seed"] = p.cfg.validation_seed;
  if (p.layers) j["delta"] = mat_json(p.layers->delta);
  if (p.result) {
    j["iterations"] = p.result->iterations;
    j["converged"] = p.result->converged;
    j["residual"] = p.result->residual;
    j["monotone"] = p.result->monotone;
    j["bounded"] = p.result->bounded;
  }
  if (p.waypoints) {
    j["waypoints"] = p.waypoints->size();
    j["waypoint_edges"] = p.waypoints->edge_count();
  }
  auto out = open_out(dir, "manifest.json");
  out << j.dump(2) << '\n';
}

}  // namespace mlsynth
