#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mlsynth/errors.hpp"
#include "mlsynth/pipeline.hpp"

namespace mlsynth {

using nlohmann::json;

namespace {

double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw ConfigError(what + " must be a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(what + " must be finite");
  return v;
}

Vec vec(const json& j, const std::string& what, int n = -1) {
  if (!j.is_array()) throw ConfigError(what + " must be a list of numbers");
  Vec v(static_cast<int>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<int>(k)] = number(j[k], what);
  if (n >= 0 && v.size() != n) throw ConfigError(what + " must have " + std::to_string(n) + " entries");
  return v;
}

// A nested list, or a number meaning that multiple of the identity.
Mat mat(const json& j, const std::string& what, int rows, int cols) {
  if (j.is_number()) {
    if (cols < 0) cols = rows;
    if (rows < 0 || rows != cols) throw ConfigError(what + " is not square, give it as a nested list");
    return number(j, what) * Mat::Identity(rows, cols);
  }
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a nested list of numbers");
  Mat m(static_cast<int>(j.size()), static_cast<int>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    Vec row = vec(j[r], what);
    if (row.size() != m.cols()) throw ConfigError(what + " has rows of different lengths");
    m.row(static_cast<int>(r)) = row.transpose();
  }
  if ((rows >= 0 && m.rows() != rows) || (cols >= 0 && m.cols() != cols))
    throw ConfigError(what + " must be " + std::to_string(rows) + " x " + std::to_string(cols));
  return m;
}

Box box(const json& j, const std::string& what, int n) {
  if (!j.is_object() || !j.contains("low") || !j.contains("high"))
    throw ConfigError(what + " needs 'low' and 'high'");
  try {
    return Box(vec(j["low"], what + ".low", n), vec(j["high"], what + ".high", n));
  } catch (const ContractViolation& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::vector<int> ints(const json& j, const std::string& what, int n) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    throw ConfigError(what + " must list " + std::to_string(n) + " integers");
  std::vector<int> out;
  for (const auto& x : j) {
    if (!x.is_number_integer() || x.get<long>() < 1) throw ConfigError(what + " entries must be positive integers");
    out.push_back(x.get<int>());
  }
  return out;
}

const json& need(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + " needs '" + key + "'");
  return j[key];
}

}  // namespace

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::DbSingle: return "db-single";
    case Mode::DbMultilayer: return "db-multilayer";
    case Mode::DfOnly: return "df-only";
    case Mode::Heterogeneous: return "heterogeneous";
  }
  return "?";
}

RunConfig parse_config(const json& root_in) {
  // manifests carry the configuration they were produced from
  const json& j = root_in.contains("config") && root_in["config"].is_object() ? root_in["config"] : root_in;
  RunConfig c;
  c.source = j;
  c.name = j.value("name", "run");
  const std::string mode = need(j, "mode", "config").get<std::string>();
  if (mode == "db-single")
    c.mode = Mode::DbSingle;
  else if (mode == "db-multilayer")
    c.mode = Mode::DbMultilayer;
  else if (mode == "df-only")
    c.mode = Mode::DfOnly;
  else if (mode == "heterogeneous")
    c.mode = Mode::Heterogeneous;
  else
    throw ConfigError("unknown mode '" + mode + "'");

  const json& m = need(j, "model", "config");
  c.model.state_box = box(need(m, "state_box", "model"), "model.state_box", -1);
  const int n = c.model.state_box.dim();
  c.model.input_box = box(need(m, "input_box", "model"), "model.input_box", -1);
  const int nu = c.model.input_box.dim();
  c.model.A = mat(need(m, "A", "model"), "model.A", n, n);
  c.model.B = mat(need(m, "B", "model"), "model.B", n, nu);
  c.model.Bw = mat(need(m, "Bw", "model"), "model.Bw", n, -1);
  const int nw = static_cast<int>(c.model.Bw.cols());
  c.model.C = m.contains("C") ? mat(m["C"], "model.C", -1, n) : Mat::Identity(n, n);
  c.model.noise_mean = m.contains("noise_mean") ? vec(m["noise_mean"], "model.noise_mean", nw) : Vec::Zero(nw);
  c.model.noise_cov = m.contains("noise_cov") ? mat(m["noise_cov"], "model.noise_cov", nw, nw) : Mat::Identity(nw, nw);
  c.model.x0 = m.contains("x0") ? vec(m["x0"], "model.x0", n) : c.model.state_box.center();
  try {
    c.model.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  const json& l = need(j, "labels", "config");
  std::vector<Region> regions;
  for (const auto& r : need(l, "regions", "labels"))
    regions.push_back({need(r, "name", "region").get<std::string>(), box(r, "region", c.model.ny())});
  std::vector<std::string> props;
  if (l.contains("propositions")) props = l["propositions"].get<std::vector<std::string>>();
  try {
    c.labels = LabelMap(regions, props);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("labels: ") + e.what());
  }

  const json& s = need(j, "spec", "config");
  c.formula = s.value("formula", "");
  c.dfa_file = s.value("dfa_file", "");
  if (c.formula.empty() == c.dfa_file.empty()) throw ConfigError("spec needs exactly one of 'formula' and 'dfa_file'");

  const bool grid_mode = c.mode != Mode::DfOnly;
  if (grid_mode) {
    const json& g = need(j, "grid", "config");
    c.counts = ints(need(g, "counts", "grid"), "grid.counts", n);
    if (g.contains("box")) c.grid_box = box(g["box"], "grid.box", n);
    c.input_counts = ints(need(g, "input_counts", "grid"), "grid.input_counts", nu);
    if (g.contains("surrogate_counts")) c.surrogate_counts = ints(g["surrogate_counts"], "grid.surrogate_counts", n);
    const std::string beta = g.value("beta", "half_width");
    if (beta == "half_width")
      c.beta = BetaPolicy::HalfWidth;
    else if (beta == "full_width")
      c.beta = BetaPolicy::FullWidth;
    else
      throw ConfigError("grid.beta must be 'half_width' or 'full_width'");
    c.bbox_fallback = g.value("bbox_fallback", false);
    if (g.contains("memory_budget_mb")) c.memory_budget_bytes = number(g["memory_budget_mb"], "grid.memory_budget_mb") * 1e6;

    const json& ly = need(j, "layers", "config");
    for (const auto& e : need(ly, "eps", "layers")) {
      double v = number(e, "layers.eps");
      if (v <= 0) throw ConfigError("layers.eps entries must be positive");
      c.eps.push_back(v);
    }
    if (c.eps.empty()) throw ConfigError("layers.eps must not be empty");
    if (ly.contains("D")) c.D = mat(ly["D"], "layers.D", n, n);
    if (ly.contains("K")) c.K = mat(ly["K"], "layers.K", nu, n);
    if (c.mode == Mode::DbSingle && c.eps.size() != 1)
      throw ConfigError("mode db-single takes exactly one precision in layers.eps");
    if (!c.surrogate_counts.empty() && c.mode != Mode::DbMultilayer)
      throw ConfigError("grid.surrogate_counts is only used in mode db-multilayer");
  }

  c.has_waypoints = c.mode == Mode::DfOnly || c.mode == Mode::Heterogeneous;
  if (c.has_waypoints) {
    const json& w = need(j, "waypoints", "config");
    auto& p = c.waypoints;
    p.samples = w.value("samples", 48);
    p.n_s = w.value("n_s", 3);
    p.delta_w = w.contains("delta_w") ? number(w["delta_w"], "waypoints.delta_w") : 1e-4;
    p.K = w.contains("K") ? mat(w["K"], "waypoints.K", nu, n) : Mat::Zero(nu, n);
    p.d_w = w.contains("d_w") ? number(w["d_w"], "waypoints.d_w") : 1.0;
    p.seed = w.value("seed", std::uint64_t{1});
    const std::string margin = w.value("input_margin", "worst_case");
    if (margin == "worst_case")
      p.margin = InputMargin::WorstCase;
    else if (margin == "none")
      p.margin = InputMargin::None;
    else
      throw ConfigError("waypoints.input_margin must be 'worst_case' or 'none'");
    p.tube_points = w.value("tube_points", 32);
    p.max_rounds = w.value("max_rounds", 10);
    p.seed_regions = w.value("seed_regions", true);
    if (w.contains("anchors"))
      for (const auto& b : w["anchors"]) p.anchor_boxes.push_back(box(b, "waypoints.anchors", n));
    if (w.value("anchor_in_grid", false)) {
      if (!grid_mode) throw ConfigError("waypoints.anchor_in_grid needs grid layers");
      p.anchor_boxes.push_back(c.grid_box.value_or(c.model.state_box));
    }
    if (p.samples < 1) throw ConfigError("waypoints.samples must be at least 1");
  }

  if (j.contains("dp")) {
    const json& d = j["dp"];
    if (d.contains("tolerance")) c.tolerance = number(d["tolerance"], "dp.tolerance");
    c.max_iterations = d.value("max_iterations", 5000);
    if (d.contains("frozen"))
      for (const auto& b : d["frozen"]) c.frozen.push_back(box(b, "dp.frozen", n));
  }

  if (j.contains("validation")) {
    const json& v = j["validation"];
    c.runs = v.value("runs", 2000);
    c.horizon = v.value("horizon", 0);
    c.validation_seed = v.value("seed", std::uint64_t{1});
    if (v.contains("x0"))
      for (const auto& x : v["x0"]) c.initial_states.push_back(vec(x, "validation.x0", n));
    if (c.runs < 1 || c.horizon < 0) throw ConfigError("validation.runs must be positive and horizon non-negative");
  }
  if (c.initial_states.empty()) c.initial_states.push_back(c.model.x0);
  c.output_dir = j.value("output", "out/" + c.name);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("configuration '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c = parse_config(j);
  if (!c.dfa_file.empty() && c.dfa_file.front() != '/') {
    auto slash = path.find_last_of('/');
    if (slash != std::string::npos) c.dfa_file = path.substr(0, slash + 1) + c.dfa_file;
  }
  // keep manifests usable from any directory
  if (!c.dfa_file.empty()) {
    c.dfa_file = std::filesystem::absolute(c.dfa_file).lexically_normal().string();
    c.source["spec"]["dfa_file"] = c.dfa_file;
  }
  return c;
}

}  // namespace mlsynth
