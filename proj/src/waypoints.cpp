#include "mlsynth/waypoints.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <functional>
#include <random>

#include "mlsynth/errors.hpp"
#include "mlsynth/geometry.hpp"

namespace mlsynth {

namespace {

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Mat>(M).singularValues()(0);
}

double max_eig(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Mat gain_or_zero(const LtiGmdp& model, const Mat& K) {
  if (K.size() == 0) return Mat::Zero(model.nu(), model.nx());
  require(K.rows() == model.nu() && K.cols() == model.nx(), "feedback gain must be nu x nx");
  return K;
}

Ellipsoid state_ellipsoid_output(const LtiGmdp& model, const Vec& x, double radius, const Mat& D_w) {
  return output_ellipsoid(model.C, D_w, x, radius);
}

}  // namespace

std::size_t WaypointModel::edge_count() const {
  std::size_t n = 0;
  for (const auto& e : edges) n += e.size();
  return n;
}

bool WaypointModel::contains(int w, const Vec& x) const { return d_norm(x - points[w], D_w) <= eps_w; }

std::vector<int> WaypointModel::containing(const Vec& x) const {
  std::vector<int> out;
  for (int w = 0; w < size(); ++w)
    if (contains(w, x)) out.push_back(w);
  return out;
}

std::vector<std::vector<Letter>> WaypointModel::edge_words(int from, int to) const {
  const Letter l0 = letters[from], l1 = letters[to];
  std::vector<std::vector<Letter>> words;
  if (l0 == l1) return {std::vector<Letter>(static_cast<std::size_t>(n_s), l0)};
  for (int a = 0; a < n_s; ++a) {
    std::vector<Letter> w(static_cast<std::size_t>(a), l0);
    w.resize(static_cast<std::size_t>(n_s), l1);
    words.push_back(std::move(w));
  }
  return words;
}

double epsilon_w(const LtiGmdp& model, const Mat& K, const Mat& D_w, double delta_w) {
  if (!(delta_w > 0.0 && delta_w < 1.0)) throw DomainError("edge deviation must lie in (0, 1)");
  const int n = model.nx();
  const double d_w = D_w(0, 0);
  require((D_w - d_w * Mat::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-14 && d_w > 0,
          "waypoint weighting must be a positive multiple of the identity");
  const Mat Abar = model.A + model.B * gain_or_zero(model, K);
  const double a_norm = spectral_norm(Abar);
  if (a_norm >= 1.0)
    throw InfeasibleError("closed loop A + BK is not contractive (norm " + std::to_string(a_norm) + ")");
  const Mat G = model.whitened_noise_gain();
  boost::math::chi_squared_distribution<double> chi(static_cast<double>(G.cols()));
  const double r_w = boost::math::quantile(chi, 1.0 - delta_w);
  return std::abs(-spectral_norm(G) * std::sqrt(r_w) / (d_w * (a_norm - 1.0)));
}

bool is_well_posed_point(const LtiGmdp& model, const LabelMap& labels, const Vec& x_w, double eps_w, const Mat& D_w) {
  return uniform_letter(state_ellipsoid_output(model, x_w, eps_w, D_w), labels) >= 0;
}

bool is_well_posed_edge(const LtiGmdp& model, const LabelMap& labels, const std::vector<Vec>& path, double eps_w,
                        const Mat& D_w, Letter from_letter, Letter to_letter, int points) {
  require(path.size() >= 2 && points >= 2, "edge tube needs at least two path points and two samples");
  std::vector<double> cum{0.0};
  for (std::size_t k = 1; k < path.size(); ++k) cum.push_back(cum.back() + (path[k] - path[k - 1]).norm());
  const double total = cum.back();
  const double spacing = total / (points - 1) * std::sqrt(max_eig(D_w));
  const double radius = eps_w + 0.5 * spacing;
  // 0: only the source letter so far, 1: mixed samples seen, 2: only the target letter seen
  int phase = 0;
  for (int s = 0; s < points; ++s) {
    double t = total * s / (points - 1);
    std::size_t seg = 1;
    while (seg + 1 < cum.size() && cum[seg] < t) ++seg;
    double len = cum[seg] - cum[seg - 1];
    double f = len > 0 ? std::clamp((t - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
    Vec p = path[seg - 1] + f * (path[seg] - path[seg - 1]);
    auto letters = achievable_letters(state_ellipsoid_output(model, p, radius, D_w), labels, true);
    bool has0 = false, has1 = false;
    for (Letter l : letters) {
      if (l == from_letter)
        has0 = true;
      else if (l == to_letter)
        has1 = true;
      else
        return false;
    }
    if (from_letter == to_letter) continue;
    if (has0 && !has1) {
      if (phase > 0) return false;
    } else if (has0 && has1) {
      if (phase == 2) return false;
      phase = 1;
    } else {
      phase = 2;
    }
  }
  return true;
}

std::optional<WaypointEdge> steer(const LtiGmdp& model, const Vec& from, const Vec& to, int n_s, double margin) {
  const int n = model.nx(), m = model.nu();
  const Vec c = model.noise_offset();
  Mat Gamma(n, n_s * m);
  Mat Ap = Mat::Identity(n, n);
  Vec rhs = to;
  Vec drift = Vec::Zero(n);
  for (int k = n_s - 1; k >= 0; --k) {
    Gamma.block(0, k * m, n, m) = Ap * model.B;
    drift += Ap * c;
    Ap = model.A * Ap;
  }
  rhs -= Ap * from + drift;
  Vec U = Gamma.completeOrthogonalDecomposition().solve(rhs);
  if ((Gamma * U - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) return std::nullopt;
  const Vec lo = model.input_box.low.array() + margin, hi = model.input_box.high.array() - margin;
  WaypointEdge e;
  e.path.push_back(from);
  for (int k = 0; k < n_s; ++k) {
    Vec u = U.segment(k * m, m);
    if ((u.array() < lo.array() - 1e-12).any() || (u.array() > hi.array() + 1e-12).any()) return std::nullopt;
    e.inputs.push_back(u);
    e.path.push_back(model.A * e.path.back() + model.B * u + c);
  }
  e.path.back() = to;
  return e;
}

std::vector<std::vector<int>> strong_components(const WaypointModel& m) {
  const int n = m.size();
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  std::vector<std::vector<int>> out;
  int counter = 0;
  std::function<void(int)> visit = [&](int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (const auto& e : m.edges[v]) {
      if (index[e.to] < 0) {
        visit(e.to);
        low[v] = std::min(low[v], low[e.to]);
      } else if (on_stack[e.to]) {
        low[v] = std::min(low[v], index[e.to]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<int> c;
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        c.push_back(w);
      } while (w != v);
      std::sort(c.begin(), c.end());
      out.push_back(std::move(c));
    }
  };
  for (int v = 0; v < n; ++v)
    if (index[v] < 0) visit(v);
  return out;
}

bool strongly_connected(const WaypointModel& m) { return m.size() <= 1 || strong_components(m).size() == 1; }

WaypointModel restrict_to(const WaypointModel& m, const std::vector<int>& keep) {
  WaypointModel r = m;
  std::vector<int> remap(static_cast<std::size_t>(m.size()), -1);
  for (std::size_t k = 0; k < keep.size(); ++k) remap[keep[k]] = static_cast<int>(k);
  r.points.clear();
  r.letters.clear();
  r.edges.clear();
  for (int v : keep) {
    r.points.push_back(m.points[v]);
    r.letters.push_back(m.letters[v]);
    std::vector<WaypointEdge> es;
    for (const auto& e : m.edges[v])
      if (remap[e.to] >= 0) {
        WaypointEdge c = e;
        c.to = remap[e.to];
        es.push_back(std::move(c));
      }
    r.edges.push_back(std::move(es));
  }
  return r;
}

WaypointModel build_waypoint_model(const LtiGmdp& model, const LabelMap& labels, const WaypointParams& p) {
  require(p.samples >= 1, "waypoint sample count must be at least 1");
  require(p.n_s >= 1, "steps per edge must be at least 1");
  const int n = model.nx();
  WaypointModel wm;
  wm.D_w = p.d_w * Mat::Identity(n, n);
  wm.K = gain_or_zero(model, p.K);
  wm.n_s = p.n_s;
  wm.delta_w = p.delta_w;
  wm.eps_w = epsilon_w(model, wm.K, wm.D_w, p.delta_w);
  double margin = 0.0;
  if (p.margin == InputMargin::WorstCase)
    margin = spectral_norm(wm.K) * wm.eps_w / std::sqrt(p.d_w);

  std::mt19937_64 rng(p.seed);
  auto draw_in = [&](const Box& b) {
    Vec x(n);
    for (int d = 0; d < n; ++d) x[d] = std::uniform_real_distribution<double>(b.low[d], b.high[d])(rng);
    return x;
  };
  auto add_point = [&](const Vec& x) {
    wm.points.push_back(x);
    wm.letters.push_back(static_cast<Letter>(
        uniform_letter(output_ellipsoid(model.C, wm.D_w, x, wm.eps_w), labels)));
    wm.edges.emplace_back();
  };
  auto sample_uniform = [&](int count) {
    long attempts = 0;
    for (int k = 0; k < count;) {
      if (++attempts > 200000L * std::max(1, count))
        throw ConfigError("could not find well-posed waypoints; the tube radius may exceed the free space");
      Vec x = draw_in(model.state_box);
      if (!is_well_posed_point(model, labels, x, wm.eps_w, wm.D_w)) continue;
      add_point(x);
      ++k;
    }
  };

  if (p.seed_regions) {
    const bool identity_output =
        model.C.rows() == n && (model.C - Mat::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0;
    for (const auto& reg : labels.regions) {
      if (static_cast<int>(wm.points.size()) >= p.samples) break;
      Box b = model.state_box;
      if (identity_output) {
        b.low = b.low.cwiseMax(reg.box.low);
        b.high = b.high.cwiseMin(reg.box.high);
        if ((b.low.array() >= b.high.array()).any()) continue;
      }
      const Letter bit = Letter{1} << labels.bit_of(reg.name);
      for (int t = 0; t < 5000; ++t) {
        Vec x = draw_in(b);
        long l = uniform_letter(output_ellipsoid(model.C, wm.D_w, x, wm.eps_w), labels);
        if (l >= 0 && (static_cast<Letter>(l) & bit)) {
          add_point(x);
          break;
        }
      }
    }
  }
  // anchors: waypoints whose whole ellipsoid lies in a given box
  const Vec half = Vec::Constant(n, wm.eps_w / std::sqrt(p.d_w));
  for (const auto& box : p.anchor_boxes) {
    if (static_cast<int>(wm.points.size()) >= p.samples) break;
    const Vec lo = box.low + half, hi = box.high - half;
    if ((lo.array() >= hi.array()).any()) continue;
    const Box inner(lo, hi);
    for (int t = 0; t < 5000; ++t) {
      Vec x = draw_in(inner);
      if (!model.state_box.contains(x) || !is_well_posed_point(model, labels, x, wm.eps_w, wm.D_w)) continue;
      add_point(x);
      break;
    }
  }
  sample_uniform(p.samples - static_cast<int>(wm.points.size()));

  auto connect = [&](int from_new) {
    for (int i = 0; i < wm.size(); ++i)
      for (int j = 0; j < wm.size(); ++j) {
        if (i == j || (i < from_new && j < from_new)) continue;
        auto e = steer(model, wm.points[i], wm.points[j], p.n_s, margin);
        if (!e) continue;
        if (!is_well_posed_edge(model, labels, e->path, wm.eps_w, wm.D_w, wm.letters[i], wm.letters[j],
                                p.tube_points))
          continue;
        e->to = j;
        wm.edges[i].push_back(std::move(*e));
      }
    for (auto& es : wm.edges)
      std::sort(es.begin(), es.end(), [](const WaypointEdge& a, const WaypointEdge& b) { return a.to < b.to; });
  };
  connect(0);
  wm.rounds = 1;
  const int extra = std::max(1, p.samples / 4);
  while (!strongly_connected(wm) && wm.rounds < p.max_rounds) {
    int before = wm.size();
    sample_uniform(extra);
    connect(before);
    ++wm.rounds;
  }
  if (!strongly_connected(wm)) {
    auto comps = strong_components(wm);
    auto largest = *std::max_element(comps.begin(), comps.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    throw PartialModelError("waypoint graph not strongly connected after " + std::to_string(wm.rounds) +
                                " rounds (" + std::to_string(wm.size()) + " points, " +
                                std::to_string(comps.size()) + " components, largest " +
                                std::to_string(largest.size()) + ")",
                            restrict_to(wm, largest));
  }
  return wm;
}

}  // namespace mlsynth
