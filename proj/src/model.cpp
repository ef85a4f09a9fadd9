#include "mlsynth/model.hpp"

#include <Eigen/Eigenvalues>
#include <sstream>

#include "mlsynth/errors.hpp"

namespace mlsynth {

Box::Box(Vec lo, Vec hi) : low(std::move(lo)), high(std::move(hi)) {
  require(low.size() == high.size(), "box bounds differ in dimension");
  for (int d = 0; d < low.size(); ++d)
    require(low[d] < high[d], "box low must be strictly below high in every dimension");
}

bool Box::contains(const Vec& p) const {
  for (int d = 0; d < low.size(); ++d)
    if (!(p[d] >= low[d] && p[d] <= high[d])) return false;
  return true;
}

bool Box::contains(const Box& other) const {
  return (other.low.array() >= low.array()).all() && (other.high.array() <= high.array()).all();
}

std::vector<Vec> Box::vertices() const {
  const int n = dim();
  std::vector<Vec> out;
  out.reserve(std::size_t{1} << n);
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    Vec v(n);
    for (int d = 0; d < n; ++d) v[d] = (mask >> d) & 1 ? high[d] : low[d];
    out.push_back(v);
  }
  return out;
}

void LtiGmdp::validate() const {
  const int n = nx();
  require(A.cols() == n, "A must be square");
  require(B.rows() == n, "B row count must match A");
  require(Bw.rows() == n, "Bw row count must match A");
  require(C.cols() == n, "C column count must match A");
  require(state_box.dim() == n, "state box dimension must match A");
  require(input_box.dim() == nu(), "input box dimension must match B");
  require(noise_mean.size() == nw(), "noise mean dimension must match Bw");
  require(noise_cov.rows() == nw() && noise_cov.cols() == nw(), "noise covariance must be nw x nw");
  require((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "noise covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(noise_cov);
  require(es.eigenvalues().minCoeff() >= -1e-12, "noise covariance must be positive semidefinite");
  require(x0.size() == n, "x0 dimension must match A");
  require(state_box.contains(x0), "x0 must lie in the state box");
  require(A.allFinite() && B.allFinite() && Bw.allFinite() && C.allFinite(), "model matrices must be finite");
}

Mat LtiGmdp::whitened_noise_gain() const {
  Eigen::SelfAdjointEigenSolver<Mat> es(noise_cov);
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Mat root = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return Bw * root;
}

Vec LtiGmdp::noise_offset() const { return Bw * noise_mean; }

Mat LtiGmdp::state_noise_cov() const { return Bw * noise_cov * Bw.transpose(); }

LabelMap::LabelMap(std::vector<Region> regs, std::vector<std::string> props)
    : regions(std::move(regs)), propositions(std::move(props)) {
  if (propositions.empty())
    for (const auto& r : regions) propositions.push_back(r.name);
  require(propositions.size() <= 16, "at most 16 atomic propositions are supported");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    require(bit_of(regions[i].name) >= 0, "region '" + regions[i].name + "' names an undeclared proposition");
    for (std::size_t k = 0; k < i; ++k)
      require(regions[k].name != regions[i].name, "duplicate region for proposition '" + regions[i].name + "'");
  }
}

int LabelMap::bit_of(const std::string& name) const {
  for (std::size_t i = 0; i < propositions.size(); ++i)
    if (propositions[i] == name) return static_cast<int>(i);
  return -1;
}

Letter LabelMap::letter_at(const Vec& y) const {
  Letter l = 0;
  for (const auto& r : regions)
    if (r.box.contains(y)) l |= Letter{1} << bit_of(r.name);
  return l;
}

std::string LabelMap::letter_name(Letter l) const {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (std::size_t i = 0; i < propositions.size(); ++i)
    if (l >> i & 1) {
      if (!first) os << ',';
      os << propositions[i];
      first = false;
    }
  os << '}';
  return os.str();
}

Vec step(const LtiGmdp& m, const Vec& x, const Vec& u, const Vec& w) {
  if (x.size() != m.nx() || u.size() != m.nu() || w.size() != m.nw())
    throw ContractViolation("step: dimension mismatch");
  return m.A * x + m.B * u + m.Bw * w;
}

Letter output_letter(const LtiGmdp& m, const LabelMap& labels, const Vec& x) {
  return labels.letter_at(m.C * x);
}

}  // namespace mlsynth
