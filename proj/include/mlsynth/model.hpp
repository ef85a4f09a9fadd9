#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace mlsynth {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bitmask over atomic propositions in declaration order.
using Letter = std::uint32_t;

struct Box {
  Vec low;
  Vec high;

  Box() = default;
  Box(Vec lo, Vec hi);
  int dim() const { return static_cast<int>(low.size()); }
  bool contains(const Vec& p) const;
  bool contains(const Box& other) const;
  Vec center() const { return 0.5 * (low + high); }
  Vec extent() const { return high - low; }
  std::vector<Vec> vertices() const;
};

struct LtiGmdp {
  Mat A, B, Bw, C;
  Box state_box;
  Box input_box;
  Vec noise_mean;
  Mat noise_cov;
  Vec x0;

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
  int nw() const { return static_cast<int>(Bw.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }

  // Throws ContractViolation when dimensions or invariants are off.
  void validate() const;

  // Bw * cov^(1/2): the noise gain seen by a standard normal disturbance.
  Mat whitened_noise_gain() const;
  // Bw * mean: constant drift contributed by the disturbance.
  Vec noise_offset() const;
  // Covariance of the state noise Bw cov Bw^T.
  Mat state_noise_cov() const;
};

struct Region {
  std::string name;
  Box box;
};

struct LabelMap {
  std::vector<Region> regions;
  std::vector<std::string> propositions;  // declaration order, defines bit positions

  LabelMap() = default;
  LabelMap(std::vector<Region> regions, std::vector<std::string> props = {});

  int bit_of(const std::string& name) const;
  Letter letter_at(const Vec& y) const;
  std::string letter_name(Letter l) const;
};

Vec step(const LtiGmdp& m, const Vec& x, const Vec& u, const Vec& w);
Letter output_letter(const LtiGmdp& m, const LabelMap& labels, const Vec& x);

struct Trace {
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  std::vector<Letter> letters;
  std::vector<int> automaton;  // DFA state after reading each letter
  bool satisfied = false;
};

}  // namespace mlsynth
