#pragma once
#include <string>
#include <vector>

#include "mlsynth/model.hpp"

namespace mlsynth {

enum class NodeKind { True, False, Atom, NegAtom, And, Or, Next, Until };

struct AstNode {
  NodeKind kind;
  int prop = -1;  // Atom / NegAtom
  int lhs = -1;   // And, Or, Until (left), Next (operand)
  int rhs = -1;   // And, Or, Until (right)
};

// Formula in negation normal form with structurally shared subformulas.
struct ScltlAst {
  std::vector<AstNode> nodes;
  int root = -1;
  std::vector<std::string> props;

  const AstNode& operator[](int id) const { return nodes[static_cast<std::size_t>(id)]; }
  bool uses_next() const;
  std::string to_string(int id = -1) const;
};

// Operators: ! & | X U F (eventually, i.e. true U f), true, false, parentheses.
// U binds loosest and associates to the right. A negation in front of a
// purely propositional subformula is pushed onto the atoms.
ScltlAst parse_scltl(const std::string& text, const std::vector<std::string>& ap);

struct Dfa {
  int n_states = 0;
  int initial = 0;
  std::vector<bool> accepting;
  int sink = -1;
  std::vector<std::string> props;
  std::vector<int> trans;  // [state * alphabet_size + letter]

  std::size_t alphabet_size() const { return std::size_t{1} << props.size(); }
  int next(int q, Letter l) const { return trans[static_cast<std::size_t>(q) * alphabet_size() + l]; }
  bool is_accepting(int q) const { return accepting[static_cast<std::size_t>(q)]; }
  bool is_sink(int q) const { return q == sink; }

  std::string to_text() const;
  static Dfa from_text(const std::string& text);
};

Dfa to_dfa(const ScltlAst& ast, std::size_t state_cap = 10000);
int dfa_step(const Dfa& dfa, int q, Letter l);
bool accepts(const Dfa& dfa, const std::vector<Letter>& word);

// Renumbers a DFA's propositions to follow the order given (names must match).
Dfa reorder_props(const Dfa& dfa, const std::vector<std::string>& order);

}  // namespace mlsynth
