#include "mlsynth/scltl.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

#include "mlsynth/errors.hpp"

namespace mlsynth {

namespace {

class Builder {
 public:
  explicit Builder(ScltlAst& ast) : ast_(ast) {}

  int make(NodeKind k, int prop = -1, int lhs = -1, int rhs = -1) {
    // canonical operand order for commutative nodes keeps sharing effective
    if ((k == NodeKind::And || k == NodeKind::Or) && lhs > rhs) std::swap(lhs, rhs);
    if (k == NodeKind::And) {
      if (kind(lhs) == NodeKind::False || kind(rhs) == NodeKind::False) return make(NodeKind::False);
      if (kind(lhs) == NodeKind::True) return rhs;
      if (kind(rhs) == NodeKind::True) return lhs;
      if (lhs == rhs) return lhs;
    }
    if (k == NodeKind::Or) {
      if (kind(lhs) == NodeKind::True || kind(rhs) == NodeKind::True) return make(NodeKind::True);
      if (kind(lhs) == NodeKind::False) return rhs;
      if (kind(rhs) == NodeKind::False) return lhs;
      if (lhs == rhs) return lhs;
    }
    auto key = std::make_tuple(static_cast<int>(k), prop, lhs, rhs);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    ast_.nodes.push_back(AstNode{k, prop, lhs, rhs});
    int id = static_cast<int>(ast_.nodes.size()) - 1;
    index_[key] = id;
    return id;
  }

  NodeKind kind(int id) const { return ast_[id].kind; }

  bool propositional(int id) const {
    switch (kind(id)) {
      case NodeKind::Next:
      case NodeKind::Until:
        return false;
      case NodeKind::And:
      case NodeKind::Or:
        return propositional(ast_[id].lhs) && propositional(ast_[id].rhs);
      default:
        return true;
    }
  }

  int negate(int id) {
    const AstNode n = ast_[id];
    switch (n.kind) {
      case NodeKind::True: return make(NodeKind::False);
      case NodeKind::False: return make(NodeKind::True);
      case NodeKind::Atom: return make(NodeKind::NegAtom, n.prop);
      case NodeKind::NegAtom: return make(NodeKind::Atom, n.prop);
      case NodeKind::And: return make(NodeKind::Or, -1, negate(n.lhs), negate(n.rhs));
      case NodeKind::Or: return make(NodeKind::And, -1, negate(n.lhs), negate(n.rhs));
      default: throw ContractViolation("negate called on a temporal node");
    }
  }

 private:
  ScltlAst& ast_;
  std::map<std::tuple<int, int, int, int>, int> index_;
};

class Parser {
 public:
  Parser(const std::string& text, ScltlAst& ast) : text_(text), ast_(ast), b_(ast) {}

  int parse() {
    int r = until();
    skip();
    if (pos_ != text_.size()) throw SyntaxError("unexpected '" + std::string(1, text_[pos_]) + "'", pos_);
    return r;
  }

 private:
  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool ident_char(char c) const { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  // Peeks a keyword-like identifier without consuming it.
  std::string peek_word() {
    skip();
    std::size_t p = pos_;
    while (p < text_.size() && ident_char(text_[p])) ++p;
    return text_.substr(pos_, p - pos_);
  }

  bool accept_op(char c) {
    skip();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      if (pos_ < text_.size() && text_[pos_] == c && (c == '&' || c == '|')) ++pos_;
      return true;
    }
    return false;
  }

  int until() {
    int lhs = disj();
    if (peek_word() == "U") {
      pos_ += 1;
      int rhs = until();
      return b_.make(NodeKind::Until, -1, lhs, rhs);
    }
    return lhs;
  }

  int disj() {
    int lhs = conj();
    while (accept_op('|')) lhs = b_.make(NodeKind::Or, -1, lhs, conj());
    return lhs;
  }

  int conj() {
    int lhs = unary();
    while (accept_op('&')) lhs = b_.make(NodeKind::And, -1, lhs, unary());
    return lhs;
  }

  int unary() {
    skip();
    std::size_t at = pos_;
    if (accept_op('!')) {
      int operand = unary();
      if (!b_.propositional(operand))
        throw SyntaxError("negation is only allowed over atomic propositions", at);
      return b_.negate(operand);
    }
    std::string w = peek_word();
    if (w == "X") {
      pos_ += 1;
      return b_.make(NodeKind::Next, -1, unary());
    }
    if (w == "F") {
      pos_ += 1;
      int operand = unary();
      return b_.make(NodeKind::Until, -1, b_.make(NodeKind::True), operand);
    }
    return primary();
  }

  int primary() {
    skip();
    if (pos_ >= text_.size()) throw SyntaxError("unexpected end of formula", pos_);
    if (accept_op('(')) {
      int r = until();
      if (!accept_op(')')) throw SyntaxError("expected ')'", pos_);
      return r;
    }
    std::size_t at = pos_;
    std::string w = peek_word();
    if (w.empty()) throw SyntaxError("unexpected '" + std::string(1, text_[pos_]) + "'", pos_);
    pos_ += w.size();
    if (w == "true") return b_.make(NodeKind::True);
    if (w == "false") return b_.make(NodeKind::False);
    if (w == "U" || w == "X" || w == "F") throw SyntaxError("operator '" + w + "' used as operand", at);
    auto it = std::find(ast_.props.begin(), ast_.props.end(), w);
    if (it == ast_.props.end()) throw SyntaxError("unknown proposition '" + w + "'", at);
    return b_.make(NodeKind::Atom, static_cast<int>(it - ast_.props.begin()));
  }

  const std::string& text_;
  ScltlAst& ast_;
  Builder b_;
  std::size_t pos_ = 0;
};

// A state of the progression automaton: disjunction of conjunctions of
// pending obligations (node ids). {} is false, {{}} is true.
using Conj = std::vector<int>;
using Dnf = std::vector<Conj>;

void normalize(Dnf& d) {
  for (auto& c : d) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  std::sort(d.begin(), d.end(), [](const Conj& a, const Conj& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  d.erase(std::unique(d.begin(), d.end()), d.end());
  Dnf kept;
  for (auto& c : d) {
    bool subsumed = false;
    for (const auto& k : kept)
      if (std::includes(c.begin(), c.end(), k.begin(), k.end())) {
        subsumed = true;
        break;
      }
    if (!subsumed) kept.push_back(std::move(c));
  }
  d = std::move(kept);
}

Dnf dnf_and(const Dnf& a, const Dnf& b) {
  Dnf out;
  for (const auto& x : a)
    for (const auto& y : b) {
      Conj c = x;
      c.insert(c.end(), y.begin(), y.end());
      out.push_back(std::move(c));
    }
  normalize(out);
  return out;
}

Dnf dnf_or(Dnf a, const Dnf& b) {
  a.insert(a.end(), b.begin(), b.end());
  normalize(a);
  return a;
}

Dnf progress(const ScltlAst& ast, int id, Letter l) {
  const AstNode& n = ast[id];
  switch (n.kind) {
    case NodeKind::True: return Dnf{Conj{}};
    case NodeKind::False: return Dnf{};
    case NodeKind::Atom: return (l >> n.prop & 1) ? Dnf{Conj{}} : Dnf{};
    case NodeKind::NegAtom: return (l >> n.prop & 1) ? Dnf{} : Dnf{Conj{}};
    case NodeKind::And: return dnf_and(progress(ast, n.lhs, l), progress(ast, n.rhs, l));
    case NodeKind::Or: return dnf_or(progress(ast, n.lhs, l), progress(ast, n.rhs, l));
    case NodeKind::Next:
      if (ast[n.lhs].kind == NodeKind::True) return Dnf{Conj{}};
      if (ast[n.lhs].kind == NodeKind::False) return Dnf{};
      return Dnf{Conj{n.lhs}};
    case NodeKind::Until:
      return dnf_or(progress(ast, n.rhs, l), dnf_and(progress(ast, n.lhs, l), Dnf{Conj{id}}));
  }
  return Dnf{};
}

Dnf progress_state(const ScltlAst& ast, const Dnf& s, Letter l) {
  Dnf out;
  for (const auto& c : s) {
    Dnf acc{Conj{}};
    for (int id : c) {
      acc = dnf_and(acc, progress(ast, id, l));
      if (acc.empty()) break;
    }
    out.insert(out.end(), acc.begin(), acc.end());
  }
  normalize(out);
  return out;
}

bool is_true(const Dnf& d) { return d.size() == 1 && d[0].empty(); }

Dfa minimize(const Dfa& in) {
  const std::size_t k = in.alphabet_size();
  std::vector<int> block(static_cast<std::size_t>(in.n_states));
  for (int q = 0; q < in.n_states; ++q) block[q] = in.is_accepting(q) ? 1 : 0;
  int n_blocks = 0;
  for (;;) {
    std::map<std::vector<int>, int> sig_index;
    std::vector<int> next_block(block.size());
    for (int q = 0; q < in.n_states; ++q) {
      std::vector<int> sig{block[q]};
      for (std::size_t l = 0; l < k; ++l) sig.push_back(block[in.next(q, static_cast<Letter>(l))]);
      auto [it, fresh] = sig_index.emplace(sig, static_cast<int>(sig_index.size()));
      next_block[q] = it->second;
    }
    int count = static_cast<int>(sig_index.size());
    block = std::move(next_block);
    if (count == n_blocks) break;
    n_blocks = count;
  }
  // number blocks in BFS order from the initial state
  std::vector<int> order(static_cast<std::size_t>(n_blocks), -1);
  std::vector<int> rep(static_cast<std::size_t>(n_blocks), -1);
  for (int q = 0; q < in.n_states; ++q)
    if (rep[block[q]] < 0) rep[block[q]] = q;
  std::queue<int> bfs;
  int counter = 0;
  order[block[in.initial]] = counter++;
  bfs.push(block[in.initial]);
  while (!bfs.empty()) {
    int b = bfs.front();
    bfs.pop();
    for (std::size_t l = 0; l < k; ++l) {
      int nb = block[in.next(rep[b], static_cast<Letter>(l))];
      if (order[nb] < 0) {
        order[nb] = counter++;
        bfs.push(nb);
      }
    }
  }
  Dfa out;
  out.props = in.props;
  out.n_states = counter;
  out.initial = 0;
  out.accepting.assign(static_cast<std::size_t>(counter), false);
  out.trans.assign(static_cast<std::size_t>(counter) * k, 0);
  for (int b = 0; b < n_blocks; ++b) {
    if (order[b] < 0) continue;
    int q = rep[b];
    out.accepting[order[b]] = in.is_accepting(q);
    for (std::size_t l = 0; l < k; ++l)
      out.trans[static_cast<std::size_t>(order[b]) * k + l] = order[block[in.next(q, static_cast<Letter>(l))]];
  }
  // the sink is the non-accepting state from which no accepting state is reachable
  for (int q = 0; q < out.n_states; ++q) {
    if (out.accepting[q]) continue;
    std::vector<bool> seen(static_cast<std::size_t>(out.n_states), false);
    std::vector<int> stack{q};
    seen[q] = true;
    bool hits = false;
    while (!stack.empty() && !hits) {
      int s = stack.back();
      stack.pop_back();
      for (std::size_t l = 0; l < k; ++l) {
        int t = out.trans[static_cast<std::size_t>(s) * k + l];
        if (out.accepting[t]) hits = true;
        if (!seen[t]) {
          seen[t] = true;
          stack.push_back(t);
        }
      }
    }
    if (!hits) out.sink = q;
  }
  return out;
}

}  // namespace

bool ScltlAst::uses_next() const {
  std::vector<int> stack{root};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    const AstNode& n = (*this)[id];
    if (n.kind == NodeKind::Next) return true;
    if (n.lhs >= 0) stack.push_back(n.lhs);
    if (n.rhs >= 0) stack.push_back(n.rhs);
  }
  return false;
}

std::string ScltlAst::to_string(int id) const {
  if (id < 0) id = root;
  const AstNode& n = (*this)[id];
  switch (n.kind) {
    case NodeKind::True: return "true";
    case NodeKind::False: return "false";
    case NodeKind::Atom: return props[n.prop];
    case NodeKind::NegAtom: return "!" + props[n.prop];
    case NodeKind::And: return "(" + to_string(n.lhs) + " & " + to_string(n.rhs) + ")";
    case NodeKind::Or: return "(" + to_string(n.lhs) + " | " + to_string(n.rhs) + ")";
    case NodeKind::Next: return "X " + to_string(n.lhs);
    case NodeKind::Until: return "(" + to_string(n.lhs) + " U " + to_string(n.rhs) + ")";
  }
  return "?";
}

ScltlAst parse_scltl(const std::string& text, const std::vector<std::string>& ap) {
  require(ap.size() <= 16, "at most 16 atomic propositions are supported");
  ScltlAst ast;
  ast.props = ap;
  Parser p(text, ast);
  ast.root = p.parse();
  return ast;
}

Dfa to_dfa(const ScltlAst& ast, std::size_t state_cap) {
  const std::size_t k = std::size_t{1} << ast.props.size();
  std::map<Dnf, int> index;
  std::vector<Dnf> states;
  Dnf init;
  if (ast[ast.root].kind == NodeKind::True)
    init = Dnf{Conj{}};
  else if (ast[ast.root].kind != NodeKind::False)
    init = Dnf{Conj{ast.root}};
  index[init] = 0;
  states.push_back(init);
  Dfa raw;
  raw.props = ast.props;
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (std::size_t l = 0; l < k; ++l) {
      Dnf nxt = is_true(states[s]) ? states[s] : progress_state(ast, states[s], static_cast<Letter>(l));
      auto it = index.find(nxt);
      int id;
      if (it == index.end()) {
        id = static_cast<int>(states.size());
        if (states.size() >= state_cap)
          throw ResourceError("automaton construction exceeded the cap of " + std::to_string(state_cap) + " states");
        index.emplace(nxt, id);
        states.push_back(std::move(nxt));
      } else {
        id = it->second;
      }
      raw.trans.push_back(id);
    }
  }
  raw.n_states = static_cast<int>(states.size());
  raw.initial = 0;
  for (const auto& s : states) raw.accepting.push_back(is_true(s));
  return minimize(raw);
}

int dfa_step(const Dfa& dfa, int q, Letter l) { return dfa.next(q, l); }

bool accepts(const Dfa& dfa, const std::vector<Letter>& word) {
  int q = dfa.initial;
  if (dfa.is_accepting(q)) return true;
  for (Letter l : word) {
    q = dfa.next(q, l);
    if (dfa.is_accepting(q)) return true;
  }
  return false;
}

std::string Dfa::to_text() const {
  std::ostringstream os;
  os << "states " << n_states << "\n";
  os << "initial " << initial << "\n";
  os << "accepting";
  for (int q = 0; q < n_states; ++q)
    if (accepting[q]) os << ' ' << q;
  os << "\n";
  os << "sink " << sink << "\n";
  os << "propositions";
  for (const auto& p : props) os << ' ' << p;
  os << "\n";
  for (int q = 0; q < n_states; ++q)
    for (std::size_t l = 0; l < alphabet_size(); ++l) os << q << ' ' << l << ' ' << next(q, static_cast<Letter>(l)) << "\n";
  return os.str();
}

Dfa Dfa::from_text(const std::string& text) {
  Dfa d;
  std::istringstream is(text);
  std::string line;
  std::vector<int> acc;
  bool have_states = false;
  std::vector<std::tuple<int, long, int>> rows;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head) || head[0] == '#') continue;
    if (head == "states") {
      ls >> d.n_states;
      have_states = true;
    } else if (head == "initial") {
      ls >> d.initial;
    } else if (head == "accepting") {
      int q;
      while (ls >> q) acc.push_back(q);
    } else if (head == "sink") {
      ls >> d.sink;
    } else if (head == "propositions") {
      std::string p;
      while (ls >> p) d.props.push_back(p);
    } else {
      int q = std::stoi(head);
      long l;
      int t;
      if (!(ls >> l >> t)) throw ConfigError("malformed transition line: " + line);
      rows.emplace_back(q, l, t);
    }
  }
  if (!have_states || d.n_states <= 0) throw ConfigError("automaton table lacks a positive 'states' header");
  if (d.props.size() > 16) throw ConfigError("automaton table has more than 16 propositions");
  const std::size_t k = d.alphabet_size();
  d.trans.assign(static_cast<std::size_t>(d.n_states) * k, -1);
  d.accepting.assign(static_cast<std::size_t>(d.n_states), false);
  for (int q : acc) {
    if (q < 0 || q >= d.n_states) throw ConfigError("accepting state out of range");
    d.accepting[q] = true;
  }
  for (auto [q, l, t] : rows) {
    if (q < 0 || q >= d.n_states || t < 0 || t >= d.n_states || l < 0 || static_cast<std::size_t>(l) >= k)
      throw ConfigError("transition out of range");
    d.trans[static_cast<std::size_t>(q) * k + static_cast<std::size_t>(l)] = t;
  }
  for (int t : d.trans)
    if (t < 0) throw ConfigError("automaton table is not total");
  if (d.initial < 0 || d.initial >= d.n_states) throw ConfigError("initial state out of range");
  for (int q = 0; q < d.n_states; ++q)
    if (d.accepting[q])
      for (std::size_t l = 0; l < k; ++l)
        if (!d.accepting[d.trans[static_cast<std::size_t>(q) * k + l]])
          throw ConfigError("accepting states must be closed under every letter");
  return d;
}

Dfa reorder_props(const Dfa& dfa, const std::vector<std::string>& order) {
  require(order.size() == dfa.props.size(), "proposition lists differ in size");
  std::vector<int> src_bit(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto it = std::find(dfa.props.begin(), dfa.props.end(), order[i]);
    if (it == dfa.props.end()) throw ConfigError("automaton lacks proposition '" + order[i] + "'");
    src_bit[i] = static_cast<int>(it - dfa.props.begin());
  }
  Dfa out = dfa;
  out.props = order;
  const std::size_t k = dfa.alphabet_size();
  for (int q = 0; q < dfa.n_states; ++q)
    for (std::size_t l = 0; l < k; ++l) {
      Letter src = 0;
      for (std::size_t i = 0; i < order.size(); ++i)
        if (l >> i & 1) src |= Letter{1} << src_bit[i];
      out.trans[static_cast<std::size_t>(q) * k + l] = dfa.next(q, src);
    }
  return out;
}

}  // namespace mlsynth
