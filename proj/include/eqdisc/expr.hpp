#pragma once

// Expression skeletons: parse, render, canonicalize, evaluate, classify.
//
// Grammar (precedence low to high): + -, * /, unary -, ^ (right-assoc), atoms.
// Atoms: decimal literals, variables, params[k], f(expr) for a fixed function set.
// The rendered canonical string is the exchange format used across the engine:
// memory dumps, traces, provider messages, and the CLI all speak it.

#include "eqdisc/common.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace eqdisc {

enum class NodeKind { Literal, Parameter, Variable, Unary, Call, Binary };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind;
  double value = 0.0;         // Literal
  int index = -1;             // Parameter
  std::string name;           // Variable or Call
  char op = 0;                // Binary: + - * / ^
  std::vector<NodePtr> kids;  // Unary: 1, Call: 1, Binary: 2
};

inline NodePtr make_literal(double v) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Literal;
  n->value = v;
  return n;
}
inline NodePtr make_parameter(int idx) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Parameter;
  n->index = idx;
  return n;
}
inline NodePtr make_variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Variable;
  n->name = std::move(name);
  return n;
}
inline NodePtr make_neg(NodePtr c) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Unary;
  n->kids = {std::move(c)};
  return n;
}
inline NodePtr make_call(std::string name, NodePtr c) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Call;
  n->name = std::move(name);
  n->kids = {std::move(c)};
  return n;
}
inline NodePtr make_binary(char op, NodePtr l, NodePtr r) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Binary;
  n->op = op;
  n->kids = {std::move(l), std::move(r)};
  return n;
}

inline const std::set<std::string>& function_names() {
  static const std::set<std::string> fns = {"sin", "cos", "tan",  "exp",
                                            "log", "sqrt", "tanh", "abs"};
  return fns;
}

// True when the exponent node is a literal odd integer; such powers keep the
// base's sign, all other powers are evaluated as |base|^e.
inline bool odd_integer_literal(const Node* n) {
  if (n->kind != NodeKind::Literal) return false;
  const double v = n->value;
  if (!std::isfinite(v) || v != std::round(v)) return false;
  return std::fmod(std::abs(v), 2.0) == 1.0;
}

inline double apply_pow(double base, double expn, bool odd_literal) {
  const double r = std::pow(std::abs(base), expn);
  return (odd_literal && base < 0.0) ? -r : r;
}

inline double apply_call(const std::string& name, double a) {
  if (name == "sin") return std::sin(a);
  if (name == "cos") return std::cos(a);
  if (name == "tan") return std::tan(a);
  if (name == "exp") return std::exp(a);
  if (name == "log") return std::log(a);
  if (name == "sqrt") return std::sqrt(a);
  if (name == "tanh") return std::tanh(a);
  if (name == "abs") return std::abs(a);
  throw ParseError("unknown function: " + name);
}

// A validated skeleton: parameter indices are contiguous from zero, variables
// are listed in order of first appearance.
struct Skeleton {
  NodePtr root;
  int param_count = 0;
  std::vector<std::string> variables;

  bool valid() const { return root != nullptr; }
};

namespace detail {

inline void collect_params(const NodePtr& n, std::set<int>& idx) {
  if (n->kind == NodeKind::Parameter) idx.insert(n->index);
  for (const auto& k : n->kids) collect_params(k, idx);
}

inline void collect_variables(const NodePtr& n, std::vector<std::string>& vars) {
  if (n->kind == NodeKind::Variable) {
    if (std::find(vars.begin(), vars.end(), n->name) == vars.end())
      vars.push_back(n->name);
  }
  for (const auto& k : n->kids) collect_variables(k, vars);
}

}  // namespace detail

// Wraps a raw tree into a Skeleton, enforcing the parameter contiguity rule.
inline Skeleton make_skeleton(NodePtr root) {
  if (!root) throw ParseError("empty expression");
  Skeleton s;
  s.root = std::move(root);
  std::set<int> idx;
  detail::collect_params(s.root, idx);
  if (!idx.empty()) {
    if (*idx.begin() < 0) throw ParseError("negative parameter index");
    const int maxi = *idx.rbegin();
    if (static_cast<int>(idx.size()) != maxi + 1)
      throw ParseError("parameter indices must be contiguous from 0");
    s.param_count = maxi + 1;
  }
  detail::collect_variables(s.root, s.variables);
  return s;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
public:
  explicit Parser(const std::string& src) : src_(src) {}

  NodePtr parse() {
    skip_ws();
    NodePtr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size())
      throw ParseError("unexpected trailing input at position " +
                       std::to_string(pos_));
    return e;
  }

private:
  const std::string& src_;
  size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }
  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return eof() ? '\0' : src_[pos_]; }
  bool accept(char c) {
    skip_ws();
    if (!eof() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c, const char* what) {
    if (!accept(c))
      throw ParseError(std::string("expected '") + c + "' (" + what +
                       ") at position " + std::to_string(pos_));
  }

  NodePtr parse_expr() {
    NodePtr l = parse_term();
    for (;;) {
      skip_ws();
      if (accept('+'))
        l = make_binary('+', l, parse_term());
      else if (accept('-'))
        l = make_binary('-', l, parse_term());
      else
        return l;
    }
  }

  NodePtr parse_term() {
    NodePtr l = parse_unary();
    for (;;) {
      skip_ws();
      if (accept('*'))
        l = make_binary('*', l, parse_unary());
      else if (accept('/'))
        l = make_binary('/', l, parse_unary());
      else
        return l;
    }
  }

  NodePtr parse_unary() {
    skip_ws();
    if (accept('-')) {
      NodePtr c = parse_unary();
      // A negated literal is folded into a negative literal so that rendered
      // negative constants round-trip to the identical tree.
      if (c->kind == NodeKind::Literal) return make_literal(-c->value);
      return make_neg(c);
    }
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    skip_ws();
    if (accept('^')) return make_binary('^', base, parse_unary());
    return base;
  }

  NodePtr parse_primary() {
    skip_ws();
    if (eof()) throw ParseError("unexpected end of input");
    const char c = peek();
    if (c == '(') {
      ++pos_;
      NodePtr e = parse_expr();
      expect(')', "closing parenthesis");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    throw ParseError(std::string("unexpected character '") + c +
                     "' at position " + std::to_string(pos_));
  }

  NodePtr parse_number() {
    const char* begin = src_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) throw ParseError("malformed number at position " + std::to_string(pos_));
    for (const char* p = begin; p < end; ++p) {
      const char ch = *p;
      if (!(std::isdigit(static_cast<unsigned char>(ch)) || ch == '.' || ch == 'e' ||
            ch == 'E' || ch == '+' || ch == '-'))
        throw ParseError("malformed number at position " + std::to_string(pos_));
    }
    pos_ += static_cast<size_t>(end - begin);
    return make_literal(v);
  }

  NodePtr parse_ident() {
    const size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    const std::string name = src_.substr(start, pos_ - start);
    if (name == "params") {
      expect('[', "parameter index");
      skip_ws();
      const size_t istart = pos_;
      while (!eof() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      if (pos_ == istart)
        throw ParseError("expected parameter index at position " + std::to_string(pos_));
      const int idx = std::atoi(src_.substr(istart, pos_ - istart).c_str());
      expect(']', "parameter index");
      return make_parameter(idx);
    }
    skip_ws();
    if (!eof() && peek() == '(') {
      if (!function_names().count(name))
        throw ParseError("unknown function '" + name + "' at position " +
                         std::to_string(start));
      ++pos_;
      NodePtr arg = parse_expr();
      expect(')', "function argument");
      return make_call(name, arg);
    }
    if (function_names().count(name))
      throw ParseError("function name '" + name + "' used as a variable");
    return make_variable(name);
  }
};

}  // namespace detail

inline Skeleton parse(const std::string& text) {
  return make_skeleton(detail::Parser(text).parse());
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline int precedence(const Node* n) {
  switch (n->kind) {
    case NodeKind::Binary:
      if (n->op == '+' || n->op == '-') return 10;
      if (n->op == '*' || n->op == '/') return 20;
      return 30;  // ^
    case NodeKind::Unary:
      return 25;
    default:
      return 100;
  }
}

inline void render_node(const Node* n, std::string& out);

inline void render_operand(const Node* n, bool parens, std::string& out) {
  std::string s;
  render_node(n, s);
  if (parens) {
    out += '(';
    out += s;
    out += ')';
  } else {
    out += s;
  }
}

inline void render_node(const Node* n, std::string& out) {
  switch (n->kind) {
    case NodeKind::Literal:
      out += format_double(n->value);
      return;
    case NodeKind::Parameter:
      out += "params[" + std::to_string(n->index) + "]";
      return;
    case NodeKind::Variable:
      out += n->name;
      return;
    case NodeKind::Unary: {
      out += '-';
      const Node* c = n->kids[0].get();
      // Parenthesize anything with precedence at or below unary minus, and
      // literals (a bare "-3" would re-parse as a negative literal).
      render_operand(c, precedence(c) <= 25 || c->kind == NodeKind::Literal, out);
      return;
    }
    case NodeKind::Call:
      out += n->name;
      out += '(';
      render_node(n->kids[0].get(), out);
      out += ')';
      return;
    case NodeKind::Binary: {
      const int prec = precedence(n);
      const Node* l = n->kids[0].get();
      const Node* r = n->kids[1].get();
      std::string ls, rs;
      render_node(l, ls);
      render_node(r, rs);
      bool lp, rp;
      if (n->op == '^') {
        lp = precedence(l) <= prec;  // right-assoc; also guards -x^2 ambiguity
        rp = precedence(r) < prec;
      } else {
        lp = precedence(l) < prec;
        rp = precedence(r) <= prec;  // left-assoc
      }
      // A right operand or power base starting with '-' needs parens to keep
      // the '-' attached on re-parse.
      if (!rp && !rs.empty() && rs[0] == '-') rp = true;
      if (!lp && n->op == '^' && !ls.empty() && ls[0] == '-') lp = true;
      if (lp) out += '(' + ls + ')'; else out += ls;
      out += n->op;
      if (rp) out += '(' + rs + ')'; else out += rs;
      return;
    }
  }
}

}  // namespace detail

inline std::string render(const NodePtr& n) {
  std::string out;
  detail::render_node(n.get(), out);
  return out;
}

inline std::string render(const Skeleton& s) { return render(s.root); }

// ---------------------------------------------------------------------------
// Canonicalization

namespace detail {

// Ordering key for commutative-chain sorting and subtree matching. Encodes
// structure but not parameter indices, so renumbering never changes the order
// (this is what makes canonicalization idempotent).
inline void structure_key(const Node* n, std::string& out) {
  switch (n->kind) {
    case NodeKind::Literal:
      out += "0L";
      out += format_double(n->value);
      return;
    case NodeKind::Parameter:
      out += "1P";
      return;
    case NodeKind::Variable:
      out += "2V";
      out += n->name;
      return;
    case NodeKind::Unary:
      out += "3N(";
      structure_key(n->kids[0].get(), out);
      out += ')';
      return;
    case NodeKind::Call:
      out += "4C";
      out += n->name;
      out += '(';
      structure_key(n->kids[0].get(), out);
      out += ')';
      return;
    case NodeKind::Binary:
      out += "5B";
      out += n->op;
      out += '(';
      structure_key(n->kids[0].get(), out);
      out += ',';
      structure_key(n->kids[1].get(), out);
      out += ')';
      return;
  }
}

inline std::string structure_key(const Node* n) {
  std::string out;
  structure_key(n, out);
  return out;
}

// Scalar value of a literal-only subtree, or nullopt if any non-literal node
// or a non-finite intermediate appears.
inline std::optional<double> fold_value(const Node* n) {
  switch (n->kind) {
    case NodeKind::Literal:
      return n->value;
    case NodeKind::Parameter:
    case NodeKind::Variable:
      return std::nullopt;
    case NodeKind::Unary: {
      auto c = fold_value(n->kids[0].get());
      if (!c) return std::nullopt;
      return -*c;
    }
    case NodeKind::Call: {
      auto c = fold_value(n->kids[0].get());
      if (!c) return std::nullopt;
      const double v = apply_call(n->name, *c);
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    }
    case NodeKind::Binary: {
      auto l = fold_value(n->kids[0].get());
      auto r = fold_value(n->kids[1].get());
      if (!l || !r) return std::nullopt;
      double v = 0;
      switch (n->op) {
        case '+': v = *l + *r; break;
        case '-': v = *l - *r; break;
        case '*': v = *l * *r; break;
        case '/': v = *l / *r; break;
        case '^': v = apply_pow(*l, *r, odd_integer_literal(n->kids[1].get())); break;
      }
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    }
  }
  return std::nullopt;
}

inline void flatten_chain(const NodePtr& n, char op, std::vector<NodePtr>& out) {
  if (n->kind == NodeKind::Binary && n->op == op) {
    flatten_chain(n->kids[0], op, out);
    flatten_chain(n->kids[1], op, out);
  } else {
    out.push_back(n);
  }
}

inline NodePtr canonical_pass(const NodePtr& n) {
  // Fold literal-only subtrees first (finite results only).
  if (n->kind != NodeKind::Literal) {
    if (auto v = fold_value(n.get())) return make_literal(*v);
  }
  switch (n->kind) {
    case NodeKind::Literal:
    case NodeKind::Parameter:
    case NodeKind::Variable:
      return n;
    case NodeKind::Unary:
      return make_neg(canonical_pass(n->kids[0]));
    case NodeKind::Call:
      return make_call(n->name, canonical_pass(n->kids[0]));
    case NodeKind::Binary: {
      if (n->op == '+' || n->op == '*') {
        std::vector<NodePtr> ops;
        flatten_chain(n, n->op, ops);
        for (auto& o : ops) o = canonical_pass(o);
        // Merge literal operands so sorted rebuilds cannot re-nest constants.
        std::vector<NodePtr> rest;
        std::vector<double> lits;
        for (auto& o : ops) {
          if (o->kind == NodeKind::Literal) lits.push_back(o->value);
          else rest.push_back(o);
        }
        if (lits.size() >= 2) {
          double acc = (n->op == '+') ? 0.0 : 1.0;
          for (double v : lits) acc = (n->op == '+') ? acc + v : acc * v;
          if (std::isfinite(acc)) {
            ops = rest;
            ops.push_back(make_literal(acc));
          }
        }
        std::stable_sort(ops.begin(), ops.end(), [](const NodePtr& a, const NodePtr& b) {
          return structure_key(a.get()) < structure_key(b.get());
        });
        NodePtr acc = ops[0];
        for (size_t i = 1; i < ops.size(); ++i) acc = make_binary(n->op, acc, ops[i]);
        return acc;
      }
      return make_binary(n->op, canonical_pass(n->kids[0]), canonical_pass(n->kids[1]));
    }
  }
  return n;
}

// Fold + flatten + sort to a fixpoint; no parameter renumbering.
inline NodePtr canonicalize_tree(NodePtr n) {
  std::string prev = render(n);
  for (int i = 0; i < 10; ++i) {
    n = canonical_pass(n);
    std::string cur = render(n);
    if (cur == prev) break;
    prev = std::move(cur);
  }
  return n;
}

inline void preorder_params(const NodePtr& n, std::vector<int>& order) {
  if (n->kind == NodeKind::Parameter) order.push_back(n->index);
  for (const auto& k : n->kids) preorder_params(k, order);
}

inline NodePtr renumber_params(const NodePtr& n, const std::vector<int>& old_to_new) {
  switch (n->kind) {
    case NodeKind::Parameter:
      return make_parameter(old_to_new[static_cast<size_t>(n->index)]);
    case NodeKind::Literal:
    case NodeKind::Variable:
      return n;
    case NodeKind::Unary:
      return make_neg(renumber_params(n->kids[0], old_to_new));
    case NodeKind::Call:
      return make_call(n->name, renumber_params(n->kids[0], old_to_new));
    case NodeKind::Binary:
      return make_binary(n->op, renumber_params(n->kids[0], old_to_new),
                         renumber_params(n->kids[1], old_to_new));
  }
  return n;
}

}  // namespace detail

// Canonical form: commutative chains flattened and sorted by a structural key
// that ignores parameter indices, finite literal-only subtrees folded, then
// parameters renumbered by first occurrence in preorder. If old_to_new is
// given it receives the index map (old_to_new[i] = new index of params[i]).
inline Skeleton canonicalize(const Skeleton& s, std::vector<int>* old_to_new = nullptr) {
  NodePtr t = detail::canonicalize_tree(s.root);
  std::vector<int> order;
  detail::preorder_params(t, order);
  std::vector<int> map(static_cast<size_t>(s.param_count), -1);
  int next = 0;
  for (int old : order)
    if (map[static_cast<size_t>(old)] < 0) map[static_cast<size_t>(old)] = next++;
  if (s.param_count > 0) t = detail::renumber_params(t, map);
  if (old_to_new) *old_to_new = map;
  return make_skeleton(t);
}

inline std::string canonical_render(const Skeleton& s) { return render(canonicalize(s)); }

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline Eigen::ArrayXd eval_node(const Node* n, const Eigen::VectorXd& theta,
                                const Frame& f) {
  const Eigen::Index N = f.rows();
  switch (n->kind) {
    case NodeKind::Literal:
      return Eigen::ArrayXd::Constant(N, n->value);
    case NodeKind::Parameter:
      return Eigen::ArrayXd::Constant(N, theta[n->index]);
    case NodeKind::Variable: {
      const int idx = f.column_index(n->name);
      if (idx < 0) throw DataError("missing input column: " + n->name);
      return f.X.col(idx).array();
    }
    case NodeKind::Unary:
      return -eval_node(n->kids[0].get(), theta, f);
    case NodeKind::Call: {
      Eigen::ArrayXd a = eval_node(n->kids[0].get(), theta, f);
      const std::string& fn = n->name;
      return a.unaryExpr([&fn](double v) { return apply_call(fn, v); });
    }
    case NodeKind::Binary: {
      Eigen::ArrayXd l = eval_node(n->kids[0].get(), theta, f);
      Eigen::ArrayXd r = eval_node(n->kids[1].get(), theta, f);
      switch (n->op) {
        case '+': return l + r;
        case '-': return l - r;
        case '*': return l * r;
        case '/': return l / r;
        case '^': {
          const bool odd = odd_integer_literal(n->kids[1].get());
          Eigen::ArrayXd res = Eigen::pow(l.abs(), r);
          if (odd) res = (l < 0.0).select(-res, res);
          return res;
        }
      }
      break;
    }
  }
  throw ParseError("malformed expression tree");
}

}  // namespace detail

// Vectorized evaluation over a frame. Non-finite rows propagate as-is; the
// caller decides whether that invalidates the candidate.
inline Eigen::ArrayXd evaluate(const Skeleton& s, const Eigen::VectorXd& theta,
                               const Frame& f) {
  if (theta.size() != s.param_count)
    throw DataError("theta arity mismatch: expected " + std::to_string(s.param_count) +
                    ", got " + std::to_string(theta.size()));
  return detail::eval_node(s.root.get(), theta, f);
}

// ---------------------------------------------------------------------------
// Parameter role classification

enum class ParamRole { Linear, Nonlinear };

namespace detail {

// Pass 1: parameters in structurally nonlinear positions (function arguments,
// exponents, power bases with non-unit exponents, denominators).
inline void mark_structural(const Node* n, bool nonlinear_ctx, std::vector<bool>& mark) {
  switch (n->kind) {
    case NodeKind::Literal:
    case NodeKind::Variable:
      return;
    case NodeKind::Parameter:
      if (nonlinear_ctx) mark[static_cast<size_t>(n->index)] = true;
      return;
    case NodeKind::Unary:
      mark_structural(n->kids[0].get(), nonlinear_ctx, mark);
      return;
    case NodeKind::Call:
      mark_structural(n->kids[0].get(), true, mark);
      return;
    case NodeKind::Binary:
      switch (n->op) {
        case '+':
        case '-':
        case '*':
          mark_structural(n->kids[0].get(), nonlinear_ctx, mark);
          mark_structural(n->kids[1].get(), nonlinear_ctx, mark);
          return;
        case '/':
          mark_structural(n->kids[0].get(), nonlinear_ctx, mark);
          mark_structural(n->kids[1].get(), true, mark);
          return;
        case '^': {
          const Node* e = n->kids[1].get();
          const bool unit = e->kind == NodeKind::Literal && e->value == 1.0;
          mark_structural(n->kids[0].get(), nonlinear_ctx || !unit, mark);
          mark_structural(n->kids[1].get(), true, mark);
          return;
        }
      }
      return;
  }
}

// Candidate-linear parameters (unmarked after pass 1) present in a subtree.
inline void collect_candidates(const Node* n, const std::vector<bool>& structural,
                               std::set<int>& out) {
  if (n->kind == NodeKind::Parameter && !structural[static_cast<size_t>(n->index)])
    out.insert(n->index);
  for (const auto& k : n->kids) collect_candidates(k.get(), structural, out);
}

// Pass 2: at each product, if both factors carry candidate-linear parameters
// the factors are mutually parameter-dependent, so all those candidates are
// nonlinear. Candidate sets are taken against pass-1 marks only; marking more
// parameters nonlinear is always safe for the affine reconstruction.
inline void mark_coupling(const Node* n, const std::vector<bool>& structural,
                          std::vector<bool>& mark) {
  if (n->kind == NodeKind::Binary && n->op == '*') {
    std::set<int> left, right;
    collect_candidates(n->kids[0].get(), structural, left);
    collect_candidates(n->kids[1].get(), structural, right);
    if (!left.empty() && !right.empty()) {
      for (int i : left) mark[static_cast<size_t>(i)] = true;
      for (int i : right) mark[static_cast<size_t>(i)] = true;
    }
  }
  for (const auto& k : n->kids) mark_coupling(k.get(), structural, mark);
}

}  // namespace detail

// Role of each parameter: Linear means the prediction is affine in it once all
// Nonlinear parameters are held fixed (certified by the probe reconstruction).
inline std::vector<ParamRole> classify_param_roles(const Skeleton& s) {
  std::vector<bool> structural(static_cast<size_t>(s.param_count), false);
  detail::mark_structural(s.root.get(), false, structural);
  std::vector<bool> mark = structural;
  detail::mark_coupling(s.root.get(), structural, mark);
  std::vector<ParamRole> roles(static_cast<size_t>(s.param_count));
  for (size_t i = 0; i < roles.size(); ++i)
    roles[i] = mark[i] ? ParamRole::Nonlinear : ParamRole::Linear;
  return roles;
}

// ---------------------------------------------------------------------------
// Token bags (memory features)

using TokenBag = std::map<std::string, int>;

namespace detail {

inline void count_tokens(const Node* n, TokenBag& bag) {
  switch (n->kind) {
    case NodeKind::Literal:
      break;
    case NodeKind::Parameter:
      ++bag["param"];
      break;
    case NodeKind::Variable:
      ++bag[n->name];
      break;
    case NodeKind::Unary:
      ++bag["neg"];
      break;
    case NodeKind::Call:
      ++bag[n->name];
      break;
    case NodeKind::Binary:
      ++bag[std::string(1, n->op)];
      break;
  }
  for (const auto& k : n->kids) count_tokens(k.get(), bag);
}

}  // namespace detail

// Operator/function/variable counts over the canonical form. Parameter
// occurrences collapse to one "param" token; literals are not counted.
inline TokenBag tokenize(const Skeleton& s) {
  TokenBag bag;
  detail::count_tokens(canonicalize(s).root.get(), bag);
  return bag;
}

// ---------------------------------------------------------------------------
// Subtree utilities (critic target validation)

inline void collect_subtrees(const NodePtr& n, std::vector<NodePtr>& out) {
  out.push_back(n);
  for (const auto& k : n->kids) collect_subtrees(k, out);
}

// Key that identifies a subtree up to parameter renumbering and canonical
// ordering; two fragments match iff their keys are equal.
inline std::string match_key(const NodePtr& n) {
  return detail::structure_key(detail::canonicalize_tree(n).get());
}

// True if `fragment` appears somewhere inside `s` up to canonical form.
inline bool contains_fragment(const Skeleton& s, const NodePtr& fragment) {
  const std::string want = match_key(fragment);
  std::vector<NodePtr> subs;
  collect_subtrees(canonicalize(s).root, subs);
  for (const auto& sub : subs)
    if (match_key(sub) == want) return true;
  return false;
}

inline int node_count(const NodePtr& n) {
  int c = 1;
  for (const auto& k : n->kids) c += node_count(k);
  return c;
}

}  // namespace eqdisc
