#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "singulo/nonlinear.hpp"

namespace singulo {

/// Polynomial expression over x1..xn: numbers, + - *, ^ with a
/// nonnegative integer exponent, unary minus and parentheses.
class Polynomial {
 public:
  Polynomial() = default;

  static Polynomial parse(const std::string& src, Eigen::Index n) {
    Parser p{src, 0, n};
    Polynomial out;
    out.root_ = p.expr();
    p.skip();
    if (p.pos != src.size()) p.fail("unexpected '" + std::string(1, src[p.pos]) + "'");
    out.source_ = src;
    return out;
  }

  double operator()(const Vec& x) const { return root_ ? root_->eval(x) : 0.0; }
  const std::string& source() const { return source_; }
  bool depends_on_state() const { return root_ && root_->uses_vars(); }

 private:
  struct Node {
    enum Kind { num, var, add, sub, mul, neg, pow } kind = num;
    double value = 0;
    Eigen::Index index = 0;
    int exponent = 0;
    std::shared_ptr<const Node> a, b;

    double eval(const Vec& x) const {
      switch (kind) {
        case num: return value;
        case var: return x(index);
        case add: return a->eval(x) + b->eval(x);
        case sub: return a->eval(x) - b->eval(x);
        case mul: return a->eval(x) * b->eval(x);
        case neg: return -a->eval(x);
        case pow: {
          const double base = a->eval(x);
          double r = 1;
          for (int i = 0; i < exponent; ++i) r *= base;
          return r;
        }
      }
      return 0;
    }

    bool uses_vars() const {
      if (kind == var) return true;
      return (a && a->uses_vars()) || (b && b->uses_vars());
    }
  };
  using NodeP = std::shared_ptr<const Node>;

  struct Parser {
    const std::string& s;
    std::size_t pos;
    Eigen::Index n;

    [[noreturn]] void fail(const std::string& msg) const {
      throw Error(Errc::parse_error, "expression '" + s + "' at " + std::to_string(pos) + ": " + msg);
    }
    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool accept(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    static NodeP make(Node::Kind k, NodeP a, NodeP b = nullptr) {
      auto nd = std::make_shared<Node>();
      nd->kind = k;
      nd->a = std::move(a);
      nd->b = std::move(b);
      return nd;
    }

    NodeP expr() {
      NodeP left = term();
      while (true) {
        if (accept('+')) left = make(Node::add, left, term());
        else if (accept('-')) left = make(Node::sub, left, term());
        else return left;
      }
    }
    NodeP term() {
      NodeP left = unary();
      while (accept('*')) left = make(Node::mul, left, unary());
      return left;
    }
    NodeP unary() {
      if (accept('-')) return make(Node::neg, unary());
      if (accept('+')) return unary();
      return power();
    }
    NodeP power() {
      NodeP base = primary();
      if (accept('^')) {
        skip();
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (start == pos) fail("exponent must be a nonnegative integer");
        auto nd = std::make_shared<Node>();
        nd->kind = Node::pow;
        nd->a = base;
        nd->exponent = std::stoi(s.substr(start, pos - start));
        return nd;
      }
      return base;
    }
    NodeP primary() {
      skip();
      if (pos >= s.size()) fail("unexpected end");
      if (accept('(')) {
        NodeP e = expr();
        if (!accept(')')) fail("missing ')'");
        return e;
      }
      const char c = s[pos];
      if (c == 'x') {
        ++pos;
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (start == pos) fail("variable needs an index");
        const long idx = std::stol(s.substr(start, pos - start));
        if (idx < 1 || idx > n) fail("variable x" + std::to_string(idx) + " out of range");
        auto nd = std::make_shared<Node>();
        nd->kind = Node::var;
        nd->index = static_cast<Eigen::Index>(idx - 1);
        return nd;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0;
        try {
          v = std::stod(s.substr(pos), &used);
        } catch (const std::exception&) {
          fail("bad number");
        }
        pos += used;
        auto nd = std::make_shared<Node>();
        nd->kind = Node::num;
        nd->value = v;
        return nd;
      }
      fail("unexpected '" + std::string(1, c) + "'");
    }
  };

  NodeP root_;
  std::string source_;
};

/// Reads {"f": [...], "G": [[...]], "flavor": "general|constant_g|driftless"}.
inline ControlAffineSystem system_from_json(const nlohmann::json& j, const std::string& name = "user") {
  if (!j.is_object() || !j.contains("f") || !j.contains("G"))
    throw Error(Errc::parse_error, "system needs keys 'f' and 'G'");
  const auto& jf = j.at("f");
  const auto& jg = j.at("G");
  if (!jf.is_array() || jf.empty() || !jg.is_array() || jg.size() != jf.size())
    throw Error(Errc::parse_error, "system 'f' and 'G' must have one row per state");
  const auto n = static_cast<Eigen::Index>(jf.size());
  if (!jg[0].is_array() || jg[0].empty()) throw Error(Errc::parse_error, "system 'G' rows must be arrays");
  const auto k = static_cast<Eigen::Index>(jg[0].size());
  auto text = [](const nlohmann::json& e) {
    if (e.is_string()) return e.get<std::string>();
    if (e.is_number()) return e.dump();
    throw Error(Errc::parse_error, "system entries must be strings or numbers");
  };
  std::vector<Polynomial> f, G;
  for (const auto& e : jf) f.push_back(Polynomial::parse(text(e), n));
  for (const auto& row : jg) {
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != k)
      throw Error(Errc::parse_error, "system 'G' rows must have equal length");
    for (const auto& e : row) G.push_back(Polynomial::parse(text(e), n));
  }
  ControlAffineSystem sys;
  sys.name = name;
  sys.n = n;
  sys.k = k;
  sys.f = [f](const Vec& x) {
    Vec d(static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) d(static_cast<Eigen::Index>(i)) = f[i](x);
    return d;
  };
  sys.G = [G, n, k](const Vec& x) {
    Mat g(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < k; ++c) g(i, c) = G[static_cast<std::size_t>(i * k + c)](x);
    return g;
  };
  const std::string flavor = j.value("flavor", "general");
  if (flavor == "general") sys.flavor = Flavor::general;
  else if (flavor == "constant_g" || flavor == "constant-G") sys.flavor = Flavor::constant_g;
  else if (flavor == "driftless") sys.flavor = Flavor::driftless;
  else throw Error(Errc::parse_error, "unknown flavor '" + flavor + "'");
  if (sys.flavor == Flavor::driftless) {
    for (const auto& p : f)
      if (p.depends_on_state() || p(Vec::Zero(n)) != 0)
        throw Error(Errc::flavor_mismatch, "driftless system with nonzero drift");
  }
  if (sys.flavor == Flavor::constant_g && constant_g_defect(sys) > 1e-12)
    throw Error(Errc::flavor_mismatch, "declared constant G depends on the state");
  return sys;
}

}  // namespace singulo
