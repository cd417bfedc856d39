#include "adsm/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

namespace adsm {

namespace {
enum class Fun { kTanh, kExp, kSin, kCos };
}

struct Expr::Node {
    enum class Kind { kConst, kVar, kAdd, kSub, kMul, kDiv, kNeg, kPow, kFun };
    Kind kind;
    double value = 0.0;  // kConst
    int var = -1;        // kVar
    int exponent = 0;    // kPow
    Fun fun = Fun::kTanh;
    std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;
using Kind = Expr::Node::Kind;

NodePtr leaf_const(double c) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = Kind::kConst;
    n->value = c;
    return n;
}

NodePtr leaf_var(int i) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = Kind::kVar;
    n->var = i;
    return n;
}

bool is_const(const NodePtr& n, double c) { return n->kind == Kind::kConst && n->value == c; }

NodePtr mk(Kind kind, NodePtr a, NodePtr b) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = kind;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

NodePtr mk_add(NodePtr a, NodePtr b) {
    if (is_const(a, 0.0)) return b;
    if (is_const(b, 0.0)) return a;
    if (a->kind == Kind::kConst && b->kind == Kind::kConst) return leaf_const(a->value + b->value);
    return mk(Kind::kAdd, std::move(a), std::move(b));
}

NodePtr mk_sub(NodePtr a, NodePtr b) {
    if (is_const(b, 0.0)) return a;
    if (a->kind == Kind::kConst && b->kind == Kind::kConst) return leaf_const(a->value - b->value);
    if (is_const(a, 0.0)) return mk(Kind::kNeg, std::move(b), nullptr);
    return mk(Kind::kSub, std::move(a), std::move(b));
}

NodePtr mk_mul(NodePtr a, NodePtr b) {
    if (is_const(a, 0.0) || is_const(b, 0.0)) return leaf_const(0.0);
    if (is_const(a, 1.0)) return b;
    if (is_const(b, 1.0)) return a;
    if (a->kind == Kind::kConst && b->kind == Kind::kConst) return leaf_const(a->value * b->value);
    return mk(Kind::kMul, std::move(a), std::move(b));
}

NodePtr mk_div(NodePtr a, NodePtr b) {
    if (is_const(a, 0.0)) return leaf_const(0.0);
    if (is_const(b, 1.0)) return a;
    if (a->kind == Kind::kConst && b->kind == Kind::kConst && b->value != 0.0) {
        return leaf_const(a->value / b->value);
    }
    return mk(Kind::kDiv, std::move(a), std::move(b));
}

NodePtr mk_neg(NodePtr a) {
    if (a->kind == Kind::kConst) return leaf_const(-a->value);
    return mk(Kind::kNeg, std::move(a), nullptr);
}

NodePtr mk_pow(NodePtr a, int e) {
    if (e == 0) return leaf_const(1.0);
    if (e == 1) return a;
    auto n = std::make_shared<Expr::Node>();
    n->kind = Kind::kPow;
    n->exponent = e;
    n->a = std::move(a);
    return n;
}

NodePtr mk_fun(Fun f, NodePtr a) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = Kind::kFun;
    n->fun = f;
    n->a = std::move(a);
    return n;
}

double eval_node(const Expr::Node& n, std::span<const double> x) {
    switch (n.kind) {
        case Kind::kConst: return n.value;
        case Kind::kVar: return x[n.var];
        case Kind::kAdd: return eval_node(*n.a, x) + eval_node(*n.b, x);
        case Kind::kSub: return eval_node(*n.a, x) - eval_node(*n.b, x);
        case Kind::kMul: return eval_node(*n.a, x) * eval_node(*n.b, x);
        case Kind::kDiv: return eval_node(*n.a, x) / eval_node(*n.b, x);
        case Kind::kNeg: return -eval_node(*n.a, x);
        case Kind::kPow: return std::pow(eval_node(*n.a, x), n.exponent);
        case Kind::kFun: {
            const double v = eval_node(*n.a, x);
            switch (n.fun) {
                case Fun::kTanh: return std::tanh(v);
                case Fun::kExp: return std::exp(v);
                case Fun::kSin: return std::sin(v);
                case Fun::kCos: return std::cos(v);
            }
        }
    }
    return 0.0;
}

NodePtr diff_node(const NodePtr& n, int var) {
    switch (n->kind) {
        case Kind::kConst: return leaf_const(0.0);
        case Kind::kVar: return leaf_const(n->var == var ? 1.0 : 0.0);
        case Kind::kAdd: return mk_add(diff_node(n->a, var), diff_node(n->b, var));
        case Kind::kSub: return mk_sub(diff_node(n->a, var), diff_node(n->b, var));
        case Kind::kMul:
            return mk_add(mk_mul(diff_node(n->a, var), n->b), mk_mul(n->a, diff_node(n->b, var)));
        case Kind::kDiv:
            return mk_div(mk_sub(mk_mul(diff_node(n->a, var), n->b), mk_mul(n->a, diff_node(n->b, var))),
                          mk_pow(n->b, 2));
        case Kind::kNeg: return mk_neg(diff_node(n->a, var));
        case Kind::kPow:
            return mk_mul(mk_mul(leaf_const(n->exponent), mk_pow(n->a, n->exponent - 1)),
                          diff_node(n->a, var));
        case Kind::kFun: {
            NodePtr inner = diff_node(n->a, var);
            switch (n->fun) {
                case Fun::kTanh:
                    // 1 - tanh^2
                    return mk_mul(mk_sub(leaf_const(1.0), mk_pow(mk_fun(Fun::kTanh, n->a), 2)), inner);
                case Fun::kExp: return mk_mul(mk_fun(Fun::kExp, n->a), inner);
                case Fun::kSin: return mk_mul(mk_fun(Fun::kCos, n->a), inner);
                case Fun::kCos: return mk_neg(mk_mul(mk_fun(Fun::kSin, n->a), inner));
            }
        }
    }
    return leaf_const(0.0);
}

void render(const Expr::Node& n, std::ostream& os) {
    switch (n.kind) {
        case Kind::kConst: os << n.value; return;
        case Kind::kVar: os << "x" << (n.var + 1); return;
        case Kind::kAdd: os << "("; render(*n.a, os); os << " + "; render(*n.b, os); os << ")"; return;
        case Kind::kSub: os << "("; render(*n.a, os); os << " - "; render(*n.b, os); os << ")"; return;
        case Kind::kMul: os << "("; render(*n.a, os); os << " * "; render(*n.b, os); os << ")"; return;
        case Kind::kDiv: os << "("; render(*n.a, os); os << " / "; render(*n.b, os); os << ")"; return;
        case Kind::kNeg: os << "(-"; render(*n.a, os); os << ")"; return;
        case Kind::kPow: render(*n.a, os); os << "^" << n.exponent; return;
        case Kind::kFun:
            switch (n.fun) {
                case Fun::kTanh: os << "tanh"; break;
                case Fun::kExp: os << "exp"; break;
                case Fun::kSin: os << "sin"; break;
                case Fun::kCos: os << "cos"; break;
            }
            os << "(";
            render(*n.a, os);
            os << ")";
            return;
    }
}

class Parser {
  public:
    Parser(const std::string& text, const std::vector<std::string>& vars) : text_(text) {
        for (size_t i = 0; i < vars.size(); ++i) vars_[vars[i]] = static_cast<int>(i);
    }

    NodePtr run() {
        NodePtr e = expression();
        skip_ws();
        if (pos_ != text_.size()) fail("trailing input");
        return e;
    }

  private:
    [[noreturn]] void fail(const std::string& why) {
        throw ParseError("expression \"" + text_ + "\": " + why + " at offset " + std::to_string(pos_));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr expression() {
        NodePtr e = term();
        for (;;) {
            if (accept('+')) {
                e = mk_add(std::move(e), term());
            } else if (accept('-')) {
                e = mk_sub(std::move(e), term());
            } else {
                return e;
            }
        }
    }

    NodePtr term() {
        NodePtr e = factor();
        for (;;) {
            if (accept('*')) {
                e = mk_mul(std::move(e), factor());
            } else if (accept('/')) {
                e = mk_div(std::move(e), factor());
            } else {
                return e;
            }
        }
    }

    NodePtr factor() {
        if (accept('-')) return mk_neg(factor());
        NodePtr base = atom();
        if (accept('^')) {
            bool neg = accept('-');
            skip_ws();
            size_t start = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            if (start == pos_) fail("integer exponent expected");
            const int e = std::atoi(text_.substr(start, pos_ - start).c_str());
            return mk_pow(std::move(base), neg ? -e : e);
        }
        return base;
    }

    NodePtr atom() {
        skip_ws();
        if (pos_ >= text_.size()) fail("operand expected");
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = expression();
            if (!accept(')')) fail("')' expected");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
        fail("operand expected");
    }

    NodePtr number() {
        size_t end = pos_;
        const char* begin = text_.c_str() + pos_;
        char* stop = nullptr;
        const double v = std::strtod(begin, &stop);
        if (stop == begin) fail("malformed number");
        end = pos_ + static_cast<size_t>(stop - begin);
        pos_ = end;
        return leaf_const(v);
    }

    NodePtr identifier() {
        size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
            ++pos_;
        }
        const std::string name = text_.substr(start, pos_ - start);
        if (accept('(')) {
            Fun f;
            if (name == "tanh") {
                f = Fun::kTanh;
            } else if (name == "exp") {
                f = Fun::kExp;
            } else if (name == "sin") {
                f = Fun::kSin;
            } else if (name == "cos") {
                f = Fun::kCos;
            } else {
                fail("unknown function '" + name + "'");
            }
            NodePtr arg = expression();
            if (!accept(')')) fail("')' expected");
            return mk_fun(f, std::move(arg));
        }
        auto it = vars_.find(name);
        if (it == vars_.end()) fail("unknown variable '" + name + "'");
        return leaf_var(it->second);
    }

    const std::string& text_;
    std::map<std::string, int> vars_;
    size_t pos_ = 0;
};

}  // namespace

Expr Expr::parse(const std::string& text, const std::vector<std::string>& vars) {
    Parser p(text, vars);
    return Expr(p.run(), static_cast<int>(vars.size()));
}

Expr Expr::constant(double c) { return Expr(leaf_const(c), 0); }

double Expr::eval(std::span<const double> x) const {
    if (static_cast<int>(x.size()) < arity_) {
        throw DomainError("expression evaluated with too few variables");
    }
    return eval_node(*root_, x);
}

Expr Expr::diff(int var) const { return Expr(diff_node(root_, var), arity_); }

std::string Expr::text() const {
    std::ostringstream os;
    render(*root_, os);
    return os.str();
}

}  // namespace adsm
