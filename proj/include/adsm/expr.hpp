#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adsm/errors.hpp"

namespace adsm {

// Closed expression over a fixed variable list. Grammar: numbers,
// variables, + - * /, unary minus, integer ^, parentheses, and the
// functions tanh, exp, sin, cos. Partial derivatives are symbolic.
class Expr {
  public:
    struct Node;  // defined in expr.cpp

    static Expr parse(const std::string& text, const std::vector<std::string>& vars);
    static Expr constant(double c);

    double eval(std::span<const double> x) const;
    Expr diff(int var) const;
    int arity() const { return arity_; }
    std::string text() const;

  private:
    Expr(std::shared_ptr<const Node> root, int arity) : root_(std::move(root)), arity_(arity) {}
    std::shared_ptr<const Node> root_;
    int arity_ = 0;
};

}  // namespace adsm
