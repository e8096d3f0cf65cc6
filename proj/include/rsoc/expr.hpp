#pragma once

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rsoc {

/// Syntax error with the offending position (0-based offset into the source)
/// and a short description of what was expected there.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t pos, std::string expected_)
        : std::runtime_error(msg), position(pos), expected(std::move(expected_)) {}
    std::size_t position;
    std::string expected;
};

/// Evaluation outside a function's domain (ln of non-positive, division by
/// zero, derivative through abs). Carries the printed offending subexpression.
struct EvalDomainError : std::runtime_error {
    EvalDomainError(const std::string& msg, std::string subexpr_)
        : std::runtime_error(msg), subexpr(std::move(subexpr_)) {}
    std::string subexpr;
};

/// Value, gradient and symmetric Hessian of an expression with respect to an
/// ordered list of variables.
struct Jet2Value {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

namespace detail {
struct ExprNode;
}

/// Immutable closed-form expression over the variables {t, x, y, z, u}.
///
/// Grammar:
///   expr   := term (("+"|"-") term)*
///   term   := factor (("*"|"/") factor)*
///   factor := base ("^" integer)?
///   base   := number | ident | func "(" expr ")" | "(" expr ")" | "-" base
/// Functions: exp, ln, sin, cos, ch, th (abs accepted for evaluation only).
/// "^" takes constant integer exponents so second-order propagation is exact.
class Expression {
public:
    Expression() = default;

    double eval(const std::map<std::string, double>& bindings) const;

    /// Forward-mode value/gradient/Hessian, exact for the composed
    /// elementary functions. All free variables must be bound and `wrt`
    /// must name bound variables.
    Jet2Value eval_jet2(const std::map<std::string, double>& bindings,
                        const std::vector<std::string>& wrt) const;

    std::string str() const;
    std::vector<std::string> free_variables() const;
    bool structurally_equal(const Expression& other) const;
    bool empty() const { return root_ == nullptr; }

private:
    friend Expression parse(std::string_view);
    std::shared_ptr<const detail::ExprNode> root_;
};

Expression parse(std::string_view source);

}  // namespace rsoc
