#include "rsoc/expr.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace rsoc {
namespace detail {

enum class Op {
    Number, Var, Add, Sub, Mul, Div, Pow, Neg,
    Exp, Ln, Sin, Cos, Ch, Th, Abs
};

struct ExprNode {
    Op op = Op::Number;
    double number = 0.0;
    int var = -1;          // index into kVarNames
    int exponent = 0;      // Pow only
    std::shared_ptr<const ExprNode> a, b;
};

constexpr std::array<const char*, 5> kVarNames = {"t", "x", "y", "z", "u"};

int var_index(std::string_view name) {
    for (int i = 0; i < static_cast<int>(kVarNames.size()); ++i)
        if (name == kVarNames[i]) return i;
    return -1;
}

using NodePtr = std::shared_ptr<const ExprNode>;

NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    NodePtr parse() {
        skip_ws();
        if (pos_ >= src_.size())
            throw ParseError("empty expression", 0, "expression");
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ < src_.size())
            fail("unexpected trailing input", "end of input");
        return e;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what, const std::string& expected) {
        std::ostringstream os;
        os << what << " at position " << pos_ << " (expected " << expected << ")";
        throw ParseError(os.str(), pos_, expected);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) { ++pos_; return true; }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    NodePtr parse_expr() {
        NodePtr e = parse_term();
        for (;;) {
            if (consume('+')) e = make(Op::Add, e, parse_term());
            else if (consume('-')) e = make(Op::Sub, e, parse_term());
            else return e;
        }
    }

    NodePtr parse_term() {
        NodePtr e = parse_factor();
        for (;;) {
            if (consume('*')) e = make(Op::Mul, e, parse_factor());
            else if (consume('/')) e = make(Op::Div, e, parse_factor());
            else return e;
        }
    }

    NodePtr parse_factor() {
        NodePtr b = parse_base();
        if (consume('^')) {
            skip_ws();
            std::size_t start = pos_;
            bool neg = false;
            if (pos_ < src_.size() && (src_[pos_] == '-' || src_[pos_] == '+')) {
                neg = src_[pos_] == '-';
                ++pos_;
            }
            if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                pos_ = start;
                fail("exponent must be a constant integer", "integer");
            }
            long v = 0;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
                v = v * 10 + (src_[pos_++] - '0');
            auto n = std::make_shared<ExprNode>();
            n->op = Op::Pow;
            n->a = b;
            n->exponent = static_cast<int>(neg ? -v : v);
            return n;
        }
        return b;
    }

    NodePtr parse_base() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input", "number, identifier or '('");
        char c = src_[pos_];
        if (c == '-') {
            // Unary minus spans the whole following term: -z*u parses as
            // -(z*u) and -x^2 as -(x^2).
            ++pos_;
            return make(Op::Neg, parse_term());
        }
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            if (!consume(')')) fail("unbalanced parenthesis", "')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        fail("unexpected character", "number, identifier or '('");
    }

    NodePtr parse_number() {
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
            ++pos_;
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            } else {
                pos_ = mark;  // 'e' belongs to something else; not ours
            }
        }
        std::string text(src_.substr(start, pos_ - start));
        char* end = nullptr;
        double v = std::strtod(text.c_str(), &end);
        if (end == text.c_str() || *end != '\0') {
            pos_ = start;
            fail("malformed number", "number");
        }
        auto n = std::make_shared<ExprNode>();
        n->op = Op::Number;
        n->number = v;
        return n;
    }

    NodePtr parse_ident() {
        std::size_t start = pos_;
        while (pos_ < src_.size() && std::isalpha(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        std::string name(src_.substr(start, pos_ - start));
        static const std::map<std::string, Op> funcs = {
            {"exp", Op::Exp}, {"ln", Op::Ln},  {"sin", Op::Sin},
            {"cos", Op::Cos}, {"ch", Op::Ch},  {"th", Op::Th},
            {"abs", Op::Abs}};
        auto it = funcs.find(name);
        if (it != funcs.end()) {
            if (!consume('(')) fail("function call needs '('", "'('");
            NodePtr arg = parse_expr();
            if (!consume(')')) fail("unbalanced parenthesis", "')'");
            return make(it->second, arg);
        }
        int vi = var_index(name);
        if (vi < 0) {
            pos_ = start;
            fail("unknown identifier '" + name + "'", "one of t,x,y,z,u or a function");
        }
        auto n = std::make_shared<ExprNode>();
        n->op = Op::Var;
        n->var = vi;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

int precedence(Op op) {
    switch (op) {
        case Op::Add: case Op::Sub: return 1;
        case Op::Mul: case Op::Div: return 2;
        case Op::Pow: return 3;
        case Op::Neg: return 4;
        default: return 5;
    }
}

void print_node(const ExprNode& n, std::ostringstream& os);

void print_child(const ExprNode& child, int parent_prec, bool rhs_of_noncommutative,
                 std::ostringstream& os) {
    int cp = precedence(child.op);
    bool parens = cp < parent_prec || (cp == parent_prec && rhs_of_noncommutative);
    if (parens) os << '(';
    print_node(child, os);
    if (parens) os << ')';
}

void print_node(const ExprNode& n, std::ostringstream& os) {
    switch (n.op) {
        case Op::Number: {
            std::ostringstream tmp;
            tmp.precision(17);
            tmp << n.number;
            os << tmp.str();
            break;
        }
        case Op::Var: os << kVarNames[n.var]; break;
        case Op::Add:
            print_child(*n.a, 1, false, os); os << '+'; print_child(*n.b, 1, true, os);
            break;
        case Op::Sub:
            print_child(*n.a, 1, false, os); os << '-'; print_child(*n.b, 1, true, os);
            break;
        case Op::Mul:
            print_child(*n.a, 2, false, os); os << '*'; print_child(*n.b, 2, true, os);
            break;
        case Op::Div:
            print_child(*n.a, 2, false, os); os << '/'; print_child(*n.b, 2, true, os);
            break;
        case Op::Pow:
            print_child(*n.a, 4, true, os); os << '^' << n.exponent;
            break;
        case Op::Neg:
            os << '-'; print_child(*n.a, 4, true, os);
            break;
        case Op::Exp: os << "exp("; print_node(*n.a, os); os << ')'; break;
        case Op::Ln:  os << "ln(";  print_node(*n.a, os); os << ')'; break;
        case Op::Sin: os << "sin("; print_node(*n.a, os); os << ')'; break;
        case Op::Cos: os << "cos("; print_node(*n.a, os); os << ')'; break;
        case Op::Ch:  os << "ch(";  print_node(*n.a, os); os << ')'; break;
        case Op::Th:  os << "th(";  print_node(*n.a, os); os << ')'; break;
        case Op::Abs: os << "abs("; print_node(*n.a, os); os << ')'; break;
    }
}

std::string to_string(const ExprNode& n) {
    std::ostringstream os;
    print_node(n, os);
    return os.str();
}

// ---------------------------------------------------------------------------
// Second-order forward-mode dual numbers (at most 5 directions)
// ---------------------------------------------------------------------------

struct Dual2 {
    double v = 0.0;
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 5, 1> g;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 5> h;

    explicit Dual2(int nvars) {
        g.setZero(nvars);
        h.setZero(nvars, nvars);
    }
};

Dual2 constant(double c, int nvars) {
    Dual2 d(nvars);
    d.v = c;
    return d;
}

Dual2 add(const Dual2& a, const Dual2& b) {
    Dual2 r = a;
    r.v += b.v; r.g += b.g; r.h += b.h;
    return r;
}

Dual2 sub(const Dual2& a, const Dual2& b) {
    Dual2 r = a;
    r.v -= b.v; r.g -= b.g; r.h -= b.h;
    return r;
}

Dual2 mul(const Dual2& a, const Dual2& b) {
    Dual2 r(static_cast<int>(a.g.size()));
    r.v = a.v * b.v;
    r.g = a.v * b.g + b.v * a.g;
    r.h = a.v * b.h + b.v * a.h + a.g * b.g.transpose() + b.g * a.g.transpose();
    return r;
}

Dual2 neg(const Dual2& a) {
    Dual2 r = a;
    r.v = -r.v; r.g = -r.g; r.h = -r.h;
    return r;
}

// q = a/b from a = q*b: q.g = (a.g - q.v b.g)/b.v, and similarly for h.
Dual2 div(const Dual2& a, const Dual2& b, const ExprNode& where) {
    if (b.v == 0.0)
        throw EvalDomainError("division by zero in '" + to_string(where) + "'", to_string(where));
    Dual2 r(static_cast<int>(a.g.size()));
    r.v = a.v / b.v;
    r.g = (a.g - r.v * b.g) / b.v;
    r.h = (a.h - r.g * b.g.transpose() - b.g * r.g.transpose() - r.v * b.h) / b.v;
    return r;
}

// Chain rule for y = f(u): y' = f'(u)u', y'' = f'(u)u'' + f''(u) u'u'^T.
Dual2 apply(const Dual2& u, double f, double fp, double fpp) {
    Dual2 r(static_cast<int>(u.g.size()));
    r.v = f;
    r.g = fp * u.g;
    r.h = fp * u.h + fpp * (u.g * u.g.transpose());
    return r;
}

Dual2 pow_int(const Dual2& u, int n, const ExprNode& where) {
    int nv = static_cast<int>(u.g.size());
    if (n == 0) return constant(1.0, nv);
    if (n < 0 && u.v == 0.0)
        throw EvalDomainError("zero raised to a negative power in '" + to_string(where) + "'",
                              to_string(where));
    double f = std::pow(u.v, n);
    double fp = n * std::pow(u.v, n - 1);
    double fpp = static_cast<double>(n) * (n - 1) * std::pow(u.v, n - 2);
    if (n == 1) { fp = 1.0; fpp = 0.0; }
    return apply(u, f, fp, fpp);
}

Dual2 eval_dual(const ExprNode& n, const std::vector<double>& values,
                const std::vector<int>& direction_of_var, int nvars, bool want_derivs) {
    switch (n.op) {
        case Op::Number: return constant(n.number, nvars);
        case Op::Var: {
            Dual2 d(nvars);
            d.v = values[n.var];
            int dir = direction_of_var[n.var];
            if (dir >= 0) d.g[dir] = 1.0;
            return d;
        }
        case Op::Add: return add(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs),
                                 eval_dual(*n.b, values, direction_of_var, nvars, want_derivs));
        case Op::Sub: return sub(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs),
                                 eval_dual(*n.b, values, direction_of_var, nvars, want_derivs));
        case Op::Mul: return mul(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs),
                                 eval_dual(*n.b, values, direction_of_var, nvars, want_derivs));
        case Op::Div: return div(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs),
                                 eval_dual(*n.b, values, direction_of_var, nvars, want_derivs), *n.b);
        case Op::Pow: return pow_int(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs),
                                     n.exponent, n);
        case Op::Neg: return neg(eval_dual(*n.a, values, direction_of_var, nvars, want_derivs));
        case Op::Exp: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            double e = std::exp(u.v);
            return apply(u, e, e, e);
        }
        case Op::Ln: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            if (u.v <= 0.0)
                throw EvalDomainError("ln of non-positive value in '" + to_string(n) + "'",
                                      to_string(n));
            return apply(u, std::log(u.v), 1.0 / u.v, -1.0 / (u.v * u.v));
        }
        case Op::Sin: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            return apply(u, std::sin(u.v), std::cos(u.v), -std::sin(u.v));
        }
        case Op::Cos: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            return apply(u, std::cos(u.v), -std::sin(u.v), -std::cos(u.v));
        }
        case Op::Ch: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            return apply(u, std::cosh(u.v), std::sinh(u.v), std::cosh(u.v));
        }
        case Op::Th: {
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            double t = std::tanh(u.v);
            double s = 1.0 - t * t;  // sech^2
            return apply(u, t, s, -2.0 * t * s);
        }
        case Op::Abs: {
            if (want_derivs)
                throw EvalDomainError(
                    "derivative requested through abs in '" + to_string(n) + "'", to_string(n));
            Dual2 u = eval_dual(*n.a, values, direction_of_var, nvars, want_derivs);
            return constant(std::abs(u.v), nvars);
        }
    }
    throw std::logic_error("unreachable expression node");
}

void collect_vars(const ExprNode& n, std::array<bool, 5>& seen) {
    if (n.op == Op::Var) seen[n.var] = true;
    if (n.a) collect_vars(*n.a, seen);
    if (n.b) collect_vars(*n.b, seen);
}

bool nodes_equal(const ExprNode& a, const ExprNode& b) {
    if (a.op != b.op) return false;
    switch (a.op) {
        case Op::Number: return a.number == b.number;
        case Op::Var: return a.var == b.var;
        case Op::Pow: return a.exponent == b.exponent && nodes_equal(*a.a, *b.a);
        default: break;
    }
    if ((a.a == nullptr) != (b.a == nullptr)) return false;
    if ((a.b == nullptr) != (b.b == nullptr)) return false;
    if (a.a && !nodes_equal(*a.a, *b.a)) return false;
    if (a.b && !nodes_equal(*a.b, *b.b)) return false;
    return true;
}

}  // namespace detail

Expression parse(std::string_view source) {
    detail::Parser p(source);
    Expression e;
    e.root_ = p.parse();
    return e;
}

static void prepare_bindings(const detail::ExprNode& root,
                             const std::map<std::string, double>& bindings,
                             std::vector<double>& values) {
    std::array<bool, 5> used{};
    detail::collect_vars(root, used);
    values.assign(5, 0.0);
    for (int i = 0; i < 5; ++i) {
        auto it = bindings.find(detail::kVarNames[i]);
        if (it != bindings.end()) values[i] = it->second;
        else if (used[i])
            throw std::invalid_argument(std::string("unbound variable '") +
                                        detail::kVarNames[i] + "'");
    }
}

double Expression::eval(const std::map<std::string, double>& bindings) const {
    if (!root_) throw std::logic_error("empty expression");
    std::vector<double> values;
    prepare_bindings(*root_, bindings, values);
    std::vector<int> dirs(5, -1);
    return detail::eval_dual(*root_, values, dirs, 0, false).v;
}

Jet2Value Expression::eval_jet2(const std::map<std::string, double>& bindings,
                                const std::vector<std::string>& wrt) const {
    if (!root_) throw std::logic_error("empty expression");
    std::vector<double> values;
    prepare_bindings(*root_, bindings, values);
    std::vector<int> dirs(5, -1);
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        int vi = detail::var_index(wrt[k]);
        if (vi < 0) throw std::invalid_argument("unknown differentiation variable '" + wrt[k] + "'");
        if (!bindings.count(wrt[k]))
            throw std::invalid_argument("differentiation variable '" + wrt[k] + "' is not bound");
        dirs[vi] = static_cast<int>(k);
    }
    detail::Dual2 d = detail::eval_dual(*root_, values, dirs, static_cast<int>(wrt.size()),
                                        !wrt.empty());
    Jet2Value out;
    out.value = d.v;
    out.grad = d.g;
    out.hess = 0.5 * (d.h + d.h.transpose());  // symmetrize away rounding
    return out;
}

std::string Expression::str() const {
    if (!root_) return std::string();
    return detail::to_string(*root_);
}

std::vector<std::string> Expression::free_variables() const {
    std::vector<std::string> out;
    if (!root_) return out;
    std::array<bool, 5> used{};
    detail::collect_vars(*root_, used);
    for (int i = 0; i < 5; ++i)
        if (used[i]) out.emplace_back(detail::kVarNames[i]);
    return out;
}

bool Expression::structurally_equal(const Expression& other) const {
    if (!root_ || !other.root_) return root_ == other.root_;
    return detail::nodes_equal(*root_, *other.root_);
}

}  // namespace rsoc
