#pragma once

// Scalar expression language over (x1, x2, declared parameters) with exact
// symbolic differentiation. Grammar (documented in docs/formats.md):
//
//   expr    := term  (('+'|'-') term)*
//   term    := unary (('*'|'/') unary)*
//   unary   := '-' unary | power
//   power   := primary ['^' exponent]          exponent is a numeric literal,
//   primary := number | ident | ident '(' expr ')' | '(' expr ')'
//
// Precedence: pow > unary > mul/div > add/sub. '^' does not chain.
// Functions: sin cos exp log sqrt. Identifiers must be declared symbols.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace polycyc {

class SymbolTable {
public:
    SymbolTable() : names_{"x1", "x2"} {}

    int add(const std::string& name) {
        int slot = find(name);
        if (slot >= 0) return slot;
        names_.push_back(name);
        return static_cast<int>(names_.size()) - 1;
    }
    int find(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return static_cast<int>(i);
        return -1;
    }
    int size() const { return static_cast<int>(names_.size()); }
    const std::string& name(int slot) const { return names_.at(slot); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
};

using SymbolsPtr = std::shared_ptr<const SymbolTable>;

struct ParseError : std::runtime_error {
    size_t offset;
    ParseError(const std::string& what, size_t off)
        : std::runtime_error(what + " (at offset " + std::to_string(off) + ")"), offset(off) {}
};

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ExprOp {
    Const, Var,
    Neg, Sin, Cos, Exp, Log, Sqrt,
    Add, Sub, Mul, Div, Pow
};

struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
    ExprOp op;
    double value = 0.0;  // Const payload, or the constant exponent of Pow
    int slot = -1;       // Var payload
    NodePtr a, b;
};

namespace detail {

inline NodePtr mk_const(double v) {
    auto n = std::make_shared<ExprNode>();
    n->op = ExprOp::Const;
    n->value = v;
    return n;
}
inline NodePtr mk_var(int slot) {
    auto n = std::make_shared<ExprNode>();
    n->op = ExprOp::Var;
    n->slot = slot;
    return n;
}
inline NodePtr mk_unary(ExprOp op, NodePtr a) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->a = std::move(a);
    return n;
}
inline bool is_const(const NodePtr& n, double v) {
    return n->op == ExprOp::Const && n->value == v;
}

inline double eval_node(const ExprNode& n, std::span<const double> env);

// Light local simplification; applied while building derivative trees so the
// iterated Lie derivatives stay a manageable size.
inline NodePtr mk_binary(ExprOp op, NodePtr a, NodePtr b) {
    if (a->op == ExprOp::Const && b->op == ExprOp::Const && op != ExprOp::Pow) {
        double v = 0;
        switch (op) {
            case ExprOp::Add: v = a->value + b->value; break;
            case ExprOp::Sub: v = a->value - b->value; break;
            case ExprOp::Mul: v = a->value * b->value; break;
            case ExprOp::Div:
                if (b->value == 0.0) break;  // keep the node; error at eval time
                v = a->value / b->value;
                break;
            default: break;
        }
        if (!(op == ExprOp::Div && b->value == 0.0)) return mk_const(v);
    }
    switch (op) {
        case ExprOp::Add:
            if (is_const(a, 0)) return b;
            if (is_const(b, 0)) return a;
            break;
        case ExprOp::Sub:
            if (is_const(b, 0)) return a;
            if (is_const(a, 0)) return mk_unary(ExprOp::Neg, b);
            break;
        case ExprOp::Mul:
            if (is_const(a, 0) || is_const(b, 0)) return mk_const(0);
            if (is_const(a, 1)) return b;
            if (is_const(b, 1)) return a;
            break;
        case ExprOp::Div:
            if (is_const(a, 0)) return mk_const(0);
            if (is_const(b, 1)) return a;
            break;
        case ExprOp::Pow:
            if (is_const(b, 1)) return a;
            if (is_const(b, 0)) return mk_const(1);
            break;
        default: break;
    }
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    if (op == ExprOp::Pow) n->value = n->b->value;
    return n;
}

inline double eval_node(const ExprNode& n, std::span<const double> env) {
    switch (n.op) {
        case ExprOp::Const: return n.value;
        case ExprOp::Var:
            if (n.slot < 0 || n.slot >= static_cast<int>(env.size()))
                throw EvalError("unbound variable slot " + std::to_string(n.slot));
            return env[n.slot];
        case ExprOp::Neg: return -eval_node(*n.a, env);
        case ExprOp::Sin: return std::sin(eval_node(*n.a, env));
        case ExprOp::Cos: return std::cos(eval_node(*n.a, env));
        case ExprOp::Exp: return std::exp(eval_node(*n.a, env));
        case ExprOp::Log: {
            double v = eval_node(*n.a, env);
            if (v <= 0.0) throw EvalError("log of non-positive value");
            return std::log(v);
        }
        case ExprOp::Sqrt: {
            double v = eval_node(*n.a, env);
            if (v < 0.0) throw EvalError("sqrt of negative value");
            return std::sqrt(v);
        }
        case ExprOp::Add: return eval_node(*n.a, env) + eval_node(*n.b, env);
        case ExprOp::Sub: return eval_node(*n.a, env) - eval_node(*n.b, env);
        case ExprOp::Mul: return eval_node(*n.a, env) * eval_node(*n.b, env);
        case ExprOp::Div: {
            double num = eval_node(*n.a, env), den = eval_node(*n.b, env);
            if (den == 0.0) throw EvalError("division by zero");
            return num / den;
        }
        case ExprOp::Pow: {
            double base = eval_node(*n.a, env), c = n.value;
            if (c == std::floor(c) && std::fabs(c) <= 64) {
                // exact integer powers by repeated multiplication
                long k = static_cast<long>(c);
                if (k == 0) return 1.0;
                bool inv = k < 0;
                if (inv) k = -k;
                double r = 1.0, p = base;
                while (k) {
                    if (k & 1) r *= p;
                    p *= p;
                    k >>= 1;
                }
                if (inv) {
                    if (r == 0.0) throw EvalError("division by zero in negative power");
                    return 1.0 / r;
                }
                return r;
            }
            if (base < 0.0) throw EvalError("non-integer power of negative base");
            return std::pow(base, c);
        }
    }
    throw EvalError("corrupt expression node");
}

inline NodePtr diff_node(const NodePtr& n, int slot) {
    using namespace detail;
    switch (n->op) {
        case ExprOp::Const: return mk_const(0);
        case ExprOp::Var: return mk_const(n->slot == slot ? 1.0 : 0.0);
        case ExprOp::Neg: return mk_unary(ExprOp::Neg, diff_node(n->a, slot));
        case ExprOp::Sin:
            return mk_binary(ExprOp::Mul, mk_unary(ExprOp::Cos, n->a), diff_node(n->a, slot));
        case ExprOp::Cos:
            return mk_unary(ExprOp::Neg,
                            mk_binary(ExprOp::Mul, mk_unary(ExprOp::Sin, n->a), diff_node(n->a, slot)));
        case ExprOp::Exp:
            return mk_binary(ExprOp::Mul, mk_unary(ExprOp::Exp, n->a), diff_node(n->a, slot));
        case ExprOp::Log:
            return mk_binary(ExprOp::Div, diff_node(n->a, slot), n->a);
        case ExprOp::Sqrt:
            return mk_binary(ExprOp::Div, diff_node(n->a, slot),
                             mk_binary(ExprOp::Mul, mk_const(2), mk_unary(ExprOp::Sqrt, n->a)));
        case ExprOp::Add:
            return mk_binary(ExprOp::Add, diff_node(n->a, slot), diff_node(n->b, slot));
        case ExprOp::Sub:
            return mk_binary(ExprOp::Sub, diff_node(n->a, slot), diff_node(n->b, slot));
        case ExprOp::Mul:
            return mk_binary(ExprOp::Add,
                             mk_binary(ExprOp::Mul, diff_node(n->a, slot), n->b),
                             mk_binary(ExprOp::Mul, n->a, diff_node(n->b, slot)));
        case ExprOp::Div:
            return mk_binary(
                ExprOp::Div,
                mk_binary(ExprOp::Sub,
                          mk_binary(ExprOp::Mul, diff_node(n->a, slot), n->b),
                          mk_binary(ExprOp::Mul, n->a, diff_node(n->b, slot))),
                mk_binary(ExprOp::Pow, n->b, mk_const(2)));
        case ExprOp::Pow: {
            double c = n->value;
            NodePtr inner = mk_binary(ExprOp::Pow, n->a, mk_const(c - 1.0));
            return mk_binary(ExprOp::Mul, mk_const(c),
                             mk_binary(ExprOp::Mul, inner, diff_node(n->a, slot)));
        }
    }
    throw EvalError("corrupt expression node");
}

inline void collect_vars(const NodePtr& n, std::vector<bool>& seen) {
    if (!n) return;
    if (n->op == ExprOp::Var && n->slot >= 0) {
        if (n->slot >= static_cast<int>(seen.size())) seen.resize(n->slot + 1, false);
        seen[n->slot] = true;
    }
    collect_vars(n->a, seen);
    collect_vars(n->b, seen);
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline int precedence(ExprOp op) {
    switch (op) {
        case ExprOp::Add: case ExprOp::Sub: return 1;
        case ExprOp::Mul: case ExprOp::Div: return 2;
        case ExprOp::Neg: return 3;
        case ExprOp::Pow: return 4;
        default: return 5;
    }
}

inline void print_node(const ExprNode& n, const SymbolTable& syms, int parent_prec,
                       bool right_of_sub, std::string& out) {
    int prec = precedence(n.op);
    bool parens = prec < parent_prec || (prec == parent_prec && right_of_sub);
    switch (n.op) {
        case ExprOp::Const:
            if (n.value < 0) {
                out += '(';
                out += fmt_double(n.value);
                out += ')';
            } else {
                out += fmt_double(n.value);
            }
            return;
        case ExprOp::Var: out += syms.name(n.slot); return;
        case ExprOp::Neg:
            if (parens) out += '(';
            out += '-';
            print_node(*n.a, syms, prec + 1, false, out);
            if (parens) out += ')';
            return;
        case ExprOp::Sin: case ExprOp::Cos: case ExprOp::Exp:
        case ExprOp::Log: case ExprOp::Sqrt: {
            const char* f = n.op == ExprOp::Sin   ? "sin"
                            : n.op == ExprOp::Cos ? "cos"
                            : n.op == ExprOp::Exp ? "exp"
                            : n.op == ExprOp::Log ? "log"
                                                  : "sqrt";
            out += f;
            out += '(';
            print_node(*n.a, syms, 0, false, out);
            out += ')';
            return;
        }
        case ExprOp::Pow:
            if (parens) out += '(';
            print_node(*n.a, syms, prec + 1, false, out);
            out += '^';
            if (n.value < 0) {
                out += '(';
                out += fmt_double(n.value);
                out += ')';
            } else {
                out += fmt_double(n.value);
            }
            if (parens) out += ')';
            return;
        default: {
            char sym = n.op == ExprOp::Add   ? '+'
                       : n.op == ExprOp::Sub ? '-'
                       : n.op == ExprOp::Mul ? '*'
                                             : '/';
            if (parens) out += '(';
            print_node(*n.a, syms, prec, false, out);
            out += sym;
            // parenthesize equal precedence on the right so the reparse
            // rebuilds the identical tree (no reassociation)
            print_node(*n.b, syms, prec, true, out);
            if (parens) out += ')';
            return;
        }
    }
}

}  // namespace detail

class Expr {
public:
    Expr() = default;

    static Expr parse(const std::string& src, SymbolsPtr syms);

    static Expr constant(double v, SymbolsPtr syms) { return Expr(detail::mk_const(v), std::move(syms)); }
    static Expr variable(int slot, SymbolsPtr syms) { return Expr(detail::mk_var(slot), std::move(syms)); }
    static Expr variable(const std::string& name, const SymbolsPtr& syms) {
        int slot = syms->find(name);
        if (slot < 0) throw EvalError("undeclared identifier '" + name + "'");
        return Expr(detail::mk_var(slot), syms);
    }

    bool valid() const { return static_cast<bool>(root_); }

    double eval(std::span<const double> env) const { return detail::eval_node(*root_, env); }
    double eval(const std::map<std::string, double>& env) const {
        std::vector<double> slots(syms_->size(), std::numeric_limits<double>::quiet_NaN());
        std::vector<bool> bound(syms_->size(), false);
        for (const auto& [k, v] : env) {
            int slot = syms_->find(k);
            if (slot < 0) throw EvalError("undeclared identifier '" + k + "'");
            slots[slot] = v;
            bound[slot] = true;
        }
        for (int s : free_vars())
            if (!bound[s]) throw EvalError("unbound variable '" + syms_->name(s) + "'");
        return eval(slots);
    }

    Expr diff(int slot) const { return Expr(detail::diff_node(root_, slot), syms_); }
    Expr diff(const std::string& name) const {
        int slot = syms_->find(name);
        if (slot < 0) throw EvalError("undeclared identifier '" + name + "'");
        return diff(slot);
    }

    std::vector<int> free_vars() const {
        std::vector<bool> seen;
        detail::collect_vars(root_, seen);
        std::vector<int> out;
        for (size_t i = 0; i < seen.size(); ++i)
            if (seen[i]) out.push_back(static_cast<int>(i));
        return out;
    }
    bool depends_on(int slot) const {
        std::vector<bool> seen;
        detail::collect_vars(root_, seen);
        return slot < static_cast<int>(seen.size()) && seen[slot];
    }

    std::string str() const {
        std::string out;
        detail::print_node(*root_, *syms_, 0, false, out);
        return out;
    }

    const SymbolsPtr& symbols() const { return syms_; }
    const NodePtr& root() const { return root_; }

    friend Expr operator+(const Expr& a, const Expr& b) { return Expr(detail::mk_binary(ExprOp::Add, a.root_, b.root_), a.syms_); }
    friend Expr operator-(const Expr& a, const Expr& b) { return Expr(detail::mk_binary(ExprOp::Sub, a.root_, b.root_), a.syms_); }
    friend Expr operator*(const Expr& a, const Expr& b) { return Expr(detail::mk_binary(ExprOp::Mul, a.root_, b.root_), a.syms_); }
    friend Expr operator/(const Expr& a, const Expr& b) { return Expr(detail::mk_binary(ExprOp::Div, a.root_, b.root_), a.syms_); }
    friend Expr operator-(const Expr& a) { return Expr(detail::mk_unary(ExprOp::Neg, a.root_), a.syms_); }
    Expr operator*(double c) const { return *this * Expr::constant(c, syms_); }
    Expr operator+(double c) const { return *this + Expr::constant(c, syms_); }

private:
    Expr(NodePtr root, SymbolsPtr syms) : root_(std::move(root)), syms_(std::move(syms)) {}

    NodePtr root_;
    SymbolsPtr syms_;

    friend class Parser;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    Parser(const std::string& src, SymbolsPtr syms) : src_(src), syms_(std::move(syms)) {}

    Expr run() {
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ != src_.size()) throw ParseError("unexpected trailing input", pos_);
        return Expr(e, syms_);
    }

private:
    const std::string& src_;
    SymbolsPtr syms_;
    size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    bool peek(char c) {
        skip_ws();
        return pos_ < src_.size() && src_[pos_] == c;
    }
    bool accept(char c) {
        if (peek(c)) { ++pos_; return true; }
        return false;
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            if (accept('+')) lhs = detail::mk_binary(ExprOp::Add, lhs, parse_term());
            else if (accept('-')) lhs = detail::mk_binary(ExprOp::Sub, lhs, parse_term());
            else return lhs;
        }
    }
    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (accept('*')) lhs = detail::mk_binary(ExprOp::Mul, lhs, parse_unary());
            else if (accept('/')) lhs = detail::mk_binary(ExprOp::Div, lhs, parse_unary());
            else return lhs;
        }
    }
    NodePtr parse_unary() {
        if (accept('-')) return detail::mk_unary(ExprOp::Neg, parse_unary());
        return parse_power();
    }
    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (accept('^')) {
            double c = parse_exponent();
            if (peek('^')) throw ParseError("chained '^' needs parentheses", pos_);
            return detail::mk_binary(ExprOp::Pow, base, detail::mk_const(c));
        }
        return base;
    }
    // exponent of '^' must be a numeric literal (optionally signed or
    // parenthesized) so the derivative stays closed-form
    double parse_exponent() {
        skip_ws();
        bool neg = false;
        if (accept('(')) {
            double c = parse_exponent();
            if (!accept(')')) throw ParseError("expected ')' in exponent", pos_);
            return c;
        }
        if (accept('-')) neg = true;
        skip_ws();
        size_t at = pos_;
        double v = parse_number(at);
        return neg ? -v : v;
    }
    double parse_number(size_t at) {
        const char* begin = src_.c_str() + at;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) throw ParseError("expected a number", at);
        pos_ = at + static_cast<size_t>(end - begin);
        return v;
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
        char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            return detail::mk_const(parse_number(pos_));
        }
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                ++pos_;
            std::string id = src_.substr(start, pos_ - start);
            if (accept('(')) {
                ExprOp op;
                if (id == "sin") op = ExprOp::Sin;
                else if (id == "cos") op = ExprOp::Cos;
                else if (id == "exp") op = ExprOp::Exp;
                else if (id == "log") op = ExprOp::Log;
                else if (id == "sqrt") op = ExprOp::Sqrt;
                else throw ParseError("unknown function '" + id + "'", start);
                NodePtr arg = parse_expr();
                if (!accept(')')) throw ParseError("expected ')'", pos_);
                return detail::mk_unary(op, arg);
            }
            int slot = syms_->find(id);
            if (slot < 0) throw ParseError("undeclared identifier '" + id + "'", start);
            return detail::mk_var(slot);
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }
};

inline Expr Expr::parse(const std::string& src, SymbolsPtr syms) {
    return Parser(src, std::move(syms)).run();
}

// ---------------------------------------------------------------------------
// Flat postfix program. Instruction order matches the tree evaluation order,
// so compiled and tree evaluation produce bit-identical doubles.

class CompiledExpr {
public:
    CompiledExpr() = default;
    explicit CompiledExpr(const Expr& e) {
        emit(e.root());
        prog_.shrink_to_fit();
    }

    bool valid() const { return !prog_.empty(); }

    double operator()(std::span<const double> env) const {
        double stack[kMaxStack];
        int sp = 0;
        for (const Ins& ins : prog_) {
            switch (ins.op) {
                case ExprOp::Const: stack[sp++] = ins.value; break;
                case ExprOp::Var: stack[sp++] = env[ins.slot]; break;
                case ExprOp::Neg: stack[sp - 1] = -stack[sp - 1]; break;
                case ExprOp::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
                case ExprOp::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
                case ExprOp::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
                case ExprOp::Log:
                    if (stack[sp - 1] <= 0.0) throw EvalError("log of non-positive value");
                    stack[sp - 1] = std::log(stack[sp - 1]);
                    break;
                case ExprOp::Sqrt:
                    if (stack[sp - 1] < 0.0) throw EvalError("sqrt of negative value");
                    stack[sp - 1] = std::sqrt(stack[sp - 1]);
                    break;
                case ExprOp::Add: --sp; stack[sp - 1] += stack[sp]; break;
                case ExprOp::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
                case ExprOp::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
                case ExprOp::Div:
                    --sp;
                    if (stack[sp] == 0.0) throw EvalError("division by zero");
                    stack[sp - 1] /= stack[sp];
                    break;
                case ExprOp::Pow: stack[sp - 1] = pow_const(stack[sp - 1], ins.value); break;
            }
        }
        return stack[0];
    }

private:
    static constexpr int kMaxStack = 128;

    struct Ins {
        ExprOp op;
        double value = 0.0;
        int slot = -1;
    };
    std::vector<Ins> prog_;

    static double pow_const(double base, double c) {
        if (c == std::floor(c) && std::fabs(c) <= 64) {
            long k = static_cast<long>(c);
            if (k == 0) return 1.0;
            bool inv = k < 0;
            if (inv) k = -k;
            double r = 1.0, p = base;
            while (k) {
                if (k & 1) r *= p;
                p *= p;
                k >>= 1;
            }
            if (inv) {
                if (r == 0.0) throw EvalError("division by zero in negative power");
                return 1.0 / r;
            }
            return r;
        }
        if (base < 0.0) throw EvalError("non-integer power of negative base");
        return std::pow(base, c);
    }

    int emit(const NodePtr& n) {
        int depth;
        switch (n->op) {
            case ExprOp::Const: prog_.push_back({ExprOp::Const, n->value, -1}); return 1;
            case ExprOp::Var: prog_.push_back({ExprOp::Var, 0.0, n->slot}); return 1;
            case ExprOp::Pow:
                depth = emit(n->a);
                prog_.push_back({ExprOp::Pow, n->value, -1});
                return depth;
            case ExprOp::Neg: case ExprOp::Sin: case ExprOp::Cos:
            case ExprOp::Exp: case ExprOp::Log: case ExprOp::Sqrt:
                depth = emit(n->a);
                prog_.push_back({n->op, 0.0, -1});
                return depth;
            default: {
                int da = emit(n->a);
                int db = emit(n->b);
                prog_.push_back({n->op, 0.0, -1});
                depth = std::max(da, 1 + db);
                if (depth >= kMaxStack) throw EvalError("expression too deep to compile");
                return depth;
            }
        }
    }
};

}  // namespace polycyc
