#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "polycyc/expr.hpp"

using namespace polycyc;

namespace {

SymbolsPtr syms_with(std::initializer_list<const char*> params) {
    auto t = std::make_shared<SymbolTable>();
    for (const char* p : params) t->add(p);
    return t;
}

// Central difference with one Richardson refinement, step h = 1e-5.
double fd_derivative(const Expr& e, int slot, std::vector<double> env, double h = 1e-5) {
    auto d = [&](double step) {
        std::vector<double> lo = env, hi = env;
        hi[slot] += step;
        lo[slot] -= step;
        return (e.eval(hi) - e.eval(lo)) / (2 * step);
    };
    double d1 = d(h), d2 = d(h / 2);
    return (4.0 * d2 - d1) / 3.0;
}

// Random expression trees for the derivative and round-trip properties.
// log/sqrt arguments are kept positive by construction.
struct ExprGen {
    std::mt19937 rng;
    SymbolsPtr syms;

    explicit ExprGen(unsigned seed) : rng(seed), syms(syms_with({"mu1", "mu2"})) {}

    Expr gen(int depth) {
        std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 9);
        switch (pick(rng)) {
            case 0: return Expr::constant(uni(-3, 3), syms);
            case 1: return Expr::variable(var_slot(), syms);
            case 2: return gen(depth - 1) + gen(depth - 1);
            case 3: return gen(depth - 1) - gen(depth - 1);
            case 4: return gen(depth - 1) * gen(depth - 1);
            case 5: {  // denominator bounded away from zero
                Expr den = Expr::constant(uni(2, 4), syms) + sin_of(depth - 1);
                return gen(depth - 1) / den;
            }
            case 6: return sin_of(depth - 1);
            case 7: {
                Expr b = gen(depth - 1);
                return Expr::parse("(" + b.str() + ")^" + std::to_string(int_in(2, 4)), syms);
            }
            case 8: {  // log of a positive quantity
                Expr a = Expr::constant(uni(2, 5), syms) + sin_of(depth - 1);
                return Expr::parse("log(" + a.str() + ")", syms);
            }
            default: {
                Expr a = gen(depth - 1);
                return Expr::parse("exp(sin(" + a.str() + "))", syms);
            }
        }
    }

    Expr sin_of(int depth) {
        Expr a = gen(depth);
        return Expr::parse("sin(" + a.str() + ")", syms);
    }
    double uni(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    int int_in(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
    int var_slot() { return std::uniform_int_distribution<int>(0, syms->size() - 1)(rng); }
    std::vector<double> point() {
        std::vector<double> env(syms->size());
        for (auto& v : env) v = uni(-1.5, 1.5);
        return env;
    }
};

}  // namespace

TEST_CASE("parse basic forms") {
    auto syms = syms_with({"mu1"});
    CHECK(Expr::parse("x1 + 2*x2", syms).eval({{"x1", 3.0}, {"x2", 4.0}}) == 11.0);
    Expr e = Expr::parse("x1^2 - mu1*x2", syms);
    auto fv = e.free_vars();
    REQUIRE(fv.size() == 3);  // x1, x2, mu1
    CHECK(e.eval({{"x1", 2.0}, {"x2", 1.0}, {"mu1", 3.0}}) == 1.0);
}

TEST_CASE("syntax error carries byte offset") {
    auto syms = syms_with({});
    try {
        Expr::parse("sin(", syms);
        FAIL("expected ParseError");
    } catch (const ParseError& pe) {
        CHECK(pe.offset == 4);
    }
    CHECK_THROWS_AS(Expr::parse("x1 + ", syms), ParseError);
    CHECK_THROWS_AS(Expr::parse("(x1", syms), ParseError);
    CHECK_THROWS_AS(Expr::parse("x1 x2", syms), ParseError);
}

TEST_CASE("undeclared identifier rejected") {
    auto syms = syms_with({"mu1"});
    try {
        Expr::parse("x1 + nu*x2", syms);
        FAIL("expected ParseError");
    } catch (const ParseError& pe) {
        CHECK(pe.offset == 5);
    }
    CHECK_THROWS_AS(Expr::parse("abs(x1)", syms), ParseError);
}

TEST_CASE("eval examples and domain errors") {
    auto syms = syms_with({});
    CHECK(Expr::parse("x1*x2", syms).eval({{"x1", 3.0}, {"x2", 4.0}}) == 12.0);
    CHECK(Expr::parse("x1^3", syms).eval({{"x1", 2.0}, {"x2", 0.0}}) == 8.0);
    CHECK_THROWS_AS(Expr::parse("log(x1)", syms).eval({{"x1", 0.0}, {"x2", 0.0}}), EvalError);
    CHECK_THROWS_AS(Expr::parse("x1/x2", syms).eval({{"x1", 1.0}, {"x2", 0.0}}), EvalError);
    CHECK_THROWS_AS(Expr::parse("sqrt(x1)", syms).eval({{"x1", -1.0}, {"x2", 0.0}}), EvalError);
    // unbound variable
    CHECK_THROWS_AS(Expr::parse("x1+x2", syms).eval({{"x1", 1.0}}), EvalError);
}

TEST_CASE("diff examples") {
    auto syms = syms_with({"mu1"});
    CHECK(Expr::parse("x1*x2", syms).diff("x1").str() == "x2");
    double d = Expr::parse("sin(x1)", syms).diff("x1").eval({{"x1", 0.0}});
    CHECK(d == 1.0);
    Expr e = Expr::parse("x1^2 - mu1*x2", syms).diff("mu1");
    CHECK(e.eval({{"x1", 5.0}, {"x2", 7.0}, {"mu1", 0.0}}) == -7.0);
}

TEST_CASE("pow with constant exponent only") {
    auto syms = syms_with({});
    CHECK_THROWS_AS(Expr::parse("x1^x2", syms), ParseError);
    CHECK(Expr::parse("x1^-2", syms).eval({{"x1", 2.0}}) == 0.25);
    CHECK(Expr::parse("x1^(-2)", syms).eval({{"x1", 2.0}}) == 0.25);
    CHECK(Expr::parse("x1^0.5", syms).eval({{"x1", 9.0}}) == 3.0);
    // pow binds tighter than unary minus
    CHECK(Expr::parse("-x1^2", syms).eval({{"x1", 3.0}}) == -9.0);
}

TEST_CASE("symbolic derivative matches finite differences, 100 random cases") {
    ExprGen gen(20240901);
    int done = 0;
    while (done < 100) {
        Expr e = gen.gen(4);
        int slot = gen.var_slot();
        auto env = gen.point();
        Expr de = e.diff(slot);
        double sym, fd;
        try {
            sym = de.eval(env);
            fd = fd_derivative(e, slot, env);
        } catch (const EvalError&) {
            continue;  // resample near-singular draws
        }
        if (!std::isfinite(sym) || !std::isfinite(fd) || std::fabs(fd) > 1e6) continue;
        double rel = std::fabs(sym - fd) / (1.0 + std::fabs(fd));
        INFO("expr: " << e.str() << "  d/d" << gen.syms->name(slot));
        CHECK(rel <= 1e-6);
        ++done;
    }
}

TEST_CASE("mixed partials commute") {
    ExprGen gen(77);
    for (int k = 0; k < 40; ++k) {
        Expr e = gen.gen(3);
        Expr dab = e.diff(0).diff(1);
        Expr dba = e.diff(1).diff(0);
        for (int j = 0; j < 3; ++j) {
            auto env = gen.point();
            double a, b;
            try {
                a = dab.eval(env);
                b = dba.eval(env);
            } catch (const EvalError&) {
                continue;
            }
            if (!std::isfinite(a) || !std::isfinite(b)) continue;
            CHECK(std::fabs(a - b) <= 1e-12 * (1.0 + std::max(std::fabs(a), std::fabs(b))));
        }
    }
}

TEST_CASE("print/parse round-trip evaluates identically") {
    ExprGen gen(12345);
    for (int k = 0; k < 60; ++k) {
        Expr e = gen.gen(4);
        Expr back = Expr::parse(e.str(), gen.syms);
        for (int j = 0; j < 4; ++j) {
            auto env = gen.point();
            double a, b;
            try {
                a = e.eval(env);
                b = back.eval(env);
            } catch (const EvalError&) {
                continue;
            }
            CHECK(a == b);
        }
    }
}

TEST_CASE("compiled evaluation is bit-identical to tree evaluation") {
    ExprGen gen(999);
    for (int k = 0; k < 60; ++k) {
        Expr e = gen.gen(4);
        CompiledExpr c(e);
        for (int j = 0; j < 4; ++j) {
            auto env = gen.point();
            double a, b;
            try {
                a = e.eval(env);
                b = c(env);
            } catch (const EvalError&) {
                continue;
            }
            CHECK(a == b);
        }
    }
}

TEST_CASE("evaluation is deterministic") {
    auto syms = syms_with({"mu1"});
    Expr e = Expr::parse("sin(x1*x2) + exp(x1 - mu1)/(2 + cos(x2))", syms);
    std::vector<double> env{0.3, -1.2, 0.14};
    double first = e.eval(env);
    for (int i = 0; i < 10; ++i) CHECK(e.eval(env) == first);
}
