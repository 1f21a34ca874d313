#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "polycyc/lie.hpp"

using namespace polycyc;

namespace {

SymbolsPtr base_syms() { return std::make_shared<SymbolTable>(); }

PiecewiseSystem split(const std::string& up_p, const std::string& up_q,
                      const std::string& low_p, const std::string& low_q) {
    PiecewiseSystem sys;
    SymbolsPtr syms = sys.syms;
    sys.surfaces.emplace_back("sigma", Expr::parse("x2", syms));
    sys.regions.emplace_back("upper", std::vector<int>{1}, Expr::parse(up_p, syms),
                             Expr::parse(up_q, syms));
    sys.regions.emplace_back("lower", std::vector<int>{-1}, Expr::parse(low_p, syms),
                             Expr::parse(low_q, syms));
    sys.validate();
    return sys;
}

}  // namespace

TEST_CASE("iterated Lie derivatives") {
    auto syms = base_syms();
    Expr h = Expr::parse("x2", syms);
    std::vector<double> origin{0.0, 0.0};

    Expr P = Expr::parse("1", syms), Q = Expr::parse("x1", syms);
    CHECK(lie_derivative(P, Q, h, 1, origin) == 0.0);
    CHECK(lie_derivative(P, Q, h, 2, origin) == 1.0);

    Expr Q2 = Expr::parse("x1^2", syms);
    CHECK(lie_derivative(P, Q2, h, 1, origin) == 0.0);
    CHECK(lie_derivative(P, Q2, h, 2, origin) == 0.0);
    CHECK(lie_derivative(P, Q2, h, 3, origin) == 2.0);

    CHECK_THROWS_AS(lie_derivative(P, Q, h, 9, origin), LieError);
    CHECK_THROWS_AS(lie_derivative(P, Q, h, 0, origin), LieError);
}

TEST_CASE("contact orders for the fold/cusp table") {
    auto syms = base_syms();
    Expr h = Expr::parse("x2", syms);
    std::vector<double> origin{0.0, 0.0};
    double tol = 1e-9;

    auto c1 = contact_order(Expr::parse("1", syms), Expr::parse("x1", syms), h, origin, tol, 8);
    CHECK(c1.order == 2);
    CHECK(c1.value == 1.0);

    auto c2 = contact_order(Expr::parse("0", syms), Expr::parse("1", syms), h, origin, tol, 8);
    CHECK(c2.order == 1);
    CHECK(c2.value == 1.0);

    auto c3 = contact_order(Expr::parse("1", syms), Expr::parse("x1^3", syms), h, origin, tol, 8);
    CHECK(c3.order == 4);
    CHECK(c3.value == 6.0);

    auto cusp = contact_order(Expr::parse("1", syms), Expr::parse("x1^2", syms), h, origin, tol, 8);
    CHECK(cusp.order == 3);
    CHECK(cusp.value == 2.0);

    CHECK_THROWS_AS(contact_order(Expr::parse("1", syms), Expr::parse("0", syms), h, origin, tol, 8),
                    FlatContactError);
}

TEST_CASE("regression: visibility sign of the shipped fold") {
    // h=x2, lower-region field X=(1,x1): X^2 h = 1 > 0, so the grazing orbit
    // curves upward (invisible from below / visible from above)
    PiecewiseSystem sys = split("0", "1", "1", "x1");
    auto c = contact_order(sys, 1, 0, {0, 0});
    CHECK(c.order == 2);
    CHECK(c.value == 1.0);
}

TEST_CASE("contact order invariant under affine changes and h-rescaling") {
    // base: fold X=(1,x1) against h=x2 at the origin (order 2), and the
    // degenerate X=(1,x1^2) (order 3); transform by y = A x + b with
    // det A > 0 applied consistently to field and surface.
    auto syms = base_syms();
    std::mt19937 rng(4242);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        double a11 = uni(rng), a12 = uni(rng), a21 = uni(rng), a22 = uni(rng);
        if (std::fabs(a11 * a22 - a12 * a21) < 0.1) { --trial; continue; }
        if (a11 * a22 - a12 * a21 < 0) std::swap(a11, a12), std::swap(a21, a22);
        double b1 = uni(rng), b2 = uni(rng);
        Mat2 A{a11, a12, a21, a22};
        Mat2 Ainv = *A.inverse();
        // u = [A^{-1}(y-b)]_1, v = [A^{-1}(y-b)]_2 as expressions in (x1,x2)
        Expr y1 = Expr::variable(0, syms), y2 = Expr::variable(1, syms);
        Expr u = (y1 + (-b1)) * Expr::constant(Ainv.a, syms) +
                 (y2 + (-b2)) * Expr::constant(Ainv.b, syms);
        Expr v = (y1 + (-b1)) * Expr::constant(Ainv.c, syms) +
                 (y2 + (-b2)) * Expr::constant(Ainv.d, syms);
        double c = std::exp(uni(rng));  // positive h rescaling folded in

        for (int which = 0; which < 2; ++which) {
            // X(u,v) = (1, u) or (1, u^2) pushed forward by A
            Expr f2 = which == 0 ? u : u * u;
            Expr P = Expr::constant(a11, syms) + Expr::constant(a12, syms) * f2;
            Expr Q = Expr::constant(a21, syms) + Expr::constant(a22, syms) * f2;
            Expr h = v * Expr::constant(c, syms);
            Vec2 p{b1, b2};  // image of the origin
            std::vector<double> env{p.x, p.y};
            auto res = contact_order(P, Q, h, env, 1e-9, 8);
            CHECK(res.order == (which == 0 ? 2 : 3));
        }
    }
}

TEST_CASE("tangency profile: opposite sides, swap, same side") {
    // lower field fold X=(1,x1), upper transversal (0,1)
    PiecewiseSystem sys = split("0", "1", "1", "x1");
    std::vector<Vec2> above{{-1e-4, 1e-4}, {-2e-4, 2e-4}};
    std::vector<Vec2> below{{1e-4, -1e-8}, {2e-4, -4e-8}};

    auto prof = tangency_profile(sys, 0, {0, 0}, above, below);
    CHECK(prof.n_s == 1);
    CHECK(prof.n_u == 2);
    CHECK_FALSE(prof.same_side);
    CHECK(prof.ratio() == 2.0);
    CHECK(sys.regions[prof.stable_region].name == "upper");
    CHECK(sys.regions[prof.unstable_region].name == "lower");

    // swapping arrival/departure swaps the orders
    auto swapped = tangency_profile(sys, 0, {0, 0}, below, above);
    CHECK(swapped.n_s == 2);
    CHECK(swapped.n_u == 1);

    // visible-from-above fold traversed with both arcs in the upper region
    PiecewiseSystem same = split("1", "x1", "0", "1");
    std::vector<Vec2> graze_in{{-1e-4, 5e-9}, {-2e-4, 2e-8}};
    std::vector<Vec2> graze_out{{1e-4, 5e-9}, {2e-4, 2e-8}};
    auto sp = tangency_profile(same, 0, {0, 0}, graze_in, graze_out);
    CHECK(sp.same_side);
    CHECK(sp.n_s == 2);
    CHECK(sp.n_u == 2);
    CHECK(sp.ratio() == 1.0);
}

TEST_CASE("tangency profile rejects ambiguous samples") {
    PiecewiseSystem sys = split("0", "1", "1", "x1");
    std::vector<Vec2> on_sigma{{1e-4, 0.0}, {2e-4, 0.0}};
    std::vector<Vec2> ok{{1e-4, 1e-4}};
    CHECK_THROWS_AS(tangency_profile(sys, 0, {0, 0}, on_sigma, ok), LieError);
}
