#include <catch2/catch_amalgamated.hpp>

#include "polycyc/flow.hpp"
#include "polycyc/saddle.hpp"

using namespace polycyc;

namespace {

PiecewiseSystem make_smooth(const std::string& P, const std::string& Q) {
    PiecewiseSystem sys;
    SymbolsPtr syms = sys.syms;
    sys.surfaces.emplace_back("far", Expr::parse("x2 + 10", syms));
    sys.regions.emplace_back("up", std::vector<int>{1}, Expr::parse(P, syms), Expr::parse(Q, syms));
    sys.regions.emplace_back("down", std::vector<int>{-1}, Expr::parse(P, syms),
                             Expr::parse(Q, syms));
    sys.validate();
    return sys;
}

}  // namespace

TEST_CASE("find_equilibrium basics") {
    PiecewiseSystem a = make_smooth("x1", "-2*x2");
    Vec2 p = find_equilibrium(a, 0, {0.1, -0.1}, 1.0);
    CHECK(p.norm() < 1e-12);

    PiecewiseSystem b = make_smooth("x1 - 1", "x2 + 2");
    Vec2 q = find_equilibrium(b, 0, {0, 0}, 5.0);
    CHECK((q - Vec2{1, -2}).norm() < 1e-11);

    PiecewiseSystem c = make_smooth("1", "x1");
    CHECK_THROWS_AS(find_equilibrium(c, 0, {0.3, 0.2}, 10.0), SaddleError);
}

TEST_CASE("classify_equilibrium: saddle, semi-hyperbolic, other") {
    PiecewiseSystem a = make_smooth("x1", "-2*x2");
    auto ca = classify_equilibrium(a, 0, {0, 0});
    REQUIRE(std::holds_alternative<SaddleData>(ca));
    auto sd = std::get<SaddleData>(ca);
    CHECK(sd.lambda == Catch::Approx(1.0));
    CHECK(sd.nu == Catch::Approx(-2.0));
    CHECK(sd.ratio() == Catch::Approx(2.0));
    CHECK(std::fabs(sd.e_u.x) == Catch::Approx(1.0));
    CHECK(std::fabs(sd.e_s.y) == Catch::Approx(1.0));

    PiecewiseSystem b = make_smooth("x1^2", "-x2");
    auto cb = classify_equilibrium(b, 0, {0, 0});
    REQUIRE(std::holds_alternative<SemiHyperbolicData>(cb));
    auto sh = std::get<SemiHyperbolicData>(cb);
    CHECK(sh.kappa == Catch::Approx(-1.0));
    CHECK(sh.hyperbolic_sector);  // center dynamics x' = x^2
    CHECK(sh.center_quad == Catch::Approx(1.0));

    PiecewiseSystem c = make_smooth("-x2", "x1");  // rotation generator
    auto cc = classify_equilibrium(c, 0, {0, 0});
    CHECK(std::holds_alternative<OtherEquilibrium>(cc));

    PiecewiseSystem d = make_smooth("x1", "x2");  // node, rejected as vertex
    CHECK(std::holds_alternative<OtherEquilibrium>(classify_equilibrium(d, 0, {0, 0})));
}

TEST_CASE("ratio invariant under positive time rescaling") {
    for (double c : {1.0, 2.5, 17.0}) {
        std::string cp = std::to_string(c);
        PiecewiseSystem s = make_smooth(cp + "*(x1 + 0.3*x2)", cp + "*(0.2*x1 - 1.7*x2)");
        auto cls = classify_equilibrium(s, 0, {0, 0});
        REQUIRE(std::holds_alternative<SaddleData>(cls));
        auto sd = std::get<SaddleData>(cls);
        CHECK(sd.ratio() == Catch::Approx(std::get<SaddleData>(
                classify_equilibrium(make_smooth("x1 + 0.3*x2", "0.2*x1 - 1.7*x2"), 0, {0, 0}))
                .ratio()).epsilon(1e-12));
    }
}

TEST_CASE("launch_separatrix: linear saddle has zero correction") {
    PiecewiseSystem a = make_smooth("x1", "-2*x2");
    auto sd = std::get<SaddleData>(classify_equilibrium(a, 0, {0, 0}));
    auto seed = launch_separatrix(a, sd, Branch::Unstable, +1, 1e-5);
    CHECK(std::fabs(seed.point.y) < 1e-15);
    CHECK(std::fabs(std::fabs(seed.point.x) - 1e-5) < 1e-15);
    CHECK_THROWS_AS(launch_separatrix(a, sd, Branch::Unstable, +1, 1e-3), SaddleError);
    CHECK_THROWS_AS(launch_separatrix(a, sd, Branch::Unstable, +1, 1e-9), SaddleError);
}

TEST_CASE("launch_separatrix: quadratic manifold correction") {
    // X = (x1, -x2 + x1^2): unstable manifold x2 = x1^2/3
    PiecewiseSystem a = make_smooth("x1", "-x2 + x1^2");
    auto sd = std::get<SaddleData>(classify_equilibrium(a, 0, {0, 0}));

    // brute-force series-matching oracle: scan candidate coefficients c in
    // x2 = c*x1^2 and keep the one minimizing the invariance residual
    // |dx2/dx1 * P - Q| at a probe point
    double best_c = 0, best_res = 1e100;
    double probe = 1e-3;
    for (int i = -200; i <= 200; ++i) {
        double c = i / 100.0;
        double x1 = probe, x2 = c * x1 * x1;
        double res = std::fabs(2 * c * x1 * x1 - (-x2 + x1 * x1));
        if (res < best_res) {
            best_res = res;
            best_c = c;
        }
    }
    CHECK(best_c == Catch::Approx(1.0 / 3).margin(0.01));

    double delta = 1e-4;
    auto seed = launch_separatrix(a, sd, Branch::Unstable, +1, delta);
    CHECK(seed.point.x == Catch::Approx(delta).epsilon(1e-10));
    CHECK(seed.point.y == Catch::Approx(delta * delta / 3).margin(1e-14));

    // stable branch seeds on the x1 = 0 axis
    auto sseed = launch_separatrix(a, sd, Branch::Stable, +1, delta);
    CHECK(std::fabs(sseed.point.x) < 1e-14);
}

TEST_CASE("separatrix convergence: halving delta improves section arrival at order >= 1.9") {
    // weak stable contraction (r = 0.1) keeps the seed error visible at the
    // section: uncorrected seeds arrive with error ~ delta^(2+r)
    PiecewiseSystem a = make_smooth("x1", "-0.1*x2 + x1^2");
    auto sd = std::get<SaddleData>(classify_equilibrium(a, 0, {0, 0}));
    Section target{{1.0, 1.0 / 2.1}, {0, 1}, 0.5};

    FlowOptions o;
    o.rel_tol = 1e-12;
    o.abs_tol = 1e-14;
    Flow flow(a, o);

    auto arrival = [&](double delta, bool correction) {
        auto seed = launch_separatrix(a, sd, Branch::Unstable, +1, delta);
        Vec2 x0 = correction ? seed.point : sd.p + sd.e_u * delta;
        StopSection stop{target, 0};
        FlowResult r = flow.run(x0, +1, 100.0, std::span<const StopSection>(&stop, 1));
        REQUIRE(r.reason == StopReason::SectionHit);
        return target.offset(r.x_end);
    };

    // uncorrected seeds: error O(delta^2) at launch, so the arrival offset
    // differences shrink at least ~4x per halving
    double exact = arrival(1e-4, true);  // corrected seed, error O(delta^3)
    double e1 = std::fabs(arrival(8e-5, false) - exact);
    double e2 = std::fabs(arrival(4e-5, false) - exact);
    double e3 = std::fabs(arrival(2e-5, false) - exact);
    double order1 = std::log2(e1 / e2), order2 = std::log2(e2 / e3);
    CHECK(order1 >= 1.9);
    CHECK(order2 >= 1.9);
}
