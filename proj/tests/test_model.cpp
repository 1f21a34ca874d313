#include <catch2/catch_amalgamated.hpp>

#include "polycyc/lie.hpp"
#include "polycyc/model.hpp"

using namespace polycyc;

namespace {

// One horizontal switching line h = x2 with the given fields above / below.
PiecewiseSystem make_split(const std::string& up_p, const std::string& up_q,
                           const std::string& low_p, const std::string& low_q,
                           const std::string& h = "x2") {
    PiecewiseSystem sys;
    auto syms = std::make_shared<SymbolTable>(*sys.syms);
    sys.syms = syms;
    SymbolsPtr csyms = sys.syms;
    sys.surfaces.emplace_back("sigma", Expr::parse(h, csyms));
    sys.regions.emplace_back("upper", std::vector<int>{1}, Expr::parse(up_p, csyms),
                             Expr::parse(up_q, csyms));
    sys.regions.emplace_back("lower", std::vector<int>{-1}, Expr::parse(low_p, csyms),
                             Expr::parse(low_q, csyms));
    sys.validate();
    return sys;
}

}  // namespace

TEST_CASE("locate: region, incidence, corner") {
    PiecewiseSystem sys = make_split("1", "1", "1", "1");
    Location a = sys.locate({0, 1});
    CHECK(a.off_surface());
    CHECK(sys.regions[a.region].name == "upper");

    Location b = sys.locate({3, 0});
    REQUIRE(b.on_surfaces.size() == 1);
    CHECK(b.on_surfaces[0] == 0);
    CHECK_FALSE(b.corner());

    // two surfaces h1=x2, h2=x1: four quadrant regions
    PiecewiseSystem two;
    SymbolsPtr syms = two.syms;
    two.surfaces.emplace_back("s1", Expr::parse("x2", syms));
    two.surfaces.emplace_back("s2", Expr::parse("x1", syms));
    const char* names[4] = {"pp", "pm", "mp", "mm"};
    std::vector<std::vector<int>> sgs{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    for (int i = 0; i < 4; ++i)
        two.regions.emplace_back(names[i], sgs[i], Expr::parse("1", syms), Expr::parse("1", syms));
    two.validate();
    Location c = two.locate({0, 0});
    CHECK(c.corner());
    CHECK(c.on_surfaces.size() == 2);
}

TEST_CASE("classify_surface_point: crossing, sliding, tangential") {
    PiecewiseSystem crossing = make_split("1", "1", "1", "1");
    auto c = crossing.classify_surface_point(0, {0, 0});
    CHECK(c.kind == SurfacePointClass::Crossing);
    CHECK(c.product() == 1.0);

    PiecewiseSystem sliding = make_split("1", "1", "1", "-1");
    auto s = sliding.classify_surface_point(0, {0, 0});
    CHECK(s.kind == SurfacePointClass::SlidingOrEscaping);
    CHECK(s.product() == -1.0);

    PiecewiseSystem tang = make_split("0", "1", "1", "x1");
    auto t = tang.classify_surface_point(0, {0, 0});
    CHECK(t.kind == SurfacePointClass::Tangential);
    CHECK(tang.regions[t.tangential_region].name == "lower");
}

TEST_CASE("double tangency reported") {
    PiecewiseSystem sys = make_split("1", "x1", "1", "2*x1");
    auto c = sys.classify_surface_point(0, {0, 0});
    CHECK(c.kind == SurfacePointClass::DoubleTangency);
}

TEST_CASE("classification invariant under h -> c*h, c>0") {
    for (double c : {1.0, 3.5, 0.02}) {
        std::string h = std::to_string(c) + "*x2";
        PiecewiseSystem tang = make_split("0", "1", "1", "x1", h);
        auto t = tang.classify_surface_point(0, {0, 0});
        CHECK(t.kind == SurfacePointClass::Tangential);
        PiecewiseSystem cross = make_split("1", "1", "1", "1", h);
        CHECK(cross.classify_surface_point(0, {0, 0}).kind == SurfacePointClass::Crossing);
        PiecewiseSystem slide = make_split("1", "1", "1", "-1", h);
        CHECK(slide.classify_surface_point(0, {0, 0}).kind ==
              SurfacePointClass::SlidingOrEscaping);
    }
}

TEST_CASE("locate consistent with classify at crossing points") {
    PiecewiseSystem sys = make_split("1", "-1", "1", "-1");
    auto c = sys.classify_surface_point(0, {2, 0});
    REQUIRE(c.kind == SurfacePointClass::Crossing);
    // the two adjacent regions exist, are distinct, and their Lie derivatives
    // share a sign (here both negative: downward crossing)
    CHECK(c.region_a != c.region_b);
    CHECK(c.lie_a < 0);
    CHECK(c.lie_b < 0);
    Location above = sys.locate({2, 0.5}), below = sys.locate({2, -0.5});
    CHECK(((above.region == c.region_a && below.region == c.region_b) ||
           (above.region == c.region_b && below.region == c.region_a)));
}

TEST_CASE("region validation catches structural errors") {
    PiecewiseSystem sys;
    SymbolsPtr syms = sys.syms;
    sys.surfaces.emplace_back("s", Expr::parse("x2", syms));
    sys.regions.emplace_back("only", std::vector<int>{1}, Expr::parse("1", syms),
                             Expr::parse("0", syms));
    CHECK_THROWS_AS(sys.validate(), ModelError);
    sys.regions.emplace_back("dup", std::vector<int>{1}, Expr::parse("1", syms),
                             Expr::parse("0", syms));
    CHECK_THROWS_AS(sys.validate(), ModelError);
}

TEST_CASE("parameters flow into fields") {
    PiecewiseSystem sys;
    sys.add_param("mu1", 0.25);
    SymbolsPtr syms = sys.syms;
    sys.surfaces.emplace_back("s", Expr::parse("x2", syms));
    sys.regions.emplace_back("up", std::vector<int>{1}, Expr::parse("mu1*x1", syms),
                             Expr::parse("1", syms));
    sys.regions.emplace_back("down", std::vector<int>{-1}, Expr::parse("1", syms),
                             Expr::parse("1", syms));
    sys.validate();
    auto env = sys.env_at({2, 1});
    CHECK(sys.regions[0].field(env).x == 0.5);
    CHECK(sys.regions[0].param_deriv(sys.syms->find("mu1"), env).x == 2.0);
    sys.set_param("mu1", -1.0);
    env = sys.env_at({2, 1});
    CHECK(sys.regions[0].field(env).x == -2.0);
}

TEST_CASE("bump terms vanish outside their support") {
    PiecewiseSystem sys;
    int slot = sys.add_param("mu1", 0.5);
    SymbolsPtr syms = sys.syms;
    sys.surfaces.emplace_back("s", Expr::parse("x2", syms));
    sys.regions.emplace_back("up", std::vector<int>{1}, Expr::parse("1", syms),
                             Expr::parse("0", syms));
    sys.regions.emplace_back("down", std::vector<int>{-1}, Expr::parse("1", syms),
                             Expr::parse("0", syms));
    BumpProfile prof{{0.0, 2.0}, 0.1, 0.3};
    sys.regions[0].add_bump(BumpTerm(prof, slot, Expr::parse("1", syms), Expr::parse("2", syms)));

    auto outside = sys.env_at({1.0, 2.0});
    CHECK(sys.regions[0].field(outside).x == 1.0);
    CHECK(sys.regions[0].field(outside).y == 0.0);

    auto plateau = sys.env_at({0.0, 2.05});
    CHECK(sys.regions[0].field(plateau).x == 1.5);
    CHECK(sys.regions[0].field(plateau).y == 1.0);
    CHECK(sys.regions[0].param_deriv(slot, plateau).y == 2.0);

    // profile is C^1 across the support boundary: numeric gradient is small
    auto near_edge = sys.env_at({0.0, 2.0 + 0.2999});
    double k_edge = sys.regions[0].field(near_edge).x - 1.0;
    CHECK(std::fabs(k_edge) < 1e-6);
}
