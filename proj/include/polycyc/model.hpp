#pragma once

// The non-smooth system Z = (X_1,...,X_M): switching surfaces h_j = 0,
// sign-vector regions carrying smooth fields, point location and the
// crossing / sliding / tangential classification on the surfaces.

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "polycyc/expr.hpp"
#include "polycyc/geom.hpp"

namespace polycyc {

struct Tolerances {
    double tol_loc = 1e-10;    // |h| below this counts as on-surface
    double tol_tang = 1e-9;    // |Lie derivative| below this counts as tangent
    double tol_eig = 1e-8;     // eigenvalue magnitude below this counts as zero
    double rel_tol = 1e-10;    // integrator relative tolerance
    double abs_tol = 1e-12;    // integrator absolute tolerance
    double tol_evt = 1e-12;    // event localization |h| target (times state scale)
    double tol_close = 1e-10;  // polycycle connection gap acceptance
    double tol_p = 1e-6;       // |p(Gamma)-1| inconclusive band
    double s_min = 1e-7;       // guard band excluding the polycycle fixed point
    double blowup = 1e6;       // state norm abort
    double root_tol = 1e-11;   // limit-cycle fixed point refinement
    double sep_delta = 1e-4;   // separatrix seed offset
    int k_max = 8;             // Lie derivative order cap
    double tmax = 1e4;         // default integration horizon
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Expression with a compiled twin for hot-loop evaluation.
struct ScalarFn {
    Expr e;
    CompiledExpr c;

    ScalarFn() = default;
    explicit ScalarFn(Expr expr) : e(std::move(expr)), c(e) {}
    double operator()(std::span<const double> env) const { return c(env); }
    bool valid() const { return e.valid(); }
};

struct SwitchingSurface {
    std::string name;
    ScalarFn h, hx1, hx2;

    SwitchingSurface() = default;
    SwitchingSurface(std::string nm, Expr expr)
        : name(std::move(nm)), h(expr), hx1(expr.diff(0)), hx2(expr.diff(1)) {}

    double value(std::span<const double> env) const { return h(env); }
    Vec2 gradient(std::span<const double> env) const { return {hx1(env), hx2(env)}; }
};

// C^3 radial bump: 1 on |x-c| <= r1, 0 outside |x-c| >= r2, order-7
// polynomial smoothstep in between, applied to the squared radius so the
// profile is polynomial in x.
struct BumpProfile {
    Vec2 center;
    double r1 = 0, r2 = 0;

    static double s3(double t) { return t * t * t * t * (35 + t * (-84 + t * (70 - 20 * t))); }
    static double s3d(double t) { double u = t * (1 - t); return 140 * u * u * u; }
    static double s3dd(double t) { double u = t * (1 - t); return 420 * u * u * (1 - 2 * t); }

    double u_of(const Vec2& x) const {
        double rho2 = (x - center).norm2();
        return (r2 * r2 - rho2) / (r2 * r2 - r1 * r1);
    }
    double value(const Vec2& x) const {
        double u = u_of(x);
        if (u <= 0) return 0;
        if (u >= 1) return 1;
        return s3(u);
    }
    Vec2 grad(const Vec2& x) const {
        double u = u_of(x);
        if (u <= 0 || u >= 1) return {0, 0};
        double c = -2.0 / (r2 * r2 - r1 * r1);
        return (x - center) * (s3d(u) * c);
    }
    // symmetric second derivative matrix
    Mat2 hess(const Vec2& x) const {
        double u = u_of(x);
        if (u <= 0 || u >= 1) return {0, 0, 0, 0};
        double c = -2.0 / (r2 * r2 - r1 * r1);
        Vec2 du = (x - center) * c;
        double sd = s3d(u), sdd = s3dd(u);
        return Mat2{sdd * du.x * du.x + sd * c, sdd * du.x * du.y,
                    sdd * du.x * du.y, sdd * du.y * du.y + sd * c};
    }
    bool inside_support(const Vec2& x) const { return (x - center).norm2() < r2 * r2; }
};

// One term mu_i * k_i(x) * g_i(x) of a localized perturbation.
struct BumpTerm {
    BumpProfile k;
    int param_slot = -1;
    ScalarFn g1, g2;
    ScalarFn g1x1, g1x2, g2x1, g2x2;

    BumpTerm() = default;
    BumpTerm(BumpProfile prof, int slot, Expr g1e, Expr g2e)
        : k(prof), param_slot(slot),
          g1(g1e), g2(g2e),
          g1x1(g1e.diff(0)), g1x2(g1e.diff(1)),
          g2x1(g2e.diff(0)), g2x2(g2e.diff(1)) {}
};

class Region {
public:
    std::string name;
    std::vector<int> signs;  // one of {-1,+1} per surface
    std::vector<BumpTerm> bumps;

    Region() = default;
    Region(std::string nm, std::vector<int> sg, Expr P, Expr Q)
        : name(std::move(nm)), signs(std::move(sg)), Pe_(P), Qe_(Q) {
        bind();
    }

    const Expr& P() const { return Pe_; }
    const Expr& Q() const { return Qe_; }

    // field value; env = [x1, x2, params...]
    Vec2 field(std::span<const double> env) const {
        Vec2 v{Pc_(env), Qc_(env)};
        if (!bumps.empty()) {
            Vec2 x{env[0], env[1]};
            for (const BumpTerm& b : bumps) {
                if (!b.k.inside_support(x)) continue;
                double amp = env[b.param_slot] * b.k.value(x);
                if (amp != 0.0) v += Vec2{b.g1(env), b.g2(env)} * amp;
            }
        }
        return v;
    }

    Mat2 jacobian(std::span<const double> env) const {
        Mat2 J{Px1_(env), Px2_(env), Qx1_(env), Qx2_(env)};
        if (!bumps.empty()) {
            Vec2 x{env[0], env[1]};
            for (const BumpTerm& b : bumps) {
                if (!b.k.inside_support(x)) continue;
                double mu = env[b.param_slot];
                if (mu == 0.0) continue;
                double kv = b.k.value(x);
                Vec2 dk = b.k.grad(x);
                Vec2 g{b.g1(env), b.g2(env)};
                Mat2 Dg{b.g1x1(env), b.g1x2(env), b.g2x1(env), b.g2x2(env)};
                J = J + Mat2{g.x * dk.x, g.x * dk.y, g.y * dk.x, g.y * dk.y} * mu + Dg * (mu * kv);
            }
        }
        return J;
    }

    // dX/dmu for a parameter slot (>= 2)
    Vec2 param_deriv(int slot, std::span<const double> env) const {
        Vec2 v{0, 0};
        auto it = pderiv_.find(slot);
        if (it != pderiv_.end()) v = Vec2{it->second.first(env), it->second.second(env)};
        if (!bumps.empty()) {
            Vec2 x{env[0], env[1]};
            for (const BumpTerm& b : bumps) {
                if (b.param_slot != slot || !b.k.inside_support(x)) continue;
                v += Vec2{b.g1(env), b.g2(env)} * b.k.value(x);
            }
        }
        return v;
    }

    // second derivatives of (P,Q): symmetric matrices of d2P, d2Q
    void second_derivs(std::span<const double> env, Mat2& d2P, Mat2& d2Q) const {
        d2P = Mat2{Pxx_(env), Pxy_(env), Pxy_(env), Pyy_(env)};
        d2Q = Mat2{Qxx_(env), Qxy_(env), Qxy_(env), Qyy_(env)};
        if (!bumps.empty()) {
            Vec2 x{env[0], env[1]};
            for (size_t i = 0; i < bumps.size(); ++i) {
                const BumpTerm& b = bumps[i];
                if (!b.k.inside_support(x)) continue;
                double mu = env[b.param_slot];
                if (mu == 0.0) continue;
                double kv = b.k.value(x);
                Vec2 dk = b.k.grad(x);
                Mat2 hk = b.k.hess(x);
                Vec2 g{b.g1(env), b.g2(env)};
                Vec2 dg1{b.g1x1(env), b.g1x2(env)}, dg2{b.g2x1(env), b.g2x2(env)};
                // d2(k g) = g hess(k) + dk dg^T + dg dk^T + k d2g
                auto outer_sym = [](const Vec2& a, const Vec2& bv) {
                    return Mat2{2 * a.x * bv.x, a.x * bv.y + a.y * bv.x,
                                a.x * bv.y + a.y * bv.x, 2 * a.y * bv.y};
                };
                const BumpSecond& s = bump_d2_[i];
                Mat2 d2g1{s.g1xx(env), s.g1xy(env), s.g1xy(env), s.g1yy(env)};
                Mat2 d2g2{s.g2xx(env), s.g2xy(env), s.g2xy(env), s.g2yy(env)};
                d2P = d2P + (hk * g.x + outer_sym(dk, dg1) + d2g1 * kv) * mu;
                d2Q = d2Q + (hk * g.y + outer_sym(dk, dg2) + d2g2 * kv) * mu;
            }
        }
    }

    bool in_any_bump_support(const Vec2& x) const {
        for (const BumpTerm& b : bumps)
            if (b.k.inside_support(x)) return true;
        return false;
    }

    void add_bump(BumpTerm b) {
        bumps.push_back(std::move(b));
        bump_d2_.clear();
        for (const BumpTerm& bt : bumps) {
            BumpSecond bs;
            bs.g1xx = ScalarFn(bt.g1x1.e.diff(0));
            bs.g1xy = ScalarFn(bt.g1x1.e.diff(1));
            bs.g1yy = ScalarFn(bt.g1x2.e.diff(1));
            bs.g2xx = ScalarFn(bt.g2x1.e.diff(0));
            bs.g2xy = ScalarFn(bt.g2x1.e.diff(1));
            bs.g2yy = ScalarFn(bt.g2x2.e.diff(1));
            bump_d2_.push_back(std::move(bs));
        }
    }

private:
    Expr Pe_, Qe_;
    CompiledExpr Pc_, Qc_;
    CompiledExpr Px1_, Px2_, Qx1_, Qx2_;
    CompiledExpr Pxx_, Pxy_, Pyy_, Qxx_, Qxy_, Qyy_;
    std::map<int, std::pair<CompiledExpr, CompiledExpr>> pderiv_;

    struct BumpSecond {
        ScalarFn g1xx, g1xy, g1yy, g2xx, g2xy, g2yy;
    };
    std::vector<BumpSecond> bump_d2_;

    void bind() {
        Pc_ = CompiledExpr(Pe_);
        Qc_ = CompiledExpr(Qe_);
        Px1_ = CompiledExpr(Pe_.diff(0));
        Px2_ = CompiledExpr(Pe_.diff(1));
        Qx1_ = CompiledExpr(Qe_.diff(0));
        Qx2_ = CompiledExpr(Qe_.diff(1));
        Pxx_ = CompiledExpr(Pe_.diff(0).diff(0));
        Pxy_ = CompiledExpr(Pe_.diff(0).diff(1));
        Pyy_ = CompiledExpr(Pe_.diff(1).diff(1));
        Qxx_ = CompiledExpr(Qe_.diff(0).diff(0));
        Qxy_ = CompiledExpr(Qe_.diff(0).diff(1));
        Qyy_ = CompiledExpr(Qe_.diff(1).diff(1));
        const SymbolsPtr& syms = Pe_.symbols();
        for (int s = 2; s < syms->size(); ++s) {
            if (Pe_.depends_on(s) || Qe_.depends_on(s))
                pderiv_.emplace(s, std::make_pair(CompiledExpr(Pe_.diff(s)), CompiledExpr(Qe_.diff(s))));
        }
    }
};

struct Location {
    int region = -1;               // resolved region, or -1 when on a surface
    std::vector<int> on_surfaces;  // indices j with |h_j| <= tol_loc
    bool corner() const { return on_surfaces.size() >= 2; }
    bool off_surface() const { return on_surfaces.empty(); }
};

struct SurfacePointClass {
    enum Kind { Crossing, SlidingOrEscaping, Tangential, DoubleTangency } kind;
    int tangential_region = -1;  // region whose field is tangent (Tangential only)
    int region_a = -1, region_b = -1;
    double lie_a = 0, lie_b = 0;  // X_a h, X_b h at p
    double product() const { return lie_a * lie_b; }
};

class PiecewiseSystem {
public:
    std::string name;
    SymbolsPtr syms;
    std::vector<SwitchingSurface> surfaces;
    std::vector<Region> regions;
    std::vector<double> params;  // by symbol slot; slots 0,1 unused
    Tolerances tol;

    PiecewiseSystem() : syms(std::make_shared<SymbolTable>()) { params.resize(2, 0.0); }

    int add_param(const std::string& nm, double value) {
        auto table = std::make_shared<SymbolTable>(*syms);
        int slot = table->add(nm);
        syms = table;
        if (static_cast<int>(params.size()) <= slot) params.resize(slot + 1, 0.0);
        params[slot] = value;
        return slot;
    }
    void set_param(const std::string& nm, double value) {
        int slot = syms->find(nm);
        if (slot < 2) throw ModelError("unknown parameter '" + nm + "'");
        params[slot] = value;
    }
    double param(const std::string& nm) const {
        int slot = syms->find(nm);
        if (slot < 2) throw ModelError("unknown parameter '" + nm + "'");
        return params[slot];
    }

    // scratch env [x1 x2 params...] for a point
    std::vector<double> env_at(const Vec2& p) const {
        std::vector<double> env = params;
        env[0] = p.x;
        env[1] = p.y;
        return env;
    }

    void validate() const {
        if (surfaces.empty()) throw ModelError("system needs at least one switching surface");
        size_t n = surfaces.size();
        size_t expect = size_t{1} << n;
        if (regions.size() != expect)
            throw ModelError("expected " + std::to_string(expect) + " regions for " +
                             std::to_string(n) + " surface(s), got " + std::to_string(regions.size()));
        for (size_t i = 0; i < regions.size(); ++i) {
            if (regions[i].signs.size() != n)
                throw ModelError("region '" + regions[i].name + "' sign vector length mismatch");
            for (size_t k = i + 1; k < regions.size(); ++k)
                if (regions[i].signs == regions[k].signs)
                    throw ModelError("duplicate sign vector between regions '" + regions[i].name +
                                     "' and '" + regions[k].name + "'");
        }
    }

    int region_by_signs(const std::vector<int>& sg) const {
        for (size_t i = 0; i < regions.size(); ++i)
            if (regions[i].signs == sg) return static_cast<int>(i);
        return -1;
    }

    Location locate(const Vec2& p) const {
        std::vector<double> env = env_at(p);
        Location loc;
        std::vector<int> sg(surfaces.size(), 0);
        for (size_t j = 0; j < surfaces.size(); ++j) {
            double hv = surfaces[j].value(env);
            if (std::fabs(hv) <= tol.tol_loc)
                loc.on_surfaces.push_back(static_cast<int>(j));
            else
                sg[j] = hv > 0 ? 1 : -1;
        }
        if (loc.on_surfaces.empty()) {
            loc.region = region_by_signs(sg);
            if (loc.region < 0) throw ModelError("no region matches sign vector at point");
        }
        return loc;
    }

    // the two regions adjacent to surface j at p (signs off j taken from p)
    std::pair<int, int> adjacent_regions(int j, const Vec2& p) const {
        std::vector<double> env = env_at(p);
        std::vector<int> sg(surfaces.size(), 0);
        for (size_t k = 0; k < surfaces.size(); ++k) {
            if (static_cast<int>(k) == j) continue;
            double hv = surfaces[k].value(env);
            if (std::fabs(hv) <= tol.tol_loc)
                throw ModelError("point lies on a surface intersection (corner)");
            sg[k] = hv > 0 ? 1 : -1;
        }
        sg[j] = 1;
        int plus = region_by_signs(sg);
        sg[j] = -1;
        int minus = region_by_signs(sg);
        if (plus < 0 || minus < 0) throw ModelError("missing region adjacent to surface");
        return {plus, minus};
    }

    SurfacePointClass classify_surface_point(int j, const Vec2& p) const {
        std::vector<double> env = env_at(p);
        if (std::fabs(surfaces[j].value(env)) > tol.tol_loc)
            throw ModelError("point is not on surface " + surfaces[j].name);
        auto [ra, rb] = adjacent_regions(j, p);
        Vec2 grad = surfaces[j].gradient(env);
        Vec2 Xa = regions[ra].field(env), Xb = regions[rb].field(env);
        if (Xa.norm() == 0.0 || Xb.norm() == 0.0)
            throw ModelError("adjacent field vanishes at surface point");
        SurfacePointClass out{};
        out.region_a = ra;
        out.region_b = rb;
        out.lie_a = dot(Xa, grad);
        out.lie_b = dot(Xb, grad);
        bool ta = std::fabs(out.lie_a) <= tol.tol_tang;
        bool tb = std::fabs(out.lie_b) <= tol.tol_tang;
        if (ta && tb) {
            out.kind = SurfacePointClass::DoubleTangency;
        } else if (ta || tb) {
            out.kind = SurfacePointClass::Tangential;
            out.tangential_region = ta ? ra : rb;
        } else if (out.lie_a * out.lie_b > 0) {
            out.kind = SurfacePointClass::Crossing;
        } else {
            out.kind = SurfacePointClass::SlidingOrEscaping;
        }
        return out;
    }
};

using SystemPtr = std::shared_ptr<const PiecewiseSystem>;

}  // namespace polycyc
