#pragma once

// Iterated Lie derivatives X^k h (built symbolically), contact orders of a
// field with a switching surface, and the stable/unstable contact profile of
// a tangential polycycle vertex.

#include <span>
#include <stdexcept>
#include <vector>

#include "polycyc/model.hpp"

namespace polycyc {

struct LieError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FlatContactError : LieError {
    using LieError::LieError;
};

// Symbolic X^k h as an expression; X = (P,Q).
inline Expr lie_expr(const Expr& P, const Expr& Q, const Expr& h, int k, int k_max = 8) {
    if (k < 1) throw LieError("Lie derivative order must be >= 1");
    if (k > k_max) throw LieError("Lie derivative order " + std::to_string(k) +
                                  " exceeds k_max=" + std::to_string(k_max));
    Expr cur = h;
    for (int i = 0; i < k; ++i) cur = P * cur.diff(0) + Q * cur.diff(1);
    return cur;
}

inline double lie_derivative(const Expr& P, const Expr& Q, const Expr& h, int k,
                             std::span<const double> env, int k_max = 8) {
    return lie_expr(P, Q, h, k, k_max).eval(env);
}

inline double lie_derivative(const PiecewiseSystem& sys, int region, int surface, int k,
                             const Vec2& p) {
    const Region& r = sys.regions.at(region);
    if (r.in_any_bump_support(p))
        throw LieError("symbolic Lie derivative not available inside a bump support");
    std::vector<double> env = sys.env_at(p);
    return lie_derivative(r.P(), r.Q(), sys.surfaces.at(surface).h.e, k, env, sys.tol.k_max);
}

struct ContactResult {
    int order = 0;      // smallest m with |X^m h| > tol_tang
    double value = 0;   // signed X^m h at p
};

inline ContactResult contact_order(const Expr& P, const Expr& Q, const Expr& h,
                                   std::span<const double> env, double tol_tang, int k_max) {
    Expr cur = h;
    for (int m = 1; m <= k_max; ++m) {
        cur = P * cur.diff(0) + Q * cur.diff(1);
        double v = cur.eval(env);
        if (std::fabs(v) > tol_tang) return {m, v};
    }
    throw FlatContactError("no nonzero Lie derivative up to order " + std::to_string(k_max));
}

inline ContactResult contact_order(const PiecewiseSystem& sys, int region, int surface,
                                   const Vec2& p) {
    const Region& r = sys.regions.at(region);
    if (r.in_any_bump_support(p))
        throw LieError("symbolic contact order not available inside a bump support");
    std::vector<double> env = sys.env_at(p);
    Vec2 X = r.field(env);
    if (X.norm() == 0.0) throw LieError("field vanishes at the contact point");
    return contact_order(r.P(), r.Q(), sys.surfaces.at(surface).h.e, env, sys.tol.tol_tang,
                         sys.tol.k_max);
}

struct TangencyProfile {
    Vec2 p;
    int surface = -1;
    int n_s = 0, n_u = 0;                       // stable / unstable contact orders
    int stable_region = -1, unstable_region = -1;  // A_s, A_u
    bool same_side = false;
    double value_s = 0, value_u = 0;            // signed X^{n} h values
    double ratio() const { return static_cast<double>(n_u) / static_cast<double>(n_s); }
};

namespace detail {

// Side determination: the region containing a sample point taken on an arc a
// small offset away from the vertex. Grazing arcs give |h| ~ offset^2, so an
// ambiguous sample is retried with the next (larger) offset; hard error after
// exhausting the candidates.
inline int arc_side_region(const PiecewiseSystem& sys, std::span<const Vec2> samples,
                           const char* which) {
    int tries = 0;
    for (const Vec2& s : samples) {
        if (++tries > 5) break;
        Location loc = sys.locate(s);
        if (loc.off_surface()) return loc.region;
    }
    throw LieError(std::string("cannot determine the ") + which +
                   " side of a tangential vertex: all arc samples lie on the surface");
}

}  // namespace detail

// Profile of a tangential vertex from the local connection geometry. The
// sample lists hold points of the arriving / departing arcs near p, ordered
// by increasing offset from p.
inline TangencyProfile tangency_profile(const PiecewiseSystem& sys, int surface, const Vec2& p,
                                        std::span<const Vec2> arriving_samples,
                                        std::span<const Vec2> departing_samples) {
    SurfacePointClass cls = sys.classify_surface_point(surface, p);
    if (cls.kind == SurfacePointClass::DoubleTangency)
        throw LieError("double tangency is outside the analysis scope");
    if (cls.kind != SurfacePointClass::Tangential)
        throw LieError("vertex is not a tangential singularity");

    TangencyProfile prof;
    prof.p = p;
    prof.surface = surface;
    prof.stable_region = detail::arc_side_region(sys, arriving_samples, "arriving");
    prof.unstable_region = detail::arc_side_region(sys, departing_samples, "departing");
    prof.same_side = (prof.stable_region == prof.unstable_region);

    ContactResult cs = contact_order(sys, prof.stable_region, surface, p);
    ContactResult cu = contact_order(sys, prof.unstable_region, surface, p);
    prof.n_s = cs.order;
    prof.value_s = cs.value;
    prof.n_u = cu.order;
    prof.value_u = cu.value;
    return prof;
}

}  // namespace polycyc
