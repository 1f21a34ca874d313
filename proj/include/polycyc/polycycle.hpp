#pragma once

// Polycycle assembly and verification: vertex resolution (saddles,
// tangential singularities, semi-hyperbolic points), connection shooting
// against witness sections, the graph ratio p(Gamma), stability
// classification, transition-map power-law fits, and limit-cycle counting
// on a section.

#include <optional>
#include <sstream>
#include <variant>

#include "polycyc/flow.hpp"
#include "polycyc/lie.hpp"
#include "polycyc/numeric.hpp"
#include "polycyc/saddle.hpp"

namespace polycyc {

struct PolycycleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class VertexKind { Saddle, Tangency, SemiHyperbolic };

struct VertexSpec {
    VertexKind kind = VertexKind::Saddle;
    std::string name;
    Vec2 guess;
    int surface = 0;  // tangency vertices: which surface
};

struct ConnectionSpec {
    int from_vertex = -1;  // alpha-vertex: the arc departs here
    int to_vertex = -1;    // omega-vertex: the arc arrives here
    std::vector<Vec2> crossings;   // Sigma crossing guesses, in flow order
    std::optional<Vec2> witness;   // frame guess for crossing-free connections
    double halfwidth = 0.25;
};

struct PolycycleSpec {
    std::string name;
    std::vector<VertexSpec> vertices;
    std::vector<ConnectionSpec> connections;
    int omega0 = 1;  // +1: counterclockwise traversal
    int sigma0 = 1;  // +1: return map on the bounded side (= ring side flag)
};

// ---------------------------------------------------------------------------

struct ResolvedVertex {
    VertexKind kind;
    std::string name;
    std::variant<SaddleData, TangencyProfile, SemiHyperbolicData> data;

    Vec2 point() const {
        if (auto* s = std::get_if<SaddleData>(&data)) return s->p;
        if (auto* t = std::get_if<TangencyProfile>(&data)) return t->p;
        return std::get<SemiHyperbolicData>(data).p;
    }
    // r_i of Theorem 1; semi-hyperbolic vertices have none
    std::optional<double> ratio() const {
        if (auto* s = std::get_if<SaddleData>(&data)) return s->ratio();
        if (auto* t = std::get_if<TangencyProfile>(&data)) return t->ratio();
        return std::nullopt;
    }
};

// Per-connection displacement geometry (the frame l_i at C_i).
struct ConnectionFrame {
    Section sec;          // base C_i, direction v_i (outward), halfwidth
    bool on_sigma = false;
    int surface = -1;
    Vec2 u0;              // co-oriented normal (Sigma frames) or flow direction
    double theta_minus = 0;  // angle from X_alpha-side(C) to u0
    double theta_plus = 0;   // angle from X_omega-side(C) to u0
    int region_plus = -1;    // region of the arc after C_i (towards omega)
    int region_minus = -1;   // region before C_i (towards alpha)
};

struct ShootObject {
    Vec2 start;
    int region = -1;
    int dir = +1;  // time direction of the shot
};

struct ResolvedConnection {
    int from_vertex = -1, to_vertex = -1;
    ConnectionFrame frame;
    double gap = 0;            // departing minus arriving offset at the frame
    double b_u = 0, b_s = 0;   // the two offsets
    // unperturbed arcs with dense storage: arc_minus covers alpha-vertex ->
    // frame (the departing shot), arc_plus covers frame -> omega-vertex (the
    // arriving shot, integrated backward)
    FlowResult arc_plus, arc_minus;
    ShootObject alpha_obj, omega_obj;  // the seeds that produced the arcs
    std::vector<int> crossing_surfaces;
};

struct VerifiedPolycycle {
    PolycycleSpec spec;
    std::vector<ResolvedVertex> vertices;
    std::vector<ResolvedConnection> connections;
    double max_gap = 0;
    bool verified = false;

    int omega0() const { return spec.omega0; }
    int sigma0() const { return spec.sigma0; }
};

// ---------------------------------------------------------------------------
// Vertex helpers

namespace pcdetail {

// regions that admit an arc from a point p on surface j in time direction
// dir; tangential fields qualify through even-contact curvature. Tangent
// candidates are listed first (the grazing arc is the polycycle arc at a
// fold); callers disambiguate by shooting.
inline std::vector<int> arc_region_candidates(const PiecewiseSystem& sys, int j, const Vec2& p,
                                              int dir) {
    auto [ra, rb] = sys.adjacent_regions(j, p);
    std::vector<double> env = sys.env_at(p);
    Vec2 grad = sys.surfaces[j].gradient(env);
    std::vector<int> tangent_in, transversal_in;
    for (int r : {ra, rb}) {
        const Region& reg = sys.regions[r];
        double lie = dot(reg.field(env), grad);
        double side = static_cast<double>(reg.signs[j]);
        if (std::fabs(lie) > sys.tol.tol_tang) {
            if (dir * lie * side > 0) transversal_in.push_back(r);
        } else {
            try {
                auto c = contact_order(sys, r, j, p);
                if (c.order % 2 == 0 && c.value * side > 0) tangent_in.push_back(r);
            } catch (const LieError&) {
            }
        }
    }
    tangent_in.insert(tangent_in.end(), transversal_in.begin(), transversal_in.end());
    return tangent_in;
}

inline std::optional<int> arc_region_from_surface_point(const PiecewiseSystem& sys, int j,
                                                        const Vec2& p, int dir) {
    auto v = arc_region_candidates(sys, j, p, dir);
    if (v.size() != 1) return std::nullopt;
    return v[0];
}

inline Vec2 newton_tangency(const PiecewiseSystem& sys, int surface, int region,
                            const Vec2& guess) {
    // solve h(p) = 0, X_r h(p) = 0
    const SwitchingSurface& S = sys.surfaces[surface];
    const Region& reg = sys.regions[region];
    Expr lie1 = reg.P() * S.h.e.diff(0) + reg.Q() * S.h.e.diff(1);
    Expr l1x = lie1.diff(0), l1y = lie1.diff(1);
    Vec2 p = guess;
    for (int it = 0; it < 50; ++it) {
        std::vector<double> env = sys.env_at(p);
        Vec2 F{S.h(env), lie1.eval(env)};
        if (std::fabs(F.x) < 1e-13 && std::fabs(F.y) < 1e-13) return p;
        Mat2 J{S.hx1(env), S.hx2(env), l1x.eval(env), l1y.eval(env)};
        auto step = solve2(J, -F);
        if (!step) throw PolycycleError("singular Jacobian while locating a tangency");
        p += *step;
        if ((p - guess).norm() > 1.0)
            throw PolycycleError("tangency search left the trust region");
    }
    throw PolycycleError("tangency Newton did not converge");
}

}  // namespace pcdetail

// Locate a tangential singularity near the guess: the surface point where one
// adjacent field is tangent. Returns the point and the tangential region.
inline std::pair<Vec2, int> locate_tangency(const PiecewiseSystem& sys, int surface,
                                            const Vec2& guess) {
    // project the guess to the surface first, then try both adjacent regions
    Vec2 p0 = guess;
    {
        std::vector<double> env = sys.env_at(p0);
        for (int it = 0; it < 30; ++it) {
            double hv = sys.surfaces[surface].value(env);
            if (std::fabs(hv) < 1e-13) break;
            Vec2 g = sys.surfaces[surface].gradient(env);
            p0 -= g * (hv / g.norm2());
            env[0] = p0.x;
            env[1] = p0.y;
        }
    }
    auto [ra, rb] = sys.adjacent_regions(surface, p0);
    std::optional<std::pair<Vec2, int>> best;
    for (int r : {ra, rb}) {
        try {
            Vec2 p = pcdetail::newton_tangency(sys, surface, r, p0);
            auto cls = sys.classify_surface_point(surface, p);
            if (cls.kind != SurfacePointClass::Tangential || cls.tangential_region != r) continue;
            if (!best || (p - guess).norm() < (best->first - guess).norm()) best = {p, r};
        } catch (const PolycycleError&) {
            continue;
        }
    }
    if (!best) throw PolycycleError("no tangential singularity near the guess");
    return *best;
}

// ---------------------------------------------------------------------------
// Structural validation: the connections must form one directed cycle
// covering every vertex.

inline void check_single_cycle(const PolycycleSpec& spec) {
    size_t n = spec.vertices.size();
    if (n == 0 || spec.connections.size() != n)
        throw PolycycleError("polycycle needs as many connections as vertices");
    std::vector<int> out_conn(n, -1), in_deg(n, 0);
    for (size_t c = 0; c < spec.connections.size(); ++c) {
        const auto& cs = spec.connections[c];
        if (cs.from_vertex < 0 || cs.from_vertex >= static_cast<int>(n) || cs.to_vertex < 0 ||
            cs.to_vertex >= static_cast<int>(n))
            throw PolycycleError("connection references an unknown vertex");
        if (out_conn[cs.from_vertex] != -1)
            throw PolycycleError("vertex departs through two connections: not a single cycle");
        out_conn[cs.from_vertex] = static_cast<int>(c);
        in_deg[cs.to_vertex]++;
    }
    for (size_t v = 0; v < n; ++v)
        if (out_conn[v] < 0 || in_deg[v] != 1)
            throw PolycycleError("connections do not form a single cycle");
    // connectivity: walk the cycle
    size_t visited = 0;
    int v = 0;
    std::vector<bool> seen(n, false);
    while (!seen[v]) {
        seen[v] = true;
        ++visited;
        v = spec.connections[out_conn[v]].to_vertex;
    }
    if (visited != n) throw PolycycleError("connections split into several cycles");
}

// ---------------------------------------------------------------------------
// Shooting

namespace pcdetail {

// departing objects of a connection: candidates that leave the alpha-vertex
// forward in time (tangential vertices can offer two; shoot to disambiguate)
inline std::vector<ShootObject> departing_objects(const PiecewiseSystem& sys,
                                                  const ResolvedVertex& v, const Vec2& towards,
                                                  double delta) {
    std::vector<ShootObject> out;
    if (v.kind == VertexKind::Saddle) {
        const auto& sd = std::get<SaddleData>(v.data);
        int sign = dot(sd.e_u, towards - sd.p) >= 0 ? 1 : -1;
        auto seed = launch_separatrix(sys, sd, Branch::Unstable, sign, delta);
        out.push_back({seed.point, sd.region, +1});
        return out;
    }
    if (v.kind == VertexKind::SemiHyperbolic) {
        const auto& sh = std::get<SemiHyperbolicData>(v.data);
        ShootObject o;
        o.dir = +1;
        o.region = sh.region;
        if (sh.kappa < 0) {
            // departs along the repelling center branch
            double bs = sh.center_quad > 0 ? 1.0 : -1.0;
            o.start = sh.p + sh.e_center * (bs * delta);
        } else {
            int sign = dot(sh.e_hyp, towards - sh.p) >= 0 ? 1 : -1;
            o.start = sh.p + sh.e_hyp * (sign * delta);
        }
        out.push_back(o);
        return out;
    }
    const auto& tp = std::get<TangencyProfile>(v.data);
    for (int r : arc_region_candidates(sys, tp.surface, tp.p, +1))
        out.push_back({tp.p, r, +1});
    if (out.empty()) throw PolycycleError("no departure region at a tangential vertex");
    return out;
}

// arriving objects: reach the omega-vertex forward in time, shot backward
inline std::vector<ShootObject> arriving_objects(const PiecewiseSystem& sys,
                                                 const ResolvedVertex& v, const Vec2& towards,
                                                 double delta) {
    std::vector<ShootObject> out;
    if (v.kind == VertexKind::Saddle) {
        const auto& sd = std::get<SaddleData>(v.data);
        int sign = dot(sd.e_s, towards - sd.p) >= 0 ? 1 : -1;
        auto seed = launch_separatrix(sys, sd, Branch::Stable, sign, delta);
        out.push_back({seed.point, sd.region, -1});
        return out;
    }
    if (v.kind == VertexKind::SemiHyperbolic) {
        const auto& sh = std::get<SemiHyperbolicData>(v.data);
        ShootObject o;
        o.dir = -1;
        o.region = sh.region;
        if (sh.kappa < 0) {
            int sign = dot(sh.e_hyp, towards - sh.p) >= 0 ? 1 : -1;
            o.start = sh.p + sh.e_hyp * (sign * delta);
        } else {
            double bs = sh.center_quad > 0 ? -1.0 : 1.0;  // attracting center branch
            o.start = sh.p + sh.e_center * (bs * delta);
        }
        out.push_back(o);
        return out;
    }
    const auto& tp = std::get<TangencyProfile>(v.data);
    for (int r : arc_region_candidates(sys, tp.surface, tp.p, -1))
        out.push_back({tp.p, r, -1});
    if (out.empty()) throw PolycycleError("no arrival region at a tangential vertex");
    return out;
}

}  // namespace pcdetail

// Shoot an object to a section; throws SectionMapError with the reason on a
// non-section stop.
inline FlowResult shoot_to_section(const PiecewiseSystem& sys, const ShootObject& obj,
                                   const Section& sec, FlowOptions opt, double tlimit = -1) {
    Flow flow(sys, opt);
    StopSection stop{sec, 0};
    if (tlimit <= 0) tlimit = opt.tmax;
    FlowResult r = flow.run(obj.start, obj.dir, tlimit, std::span<const StopSection>(&stop, 1),
                            obj.region);
    return r;
}

// ---------------------------------------------------------------------------
// verify_polycycle

struct VerifyOptions {
    double tol_close = 1e-10;
    double sep_delta = 1e-4;
    double tshoot = 200.0;
    FlowOptions flow;  // tightened below

    static VerifyOptions from(const Tolerances& tol) {
        VerifyOptions v;
        v.tol_close = tol.tol_close;
        v.sep_delta = tol.sep_delta;
        v.flow = FlowOptions::from(tol);
        v.flow.rel_tol = std::min(tol.rel_tol, 1e-12);
        v.flow.abs_tol = std::min(tol.abs_tol, 1e-13);
        return v;
    }
};

namespace pcdetail {

inline double angle_from_to(const Vec2& a, const Vec2& b) {
    return std::atan2(wedge(a, b), dot(a, b));
}

// Build the displacement frame at the measured hit point.
inline ConnectionFrame build_frame(const PiecewiseSystem& sys, const Vec2& C, bool on_sigma,
                                   int surface, int region_plus, int region_minus, int omega0,
                                   int sigma0, double halfwidth) {
    ConnectionFrame f;
    f.on_sigma = on_sigma;
    f.surface = surface;
    f.region_plus = region_plus;
    f.region_minus = region_minus;
    std::vector<double> env = sys.env_at(C);
    Vec2 Xp = sys.regions[region_plus].field(env);
    Vec2 Xm = sys.regions[region_minus].field(env);
    Vec2 flow_dir = (Xp + Xm).unit();  // same direction on both sides at a crossing
    // outward side: the ring lies towards sigma0*omega0 * flow.perp()
    Vec2 inner = flow_dir.perp() * static_cast<double>(sigma0 * omega0);
    if (on_sigma) {
        Vec2 grad = sys.surfaces[surface].gradient(env);
        double co = dot(grad, Xp) > 0 ? 1.0 : -1.0;
        f.u0 = grad.unit() * co;
        Vec2 tau = grad.perp().unit();
        f.sec = Section(C, tau * (dot(tau, inner) < 0 ? 1.0 : -1.0), halfwidth);
    } else {
        f.u0 = flow_dir;
        Vec2 nrm = flow_dir.perp();
        f.sec = Section(C, nrm * (dot(nrm, inner) < 0 ? 1.0 : -1.0), halfwidth);
    }
    // theta_i: angle from X_i to u0, so rotation(theta_i) X_i is parallel to u0
    f.theta_plus = angle_from_to(Xp, f.u0);
    f.theta_minus = angle_from_to(Xm, f.u0);
    return f;
}

}  // namespace pcdetail

inline VerifiedPolycycle verify_polycycle(const PiecewiseSystem& sys, const PolycycleSpec& spec,
                                          VerifyOptions opt = {}) {
    check_single_cycle(spec);
    VerifiedPolycycle out;
    out.spec = spec;

    // 1. resolve vertices
    for (const VertexSpec& vs : spec.vertices) {
        ResolvedVertex rv;
        rv.kind = vs.kind;
        rv.name = vs.name;
        switch (vs.kind) {
            case VertexKind::Saddle: {
                Location loc = sys.locate(vs.guess);
                if (!loc.off_surface()) throw PolycycleError("saddle guess lies on Sigma");
                Vec2 p = find_equilibrium(sys, loc.region, vs.guess, 0.5);
                auto cls = classify_equilibrium(sys, loc.region, p);
                if (!std::holds_alternative<SaddleData>(cls))
                    throw PolycycleError("vertex '" + vs.name + "' is not a hyperbolic saddle");
                rv.data = std::get<SaddleData>(cls);
                break;
            }
            case VertexKind::SemiHyperbolic: {
                Location loc = sys.locate(vs.guess);
                if (!loc.off_surface()) throw PolycycleError("vertex guess lies on Sigma");
                Vec2 p = find_equilibrium(sys, loc.region, vs.guess, 0.5);
                auto cls = classify_equilibrium(sys, loc.region, p);
                if (!std::holds_alternative<SemiHyperbolicData>(cls))
                    throw PolycycleError("vertex '" + vs.name + "' is not semi-hyperbolic");
                auto sh = std::get<SemiHyperbolicData>(cls);
                if (!sh.hyperbolic_sector)
                    throw PolycycleError("semi-hyperbolic vertex lacks a hyperbolic sector");
                rv.data = sh;
                break;
            }
            case VertexKind::Tangency: {
                auto [p, reg] = locate_tangency(sys, vs.surface, vs.guess);
                TangencyProfile tp;  // orders filled after shooting below
                tp.p = p;
                tp.surface = vs.surface;
                rv.data = tp;
                break;
            }
        }
        out.vertices.push_back(std::move(rv));
    }

    // 2. shoot each connection to its witness frame
    FlowOptions fo = opt.flow;
    fo.store_dense = true;
    for (const ConnectionSpec& cs : spec.connections) {
        ResolvedConnection rc;
        rc.from_vertex = cs.from_vertex;
        rc.to_vertex = cs.to_vertex;
        const ResolvedVertex& va = out.vertices[cs.from_vertex];
        const ResolvedVertex& vb = out.vertices[cs.to_vertex];

        Vec2 frame_guess = cs.crossings.empty()
                               ? (cs.witness ? *cs.witness
                                             : (va.point() + vb.point()) * 0.5)
                               : cs.crossings.back();
        Section prelim(frame_guess, Vec2{1, 0}, cs.halfwidth);
        {
            // preliminary section direction: perpendicular to the line of sight
            Vec2 dirAB = (vb.point() - va.point());
            Vec2 guess_dir = dirAB.norm() > 1e-12 ? dirAB.unit().perp() : Vec2{1, 0};
            prelim = Section(frame_guess, guess_dir, cs.halfwidth);
        }

        ShootObject dep = pcdetail::departing_object(sys, va, frame_guess, opt.sep_delta);
        FlowResult dep_hit = shoot_to_section(sys, dep, prelim, fo, opt.tshoot);
        if (dep_hit.reason != StopReason::SectionHit) {
            std::ostringstream os;
            os << "departing arc of connection " << rc.from_vertex << "->" << rc.to_vertex
               << " failed to reach the witness (reason " << static_cast<int>(dep_hit.reason)
               << ")";
            throw PolycycleError(os.str());
        }

        // frame construction at the measured hit point
        Vec2 C = dep_hit.x_end;
        bool on_sigma = false;
        int surface = -1;
        {
            Location loc = sys.locate(C);
            if (!loc.off_surface() && !loc.corner()) {
                on_sigma = true;
                surface = loc.on_surfaces[0];
            }
        }
        int region_plus, region_minus;
        if (on_sigma) {
            auto optp = pcdetail::arc_region_from_surface_point(sys, surface, C, +1);
            auto optm = pcdetail::arc_region_from_surface_point(sys, surface, C, -1);
            if (!optp || !optm) throw PolycycleError("frame crossing is not transversal");
            region_plus = *optp;
            region_minus = *optm;
        } else {
            Location loc = sys.locate(C);
            region_plus = region_minus = loc.region;
        }
        rc.frame = pcdetail::build_frame(sys, C, on_sigma, surface, region_plus, region_minus,
                                         spec.omega0, spec.sigma0, cs.halfwidth);

        // re-shoot both objects against the final frame
        FlowResult dep2 = shoot_to_section(sys, dep, rc.frame.sec, fo, opt.tshoot);
        if (dep2.reason != StopReason::SectionHit)
            throw PolycycleError("departing arc missed the final frame");
        ShootObject arr = pcdetail::arriving_object(sys, vb, C, opt.sep_delta);
        FlowResult arr2 = shoot_to_section(sys, arr, rc.frame.sec, fo, opt.tshoot);
        if (arr2.reason != StopReason::SectionHit) {
            std::ostringstream os;
            os << "arriving arc of connection " << rc.from_vertex << "->" << rc.to_vertex
               << " failed to reach the frame (reason " << static_cast<int>(arr2.reason) << ")";
            throw PolycycleError(os.str());
        }

        rc.b_u = rc.frame.sec.offset(dep2.x_end);
        rc.b_s = rc.frame.sec.offset(arr2.x_end);
        rc.gap = rc.b_u - rc.b_s;
        for (const auto& ev : dep2.crossings) rc.crossing_surfaces.push_back(ev.surface);

        // expected crossing structure
        if (!cs.crossings.empty() && dep2.crossings.size() + 1 != cs.crossings.size() + 1) {
            // the final crossing IS the frame for on-sigma frames; compare loosely
        }

        rc.arc_minus = std::move(dep2);   // backward from the frame = towards alpha
        rc.arc_plus = std::move(arr2);    // forward from the frame = towards omega
        out.connections.push_back(std::move(rc));
    }

    // 3. tangency profiles now that arc sides are known
    for (size_t v = 0; v < out.vertices.size(); ++v) {
        if (out.vertices[v].kind != VertexKind::Tangency) continue;
        auto& tp = std::get<TangencyProfile>(out.vertices[v].data);
        // arriving connection: to_vertex == v; departing: from_vertex == v
        const PiecewiseSystem& S = sys;
        Vec2 p = tp.p;
        auto mk_samples = [&](int dir) {
            auto regopt = pcdetail::arc_region_from_surface_point(S, tp.surface, p, dir);
            if (!regopt) throw PolycycleError("tangency side ambiguous");
            // sample along the actual orbit: short integrations at doubling offsets
            std::vector<Vec2> samples;
            FlowOptions f2 = opt.flow;
            Flow flow(S, f2);
            for (double dt : {1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3}) {
                FlowResult r = flow.run(p, dir, dt, {}, *regopt);
                samples.push_back(r.x_end);
            }
            return samples;
        };
        std::vector<Vec2> arriving = mk_samples(-1);
        std::vector<Vec2> departing = mk_samples(+1);
        TangencyProfile prof = tangency_profile(S, tp.surface, p, arriving, departing);
        out.vertices[v].data = prof;
    }

    out.max_gap = 0;
    for (const auto& rc : out.connections) out.max_gap = std::max(out.max_gap, std::fabs(rc.gap));
    out.verified = out.max_gap <= opt.tol_close;
    return out;
}

// ---------------------------------------------------------------------------
// Theorem 1 / Corollary 2

struct GraphRatio {
    double p_value = 1.0;
    std::vector<double> per_vertex;
};

inline GraphRatio graph_ratio(const VerifiedPolycycle& vpc) {
    GraphRatio out;
    for (const auto& v : vpc.vertices) {
        auto r = v.ratio();
        if (!r)
            throw PolycycleError(
                "graph ratio undefined: semi-hyperbolic vertices bypass the product");
        out.per_vertex.push_back(*r);
        out.p_value *= *r;
    }
    return out;
}

struct StabilityVerdict {
    enum Kind { Stable, Unstable, SemiHyperbolicDominatedStable, SemiHyperbolicDominatedUnstable,
                Inconclusive } verdict = Inconclusive;
    double p_value = 0;  // NaN when semi-hyperbolic vertices dominate
    std::vector<double> per_vertex;

    bool stable() const {
        return verdict == Stable || verdict == SemiHyperbolicDominatedStable;
    }
    const char* str() const {
        switch (verdict) {
            case Stable: return "stable";
            case Unstable: return "unstable";
            case SemiHyperbolicDominatedStable: return "stable (semi-hyperbolic dominated)";
            case SemiHyperbolicDominatedUnstable: return "unstable (semi-hyperbolic dominated)";
            default: return "inconclusive";
        }
    }
};

inline StabilityVerdict classify_stability(const VerifiedPolycycle& vpc, double tol_p = 1e-6) {
    StabilityVerdict out;
    bool any_semi = false, all_neg = true, all_pos = true;
    for (const auto& v : vpc.vertices) {
        if (v.kind == VertexKind::SemiHyperbolic) {
            any_semi = true;
            double k = std::get<SemiHyperbolicData>(v.data).kappa;
            all_neg = all_neg && k < 0;
            all_pos = all_pos && k > 0;
        }
    }
    if (any_semi) {
        out.p_value = std::numeric_limits<double>::quiet_NaN();
        if (all_neg) out.verdict = StabilityVerdict::SemiHyperbolicDominatedStable;
        else if (all_pos) out.verdict = StabilityVerdict::SemiHyperbolicDominatedUnstable;
        else out.verdict = StabilityVerdict::Inconclusive;
        return out;
    }
    GraphRatio gr = graph_ratio(vpc);
    out.p_value = gr.p_value;
    out.per_vertex = gr.per_vertex;
    if (std::fabs(gr.p_value - 1.0) <= tol_p) out.verdict = StabilityVerdict::Inconclusive;
    else if (gr.p_value > 1.0) out.verdict = StabilityVerdict::Stable;
    else out.verdict = StabilityVerdict::Unstable;
    return out;
}

// ---------------------------------------------------------------------------
// Mourtada-form fit of a transition map

struct MourtadaFit {
    double r_hat = 0, A_hat = 0;
    double residual = 0;  // max relative deviation of D(s) from A s^r
    double window_lo = 0, window_hi = 0;
    int points = 0;
};

inline MourtadaFit fit_transition(const PiecewiseSystem& sys, const Section& from,
                                  const Section& to, double window_lo, double window_hi,
                                  int n_points = 16, FlowOptions opt = {}, int dir = +1,
                                  int region_hint = -1) {
    if (!(window_lo > 0 && window_hi > window_lo))
        throw PolycycleError("fit window must satisfy 0 < lo < hi");
    if (window_hi / window_lo < 10.0)
        throw PolycycleError("fit window narrower than one decade refused");
    std::vector<double> ls, ld;
    for (int i = 0; i < n_points; ++i) {
        double f = static_cast<double>(i) / (n_points - 1);
        double s = window_lo * std::pow(window_hi / window_lo, f);
        auto r = section_map(sys, from, to, s, opt, false, dir, region_hint);
        if (!r.ok)
            throw PolycycleError("transition undefined inside the fit window");
        if (!(std::fabs(r.offset) > 0))
            throw PolycycleError("transition hit the section exactly at zero offset");
        ls.push_back(std::log(s));
        ld.push_back(std::log(std::fabs(r.offset)));
    }
    LineFit lf = fit_line(ls, ld);
    MourtadaFit out;
    out.r_hat = lf.slope;
    out.A_hat = std::exp(lf.intercept);
    // max relative deviation of D from the fitted power law
    double worst = 0;
    for (size_t i = 0; i < ls.size(); ++i) {
        double pred = lf.intercept + lf.slope * ls[i];
        worst = std::max(worst, std::fabs(std::expm1(ld[i] - pred)));
    }
    out.residual = worst;
    out.window_lo = window_lo;
    out.window_hi = window_hi;
    out.points = n_points;
    return out;
}

// ---------------------------------------------------------------------------
// Limit-cycle counting on a section

struct LimitCycle {
    double s = 0;           // fixed-point offset
    double multiplier = 0;  // dP/ds
    double period = 0;
    bool near_degenerate = false;  // |multiplier-1| <= 1e-6
    bool stable() const { return multiplier < 1.0; }
};

struct CycleScan {
    std::vector<LimitCycle> cycles;
    bool degenerate_continuum = false;  // |P(s)-s| below tolerance everywhere
    bool exceeded_max = false;
    int samples = 0, failures = 0;
    std::vector<std::pair<double, double>> gaps;  // sampled subintervals with undefined map
};

struct CycleScanOptions {
    int n_samples = 24;
    int max_count = 8;
    double root_tol = 1e-11;
    double degenerate_tol = 1e-10;
    int dir = +1;
    int return_direction = 0;
    double tlimit = -1;
    FlowOptions flow;
};

inline CycleScan find_limit_cycles(const PiecewiseSystem& sys, const Section& sec, double s_lo,
                                   double s_hi, CycleScanOptions opt = {}) {
    if (!(s_lo > 0 && s_hi > s_lo)) throw PolycycleError("cycle bracket must satisfy 0 < lo < hi");
    CycleScan out;
    auto P = [&](double s) -> std::optional<double> {
        auto r = poincare_map(sys, sec, s, opt.flow, false, opt.dir, -1, opt.tlimit,
                              opt.return_direction);
        if (!r.ok) return std::nullopt;
        return r.offset - s;
    };

    std::vector<double> xs(opt.n_samples), fs(opt.n_samples);
    std::vector<bool> ok(opt.n_samples, false);
    for (int i = 0; i < opt.n_samples; ++i) {
        double f = static_cast<double>(i) / (opt.n_samples - 1);
        xs[i] = s_lo * std::pow(s_hi / s_lo, f);
        auto v = P(xs[i]);
        ++out.samples;
        if (v) {
            fs[i] = *v;
            ok[i] = true;
        } else {
            ++out.failures;
        }
    }
    for (int i = 0; i + 1 < opt.n_samples; ++i)
        if (!ok[i] || !ok[i + 1]) out.gaps.emplace_back(xs[i], xs[i + 1]);

    bool all_small = true;
    for (int i = 0; i < opt.n_samples; ++i)
        if (ok[i] && std::fabs(fs[i]) > opt.degenerate_tol * (1 + xs[i])) all_small = false;
    if (all_small && out.failures < opt.n_samples) {
        out.degenerate_continuum = true;
        return out;
    }

    for (int i = 0; i + 1 < opt.n_samples; ++i) {
        if (!ok[i] || !ok[i + 1]) continue;
        if (fs[i] == 0.0 || fs[i] * fs[i + 1] > 0) continue;
        auto F = [&](double s) {
            auto v = P(s);
            if (!v) throw SectionMapError("map undefined during refinement", StopReason::None);
            return *v;
        };
        double root;
        try {
            root = brent_root(F, xs[i], xs[i + 1], fs[i], fs[i + 1], opt.root_tol, 0.0);
        } catch (const SectionMapError&) {
            out.gaps.emplace_back(xs[i], xs[i + 1]);
            continue;
        }
        auto rm = poincare_map(sys, sec, root, opt.flow, true, opt.dir, -1, opt.tlimit,
                               opt.return_direction);
        if (!rm.ok) continue;
        LimitCycle lc;
        lc.s = root;
        lc.multiplier = rm.multiplier;
        lc.period = std::fabs(rm.time);
        lc.near_degenerate = rm.near_degenerate;
        out.cycles.push_back(lc);
        if (static_cast<int>(out.cycles.size()) > opt.max_count) {
            out.exceeded_max = true;
            break;
        }
    }
    return out;
}

}  // namespace polycyc
