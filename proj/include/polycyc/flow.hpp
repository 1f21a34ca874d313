#pragma once

// Event-accurate orbit integration for PiecewiseSystem: adaptive embedded
// Dormand-Prince 5(4) with quartic dense output, surface-crossing
// localization on the dense output, grazing detection, sliding/corner
// aborts, transversal sections, and first-variational transport with the
// crossing transfer matrix.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "polycyc/model.hpp"
#include "polycyc/numeric.hpp"

namespace polycyc {

struct FlowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Section {
    Vec2 C;              // base point
    Vec2 v;              // unit direction along the section
    double halfwidth = 1.0;

    Section() = default;
    Section(Vec2 base, Vec2 dir, double hw = 1.0) : C(base), v(dir.unit()), halfwidth(hw) {}

    Vec2 normal() const { return v.perp(); }
    Vec2 point(double s) const { return C + v * s; }
    double offset(const Vec2& x) const { return dot(x - C, v); }
    double phi(const Vec2& x) const { return dot(x - C, normal()); }
};

enum class StopReason : std::uint8_t {
    None,
    TimeLimit,     // |t| reached tmax without a terminal event
    SectionHit,    // a requested section was crossed inside its half-width
    Sliding,       // orbit reached a sliding/escaping part of Sigma
    Corner,        // event point lies on two surfaces
    TangencyStall, // receiving field tangential, orbit cannot cross
    Blowup,        // state norm exceeded the guard
    StepFail,      // step size collapsed
};

struct EventRecord {
    double t = 0;
    Vec2 x;
    int surface = -1;        // Sigma crossings
    int section = -1;        // section hits
    double transversality = 0;  // product of adjacent Lie derivatives (crossings)
    double offset = 0;          // section-hit offset
    int from_region = -1, to_region = -1;
};

// One accepted integrator step with its dense-output coefficients for the
// two position components.
struct DenseStep {
    double t0 = 0, h = 0;
    std::array<Vec2, 5> rc;  // rcont1..rcont5

    Vec2 eval(double theta) const {
        return rc[0] + theta * (rc[1] + (1 - theta) * (rc[2] + theta * (rc[3] + (1 - theta) * rc[4])));
    }
    Vec2 at_time(double t) const { return eval((t - t0) / h); }
};

struct TrajectorySegment {
    int region = -1;
    double t0 = 0, t1 = 0;
    std::vector<DenseStep> steps;  // populated when dense storage is on
};

struct FlowResult {
    StopReason reason = StopReason::None;
    double t_end = 0;
    Vec2 x_end;
    Mat2 M = Mat2::identity();          // variational transport (when requested)
    EventRecord terminal;               // SectionHit / Sliding / Corner details
    std::vector<EventRecord> crossings; // Sigma crossings traversed, in order
    std::vector<TrajectorySegment> segments;

    bool hit_section() const { return reason == StopReason::SectionHit; }
};

struct FlowOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double tmax = 1e4;
    double blowup = 1e6;
    double tol_evt = 1e-12;
    double tol_tang = 1e-9;
    double tol_loc = 1e-10;
    bool store_dense = false;
    bool variational = false;
    long max_steps = 4'000'000;

    static FlowOptions from(const Tolerances& tol) {
        FlowOptions o;
        o.rel_tol = tol.rel_tol;
        o.abs_tol = tol.abs_tol;
        o.tmax = tol.tmax;
        o.blowup = tol.blowup;
        o.tol_evt = tol.tol_evt;
        o.tol_tang = tol.tol_tang;
        o.tol_loc = tol.tol_loc;
        return o;
    }
};

// A terminal section: stop when the orbit crosses it transversally within
// the half-width. `direction` filters on the sign of d(phi)/dt (0 = any).
struct StopSection {
    Section sec;
    int direction = 0;
};

namespace dp5 {
// Dormand-Prince 5(4) coefficients
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace dp5

class Flow {
public:
    Flow(const PiecewiseSystem& sys, FlowOptions opt)
        : sys_(sys), opt_(opt), env_(sys.params) {
        if (env_.size() < 2) env_.resize(2, 0.0);
    }

    const FlowOptions& options() const { return opt_; }

    // Integrate from x0 (region resolved or given as a hint for on-surface
    // starts) for |t| up to tlimit in the given time direction (+1/-1).
    // Stops at the first matching terminal section, a sliding/corner/
    // tangency event, blowup, or the time limit.
    FlowResult run(const Vec2& x0, int dir, double tlimit, std::span<const StopSection> stops = {},
                   int region_hint = -1) {
        FlowResult res;
        double t = 0;
        Vec2 x = x0;
        Mat2 M = Mat2::identity();
        int region = resolve_region(x, region_hint);

        // latches: surfaces or sections the state currently sits on
        std::vector<bool> latch_s(sys_.surfaces.size(), false);
        std::vector<bool> latch_sec(stops.size(), false);
        for (size_t j = 0; j < sys_.surfaces.size(); ++j)
            latch_s[j] = std::fabs(h_of(j, x)) <= latch_release_;
        for (size_t k = 0; k < stops.size(); ++k)
            latch_sec[k] = std::fabs(stops[k].sec.phi(x)) <= latch_release_;

        double hstep = initial_step(region, x, dir);
        long nsteps = 0;
        begin_segment(res, region, t);

        while (true) {
            if (std::fabs(t) >= tlimit * (1 - 1e-14)) {
                res.reason = StopReason::TimeLimit;
                break;
            }
            if (x.norm() > opt_.blowup) {
                res.reason = StopReason::Blowup;
                break;
            }
            if (++nsteps > opt_.max_steps) {
                res.reason = StopReason::StepFail;
                break;
            }
            // do not step past the time limit
            if (std::fabs(t) + std::fabs(hstep) > tlimit)
                hstep = dir * (tlimit - std::fabs(t));

            StepOut st = step(region, t, x, M, hstep);
            if (!st.accepted) {
                hstep = st.h_next;
                if (std::fabs(st.h_next) < 1e-14 * std::max(1.0, std::fabs(t))) {
                    res.reason = near_tangency(region, x) ? StopReason::TangencyStall
                                                          : StopReason::StepFail;
                    break;
                }
                continue;
            }

            // event scan over this accepted step
            EventScan ev = scan_events(region, st, stops, latch_s, latch_sec);

            if (ev.kind == EventScan::None) {
                commit_step(res, st, 1.0);
                t = st.t0 + st.h;
                x = st.y1;
                M = st.M1;
                hstep = st.h_next;
                update_latches(x, stops, latch_s, latch_sec);
                continue;
            }

            // truncate the step at the event
            double te = st.t0 + ev.theta * st.h;
            Vec2 xe = st.dense.eval(ev.theta);
            Mat2 Me = opt_.variational ? variational_to(region, st, ev.theta) : Mat2::identity();
            commit_step(res, st, ev.theta);

            if (ev.kind == EventScan::SectionCross) {
                res.reason = StopReason::SectionHit;
                res.terminal.t = te;
                res.terminal.x = xe;
                res.terminal.section = ev.index;
                res.terminal.offset = stops[ev.index].sec.offset(xe);
                res.terminal.from_region = region;
                t = te;
                x = xe;
                M = Me;
                break;
            }

            // surface crossing: classify and either pass through or stop
            int j = ev.index;
            auto decision = crossing_decision(j, xe, region);
            res.crossings.push_back(EventRecord{te, xe, j, -1, decision.product, 0.0, region,
                                                decision.continue_region});
            t = te;
            x = xe;
            M = Me;
            if (decision.stop != StopReason::None) {
                res.reason = decision.stop;
                res.terminal.t = te;
                res.terminal.x = xe;
                res.terminal.surface = j;
                res.terminal.transversality = decision.product;
                res.terminal.from_region = region;
                break;
            }
            if (opt_.variational) M = decision.saltation * M;
            end_segment(res, t);
            region = decision.continue_region;
            begin_segment(res, region, t);
            latch_s.assign(sys_.surfaces.size(), false);
            latch_s[j] = true;
            for (size_t k = 0; k < stops.size(); ++k)
                latch_sec[k] = std::fabs(stops[k].sec.phi(x)) <= latch_release_;
            hstep = dir * std::fabs(st.h_next);
        }

        end_segment(res, t);
        res.t_end = t;
        res.x_end = x;
        res.M = M;
        return res;
    }

    // Field of a region at a point under the bound parameter vector.
    Vec2 field(int region, const Vec2& x) {
        set_env(x);
        return sys_.regions[region].field(env_);
    }
    Mat2 jacobian(int region, const Vec2& x) {
        set_env(x);
        return sys_.regions[region].jacobian(env_);
    }
    double h_of(int j, const Vec2& x) {
        set_env(x);
        return sys_.surfaces[j].value(env_);
    }
    Vec2 grad_h(int j, const Vec2& x) {
        set_env(x);
        return sys_.surfaces[j].gradient(env_);
    }

    int resolve_region(const Vec2& x, int hint) {
        Location loc = sys_.locate(x);
        if (loc.off_surface()) return loc.region;
        if (hint >= 0) return hint;
        throw FlowError("initial point lies on a switching surface; a region hint is required");
    }

    // override the parameter vector (same layout as sys.params)
    void set_params(std::span<const double> params) {
        for (size_t i = 2; i < params.size() && i < env_.size(); ++i) env_[i] = params[i];
    }

private:
    const PiecewiseSystem& sys_;
    FlowOptions opt_;
    std::vector<double> env_;
    double latch_release_ = 1e-9;

    void set_env(const Vec2& x) {
        env_[0] = x.x;
        env_[1] = x.y;
    }

    struct StepOut {
        bool accepted = false;
        double t0 = 0, h = 0, h_next = 0;
        Vec2 y0, y1;
        Mat2 M0, M1;
        DenseStep dense;
        std::array<Vec2, 7> k;       // position stages
        std::array<Mat2, 7> mk;      // variational stages
    };

    struct Deriv {
        Vec2 dx;
        Mat2 dM;
    };

    Deriv rhs(int region, const Vec2& x, const Mat2& M) {
        set_env(x);
        Deriv d;
        const Region& r = sys_.regions[region];
        d.dx = r.field(env_);
        if (opt_.variational) d.dM = r.jacobian(env_) * M;
        return d;
    }

    double initial_step(int region, const Vec2& x, int dir) {
        Vec2 f = field(region, x);
        double scale = opt_.abs_tol + opt_.rel_tol * x.norm();
        double d0 = x.norm() / scale, d1 = f.norm() / scale;
        double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        return dir * std::min(h, 0.1);
    }

    StepOut step(int region, double t, const Vec2& y, const Mat2& M, double h) {
        using namespace dp5;
        StepOut s;
        s.t0 = t;
        s.h = h;
        s.y0 = y;
        s.M0 = M;

        Deriv k1 = rhs(region, y, M);
        Deriv k2 = rhs(region, y + h * a21 * k1.dx, M + (k1.dM * (h * a21)));
        Deriv k3 = rhs(region, y + h * (a31 * k1.dx + a32 * k2.dx),
                       M + (k1.dM * (h * a31) + k2.dM * (h * a32)));
        Deriv k4 = rhs(region, y + h * (a41 * k1.dx + a42 * k2.dx + a43 * k3.dx),
                       M + (k1.dM * (h * a41) + k2.dM * (h * a42) + k3.dM * (h * a43)));
        Deriv k5 = rhs(region, y + h * (a51 * k1.dx + a52 * k2.dx + a53 * k3.dx + a54 * k4.dx),
                       M + (k1.dM * (h * a51) + k2.dM * (h * a52) + k3.dM * (h * a53) +
                            k4.dM * (h * a54)));
        Deriv k6 = rhs(region,
                       y + h * (a61 * k1.dx + a62 * k2.dx + a63 * k3.dx + a64 * k4.dx + a65 * k5.dx),
                       M + (k1.dM * (h * a61) + k2.dM * (h * a62) + k3.dM * (h * a63) +
                            k4.dM * (h * a64) + k5.dM * (h * a65)));
        Vec2 y1 = y + h * (b1 * k1.dx + b3 * k3.dx + b4 * k4.dx + b5 * k5.dx + b6 * k6.dx);
        Mat2 M1 = M + (k1.dM * (h * b1) + k3.dM * (h * b3) + k4.dM * (h * b4) + k5.dM * (h * b5) +
                       k6.dM * (h * b6));
        Deriv k7 = rhs(region, y1, M1);

        Vec2 errv = h * (e1 * k1.dx + e3 * k3.dx + e4 * k4.dx + e5 * k5.dx + e6 * k6.dx + e7 * k7.dx);
        double sk1 = opt_.abs_tol + opt_.rel_tol * std::max(std::fabs(y.x), std::fabs(y1.x));
        double sk2 = opt_.abs_tol + opt_.rel_tol * std::max(std::fabs(y.y), std::fabs(y1.y));
        double err = std::sqrt(0.5 * ((errv.x / sk1) * (errv.x / sk1) + (errv.y / sk2) * (errv.y / sk2)));
        if (opt_.variational) {
            Mat2 errm = k1.dM * (h * e1) + k3.dM * (h * e3) + k4.dM * (h * e4) + k5.dM * (h * e5) +
                        k6.dM * (h * e6) + k7.dM * (h * e7);
            double mn = std::max({std::fabs(M.a), std::fabs(M.b), std::fabs(M.c), std::fabs(M.d), 1.0});
            double skm = opt_.abs_tol + opt_.rel_tol * mn;
            double em = std::max({std::fabs(errm.a), std::fabs(errm.b), std::fabs(errm.c),
                                  std::fabs(errm.d)}) / skm;
            err = std::max(err, em);
        }

        double fac = 0.9 * std::pow(std::max(err, 1e-30), -0.2);
        fac = std::min(5.0, std::max(0.2, fac));
        s.h_next = h * fac;
        if (err > 1.0) {
            s.accepted = false;
            return s;
        }
        s.accepted = true;
        s.y1 = y1;
        s.M1 = M1;
        s.k = {k1.dx, k2.dx, k3.dx, k4.dx, k5.dx, k6.dx, k7.dx};
        if (opt_.variational) s.mk = {k1.dM, k2.dM, k3.dM, k4.dM, k5.dM, k6.dM, k7.dM};

        Vec2 dy = y1 - y;
        s.dense.t0 = t;
        s.dense.h = h;
        s.dense.rc[0] = y;
        s.dense.rc[1] = dy;
        s.dense.rc[2] = h * k1.dx - dy;
        s.dense.rc[3] = dy - h * k7.dx - s.dense.rc[2];
        s.dense.rc[4] = h * (d1 * k1.dx + d3 * k3.dx + d4 * k4.dx + d5 * k5.dx + d6 * k6.dx +
                             d7 * k7.dx);
        return s;
    }

    // variational state at an interior point of an accepted step: re-integrate
    // the truncated step (the matrix part has no dense output)
    Mat2 variational_to(int region, const StepOut& st, double theta) {
        if (theta >= 1.0) return st.M1;
        using namespace dp5;
        double h = st.h * theta;
        const Vec2& y = st.y0;
        const Mat2& M = st.M0;
        Deriv k1{st.k[0], st.mk[0]};
        Deriv k2 = rhs(region, y + h * a21 * k1.dx, M + (k1.dM * (h * a21)));
        Deriv k3 = rhs(region, y + h * (a31 * k1.dx + a32 * k2.dx),
                       M + (k1.dM * (h * a31) + k2.dM * (h * a32)));
        Deriv k4 = rhs(region, y + h * (a41 * k1.dx + a42 * k2.dx + a43 * k3.dx),
                       M + (k1.dM * (h * a41) + k2.dM * (h * a42) + k3.dM * (h * a43)));
        Deriv k5 = rhs(region, y + h * (a51 * k1.dx + a52 * k2.dx + a53 * k3.dx + a54 * k4.dx),
                       M + (k1.dM * (h * a51) + k2.dM * (h * a52) + k3.dM * (h * a53) +
                            k4.dM * (h * a54)));
        Deriv k6 = rhs(region,
                       y + h * (a61 * k1.dx + a62 * k2.dx + a63 * k3.dx + a64 * k4.dx + a65 * k5.dx),
                       M + (k1.dM * (h * a61) + k2.dM * (h * a62) + k3.dM * (h * a63) +
                            k4.dM * (h * a64) + k5.dM * (h * a65)));
        return M + (k1.dM * (h * b1) + k3.dM * (h * b3) + k4.dM * (h * b4) + k5.dM * (h * b5) +
                    k6.dM * (h * b6));
    }

    struct EventScan {
        enum Kind { None, SurfaceCross, SectionCross } kind = None;
        int index = -1;
        double theta = 2.0;
    };

    EventScan scan_events(int region, const StepOut& st, std::span<const StopSection> stops,
                          std::vector<bool>& latch_s, std::vector<bool>& latch_sec) {
        EventScan best;
        double scale = 1.0 + std::max(st.y0.norm(), st.y1.norm());
        double ftol = opt_.tol_evt * scale;

        for (size_t j = 0; j < sys_.surfaces.size(); ++j) {
            auto g = [&](double th) { return h_of(static_cast<int>(j), st.dense.eval(th)); };
            double g0 = g(0.0), g1 = g(1.0);
            if (latch_s[j]) {
                if (std::fabs(g1) > latch_release_) latch_s[j] = false;
                continue;
            }
            double th = first_root(g, g0, g1, ftol, region, static_cast<int>(j), st);
            if (th >= 0 && th < best.theta) best = {EventScan::SurfaceCross, static_cast<int>(j), th};
        }
        for (size_t k = 0; k < stops.size(); ++k) {
            const Section& sec = stops[k].sec;
            auto g = [&](double th) { return sec.phi(st.dense.eval(th)); };
            double g0 = g(0.0), g1 = g(1.0);
            if (latch_sec[k]) {
                if (std::fabs(g1) > latch_release_) latch_sec[k] = false;
                continue;
            }
            if (g0 == 0.0 || g0 * g1 > 0) continue;
            double th = brent_root(g, 0.0, 1.0, g0, g1, 1e-14, ftol);
            Vec2 xe = st.dense.eval(th);
            if (std::fabs(sec.offset(xe)) > sec.halfwidth) continue;
            if (stops[k].direction != 0) {
                double phidot = dot(sec.normal(), field(region, xe)) * (st.h > 0 ? 1.0 : -1.0);
                if (phidot * stops[k].direction <= 0) continue;
            }
            if (th < best.theta) best = {EventScan::SectionCross, static_cast<int>(k), th};
        }
        return best;
    }

    // First root of h_j on the step, including double crossings hidden behind
    // equal endpoint signs (detected through the interior extremum of h).
    // Returns -1 when there is no crossing; grazing (|h|_min <= ftol without a
    // sign change) does not count as a crossing.
    template <typename G>
    double first_root(G&& g, double g0, double g1, double ftol, int region, int j,
                      const StepOut& st) {
        if (g0 == 0.0) return -1.0;  // still on the surface; latch should cover this
        if (g0 * g1 < 0) return brent_root(g, 0.0, 1.0, g0, g1, 1e-14, ftol);
        // same sign: look for an interior extremum via the Lie derivative
        auto gdot = [&](double th) {
            Vec2 xe = st.dense.eval(th);
            return dot(grad_h(j, xe), field(region, xe));
        };
        double d0 = gdot(0.0), d1 = gdot(1.0);
        if (d0 == 0.0 || d0 * d1 > 0) return -1.0;
        double th_ext = brent_root(gdot, 0.0, 1.0, d0, d1, 1e-13, 1e-30);
        double gext = g(th_ext);
        // excursions below the grazing guard are tangential touches, not
        // crossings (even-order contact)
        double graze = 100 * ftol;
        if (gext * g0 < 0 && std::fabs(gext) > graze) {
            // two crossings inside the step; take the first
            return brent_root(g, 0.0, th_ext, g0, gext, 1e-14, ftol);
        }
        return -1.0;
    }

    struct CrossDecision {
        StopReason stop = StopReason::None;
        int continue_region = -1;
        double product = 0;
        Mat2 saltation = Mat2::identity();
    };

    CrossDecision crossing_decision(int j, const Vec2& xe, int region) {
        CrossDecision out;
        // corner check
        for (size_t r = 0; r < sys_.surfaces.size(); ++r) {
            if (static_cast<int>(r) == j) continue;
            if (std::fabs(h_of(static_cast<int>(r), xe)) <= opt_.tol_loc) {
                out.stop = StopReason::Corner;
                return out;
            }
        }
        std::vector<int> sg = sys_.regions[region].signs;
        sg[j] = -sg[j];
        int recv = sys_.region_by_signs(sg);
        if (recv < 0) throw FlowError("no region on the far side of surface");

        Vec2 grad = grad_h(j, xe);
        Vec2 Xout = field(region, xe), Xin = field(recv, xe);
        double lo = dot(Xout, grad), li = dot(Xin, grad);
        out.product = lo * li;

        if (std::fabs(li) <= opt_.tol_tang) {
            // receiving field tangential: pass through only if its second Lie
            // derivative moves the orbit into the receiving side
            set_env(xe);
            const Region& rr = sys_.regions[recv];
            double l2;
            try {
                Expr l1e = rr.P() * sys_.surfaces[j].h.e.diff(0) + rr.Q() * sys_.surfaces[j].h.e.diff(1);
                l2 = (rr.P() * l1e.diff(0) + rr.Q() * l1e.diff(1)).eval(env_);
            } catch (const EvalError&) {
                l2 = 0;
            }
            double side = static_cast<double>(rr.signs[j]);
            if (l2 * side > 0) {
                // curves back towards the surface from the receiving side: the
                // orbit grazes into the region (even contact departure)
                out.continue_region = recv;
                out.saltation = crossing_transfer(grad, Xout, Xin, lo);
                return out;
            }
            out.stop = StopReason::TangencyStall;
            return out;
        }
        if (out.product > 0) {
            out.continue_region = recv;
            out.saltation = crossing_transfer(grad, Xout, Xin, lo);
            return out;
        }
        out.stop = StopReason::Sliding;
        return out;
    }

    static Mat2 crossing_transfer(const Vec2& grad, const Vec2& Xout, const Vec2& Xin, double lo) {
        // S = I + (Xin - Xout) grad^T / <grad, Xout>
        Vec2 dX = Xin - Xout;
        return Mat2{1 + dX.x * grad.x / lo, dX.x * grad.y / lo,
                    dX.y * grad.x / lo, 1 + dX.y * grad.y / lo};
    }

    bool near_tangency(int region, const Vec2& x) {
        for (size_t j = 0; j < sys_.surfaces.size(); ++j) {
            if (std::fabs(h_of(static_cast<int>(j), x)) < 1e-6 &&
                std::fabs(dot(grad_h(static_cast<int>(j), x), field(region, x))) < 1e-6)
                return true;
        }
        return false;
    }

    void begin_segment(FlowResult& res, int region, double t) {
        if (!opt_.store_dense) {
            if (res.segments.empty() || res.segments.back().region != region)
                res.segments.push_back(TrajectorySegment{region, t, t, {}});
            return;
        }
        res.segments.push_back(TrajectorySegment{region, t, t, {}});
    }
    void end_segment(FlowResult& res, double t) {
        if (!res.segments.empty()) res.segments.back().t1 = t;
    }
    // The dense polynomial is stored over its full step interval; a segment's
    // t1 (set at the event) marks how far it is usable.
    void commit_step(FlowResult& res, const StepOut& st, double /*theta*/) {
        if (!opt_.store_dense || res.segments.empty()) return;
        res.segments.back().steps.push_back(st.dense);
    }

    void update_latches(const Vec2& x, std::span<const StopSection> stops,
                        std::vector<bool>& latch_s, std::vector<bool>& latch_sec) {
        for (size_t j = 0; j < sys_.surfaces.size(); ++j)
            if (latch_s[j] && std::fabs(h_of(static_cast<int>(j), x)) > latch_release_)
                latch_s[j] = false;
        for (size_t k = 0; k < stops.size(); ++k)
            if (latch_sec[k] && std::fabs(stops[k].sec.phi(x)) > latch_release_)
                latch_sec[k] = false;
    }
};

// ---------------------------------------------------------------------------
// Section-to-section machinery

struct SectionMapResult {
    bool ok = false;
    StopReason reason = StopReason::None;
    double offset = 0;       // arrival offset on the target section
    double time = 0;         // transit time (signed)
    double derivative = 0;   // d(offset_out)/d(offset_in), when requested
    Vec2 x_end;
    std::vector<EventRecord> crossings;
};

struct SectionMapError : std::runtime_error {
    StopReason reason;
    SectionMapError(const std::string& w, StopReason r) : std::runtime_error(w), reason(r) {}
};

// Map from `from` to the first transversal crossing of `to`.
inline SectionMapResult section_map(const PiecewiseSystem& sys, const Section& from,
                                    const Section& to, double s, FlowOptions opt,
                                    bool want_derivative = true, int dir = +1,
                                    int region_hint = -1, double tlimit = -1) {
    opt.variational = want_derivative;
    Flow flow(sys, opt);
    Vec2 x0 = from.point(s);
    if (tlimit <= 0) tlimit = opt.tmax;

    // transversality of the start section
    {
        Location loc = sys.locate(x0);
        int reg = loc.off_surface() ? loc.region : region_hint;
        if (reg >= 0) {
            Vec2 f = flow.field(reg, x0);
            if (f.norm() > 0 && std::fabs(wedge(f.unit(), from.v)) < 1e-8)
                throw SectionMapError("start section is not transversal to the flow",
                                      StopReason::TangencyStall);
        }
    }

    StopSection stop{to, 0};
    FlowResult r = flow.run(x0, dir, tlimit, std::span<const StopSection>(&stop, 1), region_hint);

    SectionMapResult out;
    out.reason = r.reason;
    out.crossings = r.crossings;
    if (r.reason != StopReason::SectionHit) return out;

    out.ok = true;
    out.offset = to.offset(r.x_end);
    out.time = r.t_end;
    out.x_end = r.x_end;
    if (want_derivative) {
        Location loc = sys.locate(r.x_end);
        int reg = loc.off_surface() ? loc.region : r.terminal.from_region;
        Vec2 X = flow.field(reg, r.x_end);
        Vec2 n = to.normal();
        double nX = dot(n, X);
        if (nX == 0) throw SectionMapError("arrival not transversal", StopReason::TangencyStall);
        Vec2 Mv = r.M * from.v;
        Vec2 proj = Mv - X * (dot(n, Mv) / nX);
        out.derivative = dot(to.v, proj);
    }
    return out;
}

struct PoincareResult {
    bool ok = false;
    StopReason reason = StopReason::None;
    double offset = 0;
    double time = 0;
    double multiplier = 0;
    bool near_degenerate = false;  // |multiplier - 1| <= 1e-6
    std::vector<EventRecord> crossings;
};

// First-return map on a section. `dir` = -1 gives the backward return.
inline PoincareResult poincare_map(const PiecewiseSystem& sys, const Section& sec, double s,
                                   FlowOptions opt, bool want_derivative = true, int dir = +1,
                                   int region_hint = -1, double tlimit = -1,
                                   int return_direction = 0) {
    SectionMapResult r;
    // first return passes the section with the same crossing direction as the
    // start; the latch in Flow skips the initial departure
    opt.variational = want_derivative;
    Flow flow(sys, opt);
    Vec2 x0 = sec.point(s);
    if (tlimit <= 0) tlimit = opt.tmax;
    StopSection stop{sec, return_direction};
    FlowResult fr = flow.run(x0, dir, tlimit, std::span<const StopSection>(&stop, 1), region_hint);

    PoincareResult out;
    out.reason = fr.reason;
    out.crossings = fr.crossings;
    if (fr.reason != StopReason::SectionHit) return out;
    out.ok = true;
    out.offset = sec.offset(fr.x_end);
    out.time = fr.t_end;
    if (want_derivative) {
        Location loc = sys.locate(fr.x_end);
        int reg = loc.off_surface() ? loc.region : fr.terminal.from_region;
        Vec2 X = flow.field(reg, fr.x_end);
        Vec2 n = sec.normal();
        double nX = dot(n, X);
        if (nX == 0) throw SectionMapError("return not transversal", StopReason::TangencyStall);
        Vec2 Mv = fr.M * sec.v;
        Vec2 proj = Mv - X * (dot(n, Mv) / nX);
        out.multiplier = dot(sec.v, proj);
        out.near_degenerate = std::fabs(out.multiplier - 1.0) <= 1e-6;
    }
    return out;
}

// Integration entry point matching the spec's trajectory-dump interface.
inline FlowResult integrate(const PiecewiseSystem& sys, const Vec2& x0, double tmax, int dir = +1,
                            FlowOptions opt = {}, int region_hint = -1) {
    Flow flow(sys, opt);
    return flow.run(x0, dir, tmax, {}, region_hint);
}

}  // namespace polycyc
