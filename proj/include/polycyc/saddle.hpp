#pragma once

// Equilibria of region fields: damped-Newton location, eigen classification
// (hyperbolic saddle / semi-hyperbolic with one zero eigenvalue), and
// separatrix seeds with the second-order invariant-manifold correction.

#include <optional>
#include <variant>

#include "polycyc/model.hpp"

namespace polycyc {

struct SaddleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SaddleData {
    Vec2 p;
    double nu = 0, lambda = 0;  // nu < 0 < lambda
    Vec2 e_s, e_u;              // unit eigenvectors
    int region = -1;
    double ratio() const { return -nu / lambda; }  // hyperbolicity ratio |nu|/lambda
};

struct SemiHyperbolicData {
    Vec2 p;
    double kappa = 0;   // the unique nonzero eigenvalue
    Vec2 e_hyp, e_center;
    double center_quad = 0;  // leading center-manifold coefficient a in xc' = a xc^2 + ...
    bool hyperbolic_sector = false;
    int region = -1;
};

struct OtherEquilibrium {
    Vec2 p;
    int region = -1;
};

using EquilibriumClass = std::variant<SaddleData, SemiHyperbolicData, OtherEquilibrium>;

inline Vec2 find_equilibrium(const PiecewiseSystem& sys, int region, const Vec2& guess,
                             double radius) {
    const Region& reg = sys.regions.at(region);
    Vec2 p = guess;
    std::vector<double> env = sys.env_at(p);
    double fn = reg.field(env).norm();
    double target = 1e-12 * (1.0 + guess.norm());
    for (int it = 0; it < 60; ++it) {
        if (fn <= target) return p;
        Mat2 J = reg.jacobian(env);
        auto step = solve2(J, -reg.field(env));
        if (!step) throw SaddleError("singular Jacobian at Newton iterate");
        double damp = 1.0;
        for (int half = 0; half < 40; ++half) {
            Vec2 cand = p + *step * damp;
            env[0] = cand.x;
            env[1] = cand.y;
            double fc = reg.field(env).norm();
            if (fc < fn) {
                p = cand;
                fn = fc;
                break;
            }
            damp *= 0.5;
            if (half == 39) throw SaddleError("Newton divergence (no descent)");
        }
        if ((p - guess).norm() > radius)
            throw SaddleError("Newton iterate left the trust radius");
    }
    if (fn <= target) return p;
    throw SaddleError("Newton did not converge");
}

inline EquilibriumClass classify_equilibrium(const PiecewiseSystem& sys, int region,
                                             const Vec2& p) {
    const Region& reg = sys.regions.at(region);
    std::vector<double> env = sys.env_at(p);
    Mat2 J = reg.jacobian(env);
    double tol = sys.tol.tol_eig;
    auto eig = real_eigen(J);
    if (!eig) return OtherEquilibrium{p, region};
    auto [e1, e2] = *eig;
    bool z1 = std::fabs(e1.value) <= tol, z2 = std::fabs(e2.value) <= tol;
    if (z1 && z2) return OtherEquilibrium{p, region};
    if (z1 || z2) {
        const EigenPair& zero = z1 ? e1 : e2;
        const EigenPair& hyp = z1 ? e2 : e1;
        SemiHyperbolicData sh;
        sh.p = p;
        sh.kappa = hyp.value;
        sh.e_hyp = hyp.vector;
        sh.e_center = zero.vector;
        sh.region = region;
        // center-manifold quadratic coefficient: a = <w, Q(ec,ec)>, w the left
        // zero-eigenvector normalized against ec
        Mat2 d2P, d2Q;
        reg.second_derivs(env, d2P, d2Q);
        Vec2 ec = sh.e_center;
        Vec2 Qv{0.5 * dot(ec, d2P * ec), 0.5 * dot(ec, d2Q * ec)};
        // left eigenvector for eigenvalue 0 of J: rows of adj(J)
        Vec2 w{J.d, -J.b};
        if (std::fabs(dot(w, ec)) < 1e-12) w = Vec2{-J.c, J.a};
        if (std::fabs(dot(w, ec)) < 1e-12)
            sh.center_quad = 0;
        else
            sh.center_quad = dot(w, Qv) / dot(w, ec);
        sh.hyperbolic_sector = std::fabs(sh.center_quad) > 1e-10;
        return sh;
    }
    if (e1.value * e2.value < 0) {
        SaddleData sd;
        sd.p = p;
        sd.region = region;
        const EigenPair& unst = e1.value > 0 ? e1 : e2;
        const EigenPair& stab = e1.value > 0 ? e2 : e1;
        sd.lambda = unst.value;
        sd.nu = stab.value;
        sd.e_u = unst.vector;
        sd.e_s = stab.vector;
        return sd;
    }
    return OtherEquilibrium{p, region};
}

enum class Branch { Stable, Unstable };

struct SeparatrixSeed {
    Vec2 point;      // p + sign*delta*e + delta^2*w
    Vec2 direction;  // branch eigenvector (signed)
    int region = -1;
};

// Second-order manifold correction: w solves (J - 2 kappa I) w = -Q(e,e),
// Q the quadratic field term. Integrate unstable seeds forward, stable
// seeds backward.
inline SeparatrixSeed launch_separatrix(const PiecewiseSystem& sys, const SaddleData& sd,
                                        Branch branch, int sign, double delta) {
    if (delta < 1e-8 || delta > 1e-4)
        throw SaddleError("separatrix seed offset must lie in [1e-8, 1e-4]");
    if (sign != 1 && sign != -1) throw SaddleError("branch sign must be +1 or -1");
    const Region& reg = sys.regions.at(sd.region);
    std::vector<double> env = sys.env_at(sd.p);
    double kappa = branch == Branch::Unstable ? sd.lambda : sd.nu;
    Vec2 e = (branch == Branch::Unstable ? sd.e_u : sd.e_s) * static_cast<double>(sign);
    Mat2 J = reg.jacobian(env);
    Mat2 d2P, d2Q;
    reg.second_derivs(env, d2P, d2Q);
    Vec2 Qe{0.5 * dot(e, d2P * e), 0.5 * dot(e, d2Q * e)};
    Mat2 A{J.a - 2 * kappa, J.b, J.c, J.d - 2 * kappa};
    auto w = solve2(A, -Qe);
    if (!w) throw SaddleError("resonant quadratic correction (2:1)");
    SeparatrixSeed seed;
    seed.point = sd.p + e * delta + *w * (delta * delta);
    seed.direction = e;
    seed.region = sd.region;
    return seed;
}

}  // namespace polycyc
