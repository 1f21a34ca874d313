#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace polycyc {

// Brent's method on a bracketing interval [a,b] with fa*fb <= 0.
// Stops when |f| <= ftol or the interval shrinks below xtol.
template <typename F>
double brent_root(F&& f, double a, double b, double fa, double fb, double xtol, double ftol,
                  int max_iter = 200) {
    if (fa == 0) return a;
    if (fb == 0) return b;
    if (fa * fb > 0) throw std::runtime_error("brent_root: not a bracket");
    double c = a, fc = fa, d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if (std::fabs(fc) < std::fabs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        double tol1 = 2 * std::numeric_limits<double>::epsilon() * std::fabs(b) + 0.5 * xtol;
        double xm = 0.5 * (c - b);
        if (std::fabs(fb) <= ftol || std::fabs(xm) <= tol1) return b;
        if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
            double s = fb / fa, p, q;
            if (a == c) {
                p = 2 * xm * s;
                q = 1 - s;
            } else {
                double qq = fa / fc, r = fb / fc;
                p = s * (2 * xm * qq * (qq - r) - (b - a) * (r - 1));
                q = (qq - 1) * (r - 1) * (s - 1);
            }
            if (p > 0) q = -q;
            p = std::fabs(p);
            if (2 * p < std::min(3 * xm * q - std::fabs(tol1 * q), std::fabs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += (std::fabs(d) > tol1) ? d : (xm > 0 ? tol1 : -tol1);
        fb = f(b);
        if ((fb > 0) == (fc > 0)) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    return b;
}

// Least-squares line y = slope*x + intercept.
struct LineFit {
    double slope = 0, intercept = 0, max_abs_residual = 0;
};

template <typename XS, typename YS>
LineFit fit_line(const XS& xs, const YS& ys) {
    size_t n = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    LineFit out;
    double denom = n * sxx - sx * sx;
    out.slope = (n * sxy - sx * sy) / denom;
    out.intercept = (sy - out.slope * sx) / n;
    for (size_t i = 0; i < n; ++i)
        out.max_abs_residual =
            std::max(out.max_abs_residual, std::fabs(ys[i] - (out.slope * xs[i] + out.intercept)));
    return out;
}

// Adaptive Gauss-Kronrod (G7,K15) quadrature on [a,b].
namespace gk {
// nodes/weights for K15 on [-1,1]; G7 uses the odd-indexed nodes
inline constexpr double xk[15] = {
    -0.991455371120813, -0.949107912342759, -0.864864423359769, -0.741531185599394,
    -0.586087235467691, -0.405845151377397, -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691, 0.741531185599394,
    0.864864423359769, 0.949107912342759, 0.991455371120813};
inline constexpr double wk[15] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
    0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529};
inline constexpr double wg[7] = {
    0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469,
    0.381830050505119, 0.279705391489277, 0.129484966168870};
}  // namespace gk

template <typename F>
double gauss_kronrod(F&& f, double a, double b, double& err) {
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double ik = 0, ig = 0;
    for (int i = 0; i < 15; ++i) {
        double v = f(mid + half * gk::xk[i]);
        ik += gk::wk[i] * v;
        if (i % 2 == 1) ig += gk::wg[i / 2] * v;
    }
    ik *= half;
    ig *= half;
    err = std::fabs(ik - ig);
    return ik;
}

// Panel-adaptive integration to an absolute tolerance.
template <typename F>
double adaptive_quadrature(F&& f, double a, double b, double abs_tol, int max_depth = 30) {
    struct Frame {
        double a, b;
        int depth;
    };
    double total = 0;
    std::vector<Frame> stack{{a, b, 0}};
    while (!stack.empty()) {
        Frame fr = stack.back();
        stack.pop_back();
        double err = 0;
        double val = gauss_kronrod(f, fr.a, fr.b, err);
        double local_tol = abs_tol * (fr.b - fr.a) / (b - a);
        if (err <= std::max(local_tol, abs_tol * 1e-3) || fr.depth >= max_depth) {
            total += val;
        } else {
            double m = 0.5 * (fr.a + fr.b);
            stack.push_back({fr.a, m, fr.depth + 1});
            stack.push_back({m, fr.b, fr.depth + 1});
        }
    }
    return total;
}

}  // namespace polycyc
