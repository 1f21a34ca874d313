#pragma once

#include <array>
#include <cmath>
#include <optional>

namespace polycyc {

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator-() const { return {-x, -y}; }
    Vec2 operator*(double c) const { return {x * c, y * c}; }
    Vec2 operator/(double c) const { return {x / c, y / c}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }

    double norm() const { return std::hypot(x, y); }
    double norm2() const { return x * x + y * y; }
    Vec2 unit() const { double n = norm(); return {x / n, y / n}; }
    // rotate by +90 degrees
    Vec2 perp() const { return {-y, x}; }
};

inline Vec2 operator*(double c, const Vec2& v) { return v * c; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
// planar wedge (x1,x2)^(y1,y2) = x1*y2 - y1*x2
inline double wedge(const Vec2& a, const Vec2& b) { return a.x * b.y - b.x * a.y; }

struct Mat2 {
    // row-major: [a b; c d]
    double a = 0, b = 0, c = 0, d = 0;

    static Mat2 identity() { return {1, 0, 0, 1}; }
    static Mat2 rotation(double theta) {
        double ct = std::cos(theta), st = std::sin(theta);
        return {ct, -st, st, ct};
    }
    static Mat2 from_columns(const Vec2& u, const Vec2& v) { return {u.x, v.x, u.y, v.y}; }

    Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    Mat2 operator*(const Mat2& m) const {
        return {a * m.a + b * m.c, a * m.b + b * m.d,
                c * m.a + d * m.c, c * m.b + d * m.d};
    }
    Mat2 operator+(const Mat2& m) const { return {a + m.a, b + m.b, c + m.c, d + m.d}; }
    Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }

    double trace() const { return a + d; }
    double det() const { return a * d - b * c; }
    std::optional<Mat2> inverse() const {
        double dt = det();
        if (dt == 0.0) return std::nullopt;
        return Mat2{d / dt, -b / dt, -c / dt, a / dt};
    }
};

// Solve M z = r for z; nullopt when singular.
inline std::optional<Vec2> solve2(const Mat2& m, const Vec2& r) {
    double dt = m.det();
    if (dt == 0.0) return std::nullopt;
    return Vec2{(r.x * m.d - m.b * r.y) / dt, (m.a * r.y - r.x * m.c) / dt};
}

struct EigenPair {
    double value;
    Vec2 vector;  // unit
};

// Real eigen decomposition of a 2x2 matrix; nullopt for a complex pair.
inline std::optional<std::array<EigenPair, 2>> real_eigen(const Mat2& m) {
    double tr = m.trace(), dt = m.det();
    double disc = tr * tr - 4.0 * dt;
    if (disc < 0.0) return std::nullopt;
    double sq = std::sqrt(disc);
    double l1 = 0.5 * (tr + sq), l2 = 0.5 * (tr - sq);
    auto evec = [&](double lam) -> Vec2 {
        // rows of (M - lam I) are orthogonal to the eigenvector
        Vec2 r1{m.a - lam, m.b}, r2{m.c, m.d - lam};
        Vec2 v = (r1.norm2() >= r2.norm2()) ? Vec2{-r1.y, r1.x} : Vec2{-r2.y, r2.x};
        if (v.norm2() == 0.0) v = {1, 0};  // M == lam I
        return v.unit();
    };
    return std::array<EigenPair, 2>{EigenPair{l1, evec(l1)}, EigenPair{l2, evec(l2)}};
}

}  // namespace polycyc
