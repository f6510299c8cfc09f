// Low-discrepancy point sets: Halton sequence, Fibonacci sphere, uniform circle.
#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace gfl {

using Vec = Eigen::VectorXd;

inline double radical_inverse(unsigned long long i, unsigned base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

inline constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

// i-th Halton point in [0,1)^dim (index 0 is skipped to avoid the origin).
inline Vec halton(unsigned long long i, int dim) {
    if (dim > static_cast<int>(std::size(kPrimes))) throw std::invalid_argument("Halton dimension too large");
    Vec p(dim);
    for (int j = 0; j < dim; ++j) p[j] = radical_inverse(i + 1, kPrimes[j]);
    return p;
}

// n points on S^2 along the golden-angle spiral.
inline std::vector<Vec> fibonacci_sphere(int n) {
    std::vector<Vec> pts;
    pts.reserve(n);
    const double ga = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double th = ga * i;
        pts.push_back(Vec{{r * std::cos(th), r * std::sin(th), z}});
    }
    return pts;
}

inline std::vector<Vec> circle_grid(int n) {
    std::vector<Vec> pts;
    pts.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double th = 2.0 * std::numbers::pi * i / n;
        pts.push_back(Vec{{std::cos(th), std::sin(th)}});
    }
    return pts;
}

// Grid on S^dim closed under y -> -y with at least n points.
inline std::vector<Vec> antipodal_sphere_grid(int dim, int n) {
    if (dim == 1) {
        const int m = n + (n % 2);
        return circle_grid(m);
    }
    if (dim != 2) throw std::invalid_argument("sphere grids are provided for S^1 and S^2");
    const int half = (n + 1) / 2;
    std::vector<Vec> pts = fibonacci_sphere(half);
    for (int i = 0; i < half; ++i) pts.push_back(-pts[i]);
    return pts;
}

// Deterministic points on S^{dim} from Halton coordinates (dim >= 3 fallback).
inline std::vector<Vec> halton_sphere(int dim, int n) {
    std::vector<Vec> pts;
    pts.reserve(n);
    for (int i = 0; i < n; ++i) {
        Vec h = halton(i, dim + 1);
        Vec g(dim + 1);
        // Box-Muller pairs; odd component uses a fresh radical inverse
        for (int j = 0; j < dim + 1; ++j) {
            const double u1 = std::max(1e-12, h[j]);
            const double u2 = radical_inverse(i + 1, kPrimes[(j + dim + 1) % std::size(kPrimes)]);
            g[j] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }
        pts.push_back(g.normalized());
    }
    return pts;
}

inline std::vector<Vec> sphere_grid(int dim, int n) {
    if (dim <= 2) return antipodal_sphere_grid(dim, n);
    return halton_sphere(dim, n);
}

}  // namespace gfl
