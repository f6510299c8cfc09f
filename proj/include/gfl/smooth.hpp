// C-infinity ramps built from exp(-1/x) bumps.
#pragma once
#include <algorithm>
#include <cmath>

namespace gfl {

inline double bump_tail(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }

// 0 for x <= 0, 1 for x >= 1, smooth and strictly increasing in between.
inline double smoothstep(double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double a = bump_tail(x), b = bump_tail(1.0 - x);
    return a / (a + b);
}

inline double smoothstep_deriv(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    double a = bump_tail(x), b = bump_tail(1.0 - x);
    double da = a / (x * x), db = -b / ((1.0 - x) * (1.0 - x));
    return (da * b - a * db) / ((a + b) * (a + b));
}

// Average of the identity and the smoothstep: slope never drops below 1/2 on [0,1].
inline double ramp(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return 0.5 * (x + smoothstep(x));
}

inline double ramp_deriv(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return 0.5 * (1.0 + smoothstep_deriv(x));
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace gfl
