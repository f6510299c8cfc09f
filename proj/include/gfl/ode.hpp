// Embedded Dormand-Prince 5(4) stepper with adaptive step control.
#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace gfl {

using Vec = Eigen::VectorXd;

struct OdeOptions {
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    double h_init = 0.0;  // 0 picks automatically
    double h_max = std::numeric_limits<double>::infinity();
    double h_min = 1e-14;
    long max_steps = 1000000;
    std::vector<double> stops;  // times the stepper must land on exactly (sorted)
};

struct OdeStats {
    long accepted = 0;
    long rejected = 0;
    long rhs_evals = 0;
    bool underflow = false;
    bool max_steps_hit = false;
};

namespace dp {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp

inline double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double atol, double rtol) {
    double s = 0.0;
    for (int i = 0; i < err.size(); ++i) {
        const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        const double r = err[i] / sc;
        s += r * r;
    }
    return std::sqrt(s / std::max<Eigen::Index>(1, err.size()));
}

// rhs(t, y) -> dy/dt. on_step(t, y, dy) is called at t0 and after every accepted step;
// returning false stops the integration.
template <class Rhs, class OnStep>
OdeStats dopri5(Rhs&& rhs, double t0, const Vec& y0, double t1, const OdeOptions& opt,
                OnStep&& on_step) {
    using namespace dp;
    OdeStats st;
    double t = t0;
    Vec y = y0;
    Vec k1 = rhs(t, y);
    ++st.rhs_evals;
    if (!on_step(t, y, k1)) return st;

    double h = opt.h_init;
    if (h <= 0.0) {
        Vec sc = (opt.abs_tol + opt.rel_tol * y.array().abs()).matrix();
        const double d0 = (y.array() / sc.array()).matrix().norm() / std::sqrt(double(y.size()));
        const double d1 = (k1.array() / sc.array()).matrix().norm() / std::sqrt(double(y.size()));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, t1 - t0);
        Vec y1 = y + h0 * k1;
        Vec f1 = rhs(t + h0, y1);
        ++st.rhs_evals;
        const double d2 =
            ((f1 - k1).array() / sc.array()).matrix().norm() / std::sqrt(double(y.size())) / h0;
        const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                     : std::pow(0.01 / std::max(d1, d2), 0.2);
        h = std::min(100.0 * h0, h1);
    }
    h = std::min(h, opt.h_max);

    std::size_t next_stop = 0;
    while (next_stop < opt.stops.size() && opt.stops[next_stop] <= t) ++next_stop;

    Vec k2, k3, k4, k5, k6, k7, ytmp, ynew, err;
    double fac_prev_err = 1e-4;
    while (t < t1) {
        if (st.accepted >= opt.max_steps) {
            st.max_steps_hit = true;
            break;
        }
        double target = t1;
        if (next_stop < opt.stops.size()) target = std::min(target, opt.stops[next_stop]);
        bool lands = false;
        if (t + h >= target) {
            h = target - t;
            lands = true;
        }
        if (h < opt.h_min * std::max(1.0, std::abs(t))) {
            st.underflow = true;
            break;
        }
        ytmp = y + h * a21 * k1;
        k2 = rhs(t + c2 * h, ytmp);
        ytmp = y + h * (a31 * k1 + a32 * k2);
        k3 = rhs(t + c3 * h, ytmp);
        ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        k4 = rhs(t + c4 * h, ytmp);
        ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        k5 = rhs(t + c5 * h, ytmp);
        ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        k6 = rhs(t + h, ytmp);
        ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        k7 = rhs(t + h, ynew);
        st.rhs_evals += 6;
        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const double en = error_norm(err, y, ynew, opt.abs_tol, opt.rel_tol);
        if (!std::isfinite(en)) {
            ++st.rejected;
            h *= 0.1;
            continue;
        }
        if (en <= 1.0) {
            // PI step control (Hairer's beta = 0.04)
            double fac = 0.9 * std::pow(std::max(en, 1e-10), -0.2 + 0.04 * 0.75) *
                         std::pow(fac_prev_err, 0.04);
            fac = std::clamp(fac, 0.2, 5.0);
            fac_prev_err = std::max(en, 1e-4);
            t = lands ? target : t + h;
            y.swap(ynew);
            k1.swap(k7);
            ++st.accepted;
            if (lands && next_stop < opt.stops.size() && target == opt.stops[next_stop]) ++next_stop;
            if (!on_step(t, y, k1)) return st;
            h = std::min(h * fac, opt.h_max);
        } else {
            ++st.rejected;
            h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
        }
    }
    return st;
}

}  // namespace gfl
