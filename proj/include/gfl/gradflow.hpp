// Gradient flow dw/dt = -J^T (Phi(w) - f) with learnability verdicts.
#pragma once
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "model.hpp"
#include "ode.hpp"

namespace gfl {

enum class Verdict { Learnable, Trapped, Budget };

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Learnable: return "Learnable";
        case Verdict::Trapped: return "Trapped";
        default: return "Budget";
    }
}

inline double loss(const Model& m, const Vec& w, const Vec& f) {
    return 0.5 * (f - m.value(w)).squaredNorm();
}

inline Vec grad_loss(const Model& m, const Vec& w, const Vec& f) {
    return m.jacobian(w).transpose() * (m.value(w) - f);
}

struct GfOptions {
    double t_max = 1e4;
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    double delta_success = 1e-6;
    double g_tol = 1e-8;
    long max_steps = 2000000;
    int record_stride = 1;
    double dwell_fraction = 0.05;  // Trapped needs this share of t_max spent below g_tol
    double h_max = std::numeric_limits<double>::infinity();
    bool stop_on_success = true;
    std::vector<double> t_grid;  // extra record times hit exactly

    void validate() const {
        if (!(t_max > 0 && rel_tol > 0 && abs_tol > 0 && delta_success > 0 && g_tol > 0 &&
              max_steps > 0 && record_stride > 0))
            throw std::invalid_argument("gradient-flow options must all be positive");
    }
};

struct Sample {
    double t;
    Vec w;
    double loss;
    double grad_norm;
};

struct Trajectory {
    std::vector<Sample> samples;
    Verdict verdict = Verdict::Budget;
    double t_end = 0.0;
    double min_loss = std::numeric_limits<double>::infinity();
    double max_w_norm = 0.0;
    double max_loss_uptick = 0.0;  // largest single-step loss increase
    long steps = 0;
    long rejected = 0;
    long rhs_evals = 0;
    bool underflow = false;

    const Sample& back() const { return samples.back(); }
};

inline Trajectory integrate(const Model& m, const Vec& f, const GfOptions& opt,
                            const Vec* w0 = nullptr) {
    opt.validate();
    Vec w = w0 ? *w0 : Vec::Zero(m.in_dim());
    Trajectory tr;
    double dwell = 0.0, prev_t = 0.0, prev_loss = std::numeric_limits<double>::quiet_NaN();
    bool prev_small = false;
    long step_idx = 0;
    std::size_t grid_i = 0;
    Sample last{0.0, w, 0.0, 0.0};

    auto rhs = [&](double, const Vec& y) -> Vec {
        Vec r = m.value(y) - f;
        return -(m.jacobian(y).transpose() * r);
    };
    auto on_step = [&](double t, const Vec& y, const Vec& dy) -> bool {
        const double L = loss(m, y, f);
        const double gn = dy.norm();
        if (!std::isnan(prev_loss)) tr.max_loss_uptick = std::max(tr.max_loss_uptick, L - prev_loss);
        prev_loss = L;
        tr.min_loss = std::min(tr.min_loss, L);
        tr.max_w_norm = std::max(tr.max_w_norm, y.norm());
        if (prev_small && gn < opt.g_tol) dwell += t - prev_t;
        if (gn >= opt.g_tol) dwell = 0.0;
        prev_small = gn < opt.g_tol;
        prev_t = t;
        tr.t_end = t;

        bool stop = false;
        if (L < opt.delta_success && opt.stop_on_success) {
            tr.verdict = Verdict::Learnable;
            stop = true;
        } else if (L >= opt.delta_success && gn < opt.g_tol && dwell >= opt.dwell_fraction * opt.t_max) {
            tr.verdict = Verdict::Trapped;
            stop = true;
        }
        bool on_grid = false;
        while (grid_i < opt.t_grid.size() && opt.t_grid[grid_i] <= t) {
            on_grid = on_grid || opt.t_grid[grid_i] == t;
            ++grid_i;
        }
        last = {t, y, L, gn};
        if (stop || on_grid || step_idx % opt.record_stride == 0 || t >= opt.t_max)
            tr.samples.push_back({t, y, L, gn});
        ++step_idx;
        return !stop;
    };

    OdeOptions oo;
    oo.rel_tol = opt.rel_tol;
    oo.abs_tol = opt.abs_tol;
    oo.max_steps = opt.max_steps;
    oo.h_max = opt.h_max;
    oo.stops = opt.t_grid;
    OdeStats st = dopri5(rhs, 0.0, w, opt.t_max, oo, on_step);
    tr.steps = st.accepted;
    tr.rejected = st.rejected;
    tr.rhs_evals = st.rhs_evals;
    tr.underflow = st.underflow;
    if (tr.verdict == Verdict::Budget && !opt.stop_on_success && tr.back().loss < opt.delta_success)
        tr.verdict = Verdict::Learnable;
    if (tr.samples.empty() || tr.samples.back().t != last.t) tr.samples.push_back(last);
    return tr;
}

struct BoundReport {
    bool ok = true;
    double worst_margin = std::numeric_limits<double>::infinity();  // min of L0*t + tol - |w|^2
    std::size_t worst_index = 0;
    std::vector<std::size_t> violations;
};

// |w(t)|^2 <= L_f(0) * t for flows started at the origin.
inline BoundReport bound_check(const Trajectory& tr, const Vec& f, const Model& m,
                               double tol = 1e-9) {
    BoundReport r;
    const double L0 = loss(m, Vec::Zero(m.in_dim()), f);
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
        const auto& s = tr.samples[i];
        const double margin = L0 * s.t + tol * (1.0 + L0 * s.t) - s.w.squaredNorm();
        if (margin < r.worst_margin) {
            r.worst_margin = margin;
            r.worst_index = i;
        }
        if (margin < 0.0) {
            r.ok = false;
            r.violations.push_back(i);
        }
    }
    return r;
}

// Sample indices where the first parameter decreases by more than tol.
inline std::vector<std::size_t> u_monotonicity(const Trajectory& tr, double tol = 1e-9) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < tr.samples.size(); ++i) {
        const double du = tr.samples[i].w[0] - tr.samples[i - 1].w[0];
        if (du < -tol * std::max(1.0, std::abs(tr.samples[i - 1].w[0]))) out.push_back(i);
    }
    return out;
}

inline double max_loss_uptick(const Trajectory& tr) {
    double up = 0.0;
    for (std::size_t i = 1; i < tr.samples.size(); ++i)
        up = std::max(up, tr.samples[i].loss - tr.samples[i - 1].loss);
    return std::max(up, tr.max_loss_uptick);
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
    if (tr.samples.empty()) return;
    const int W = static_cast<int>(tr.samples.front().w.size());
    os << "t";
    for (int j = 0; j < W; ++j) os << ",w" << j + 1;
    os << ",loss,grad_norm\n";
    os.precision(17);
    for (const auto& s : tr.samples) {
        os << s.t;
        for (int j = 0; j < W; ++j) os << ',' << s.w[j];
        os << ',' << s.loss << ',' << s.grad_norm << '\n';
    }
}

inline nlohmann::json trajectory_summary(const Trajectory& tr) {
    std::vector<double> w(tr.back().w.data(), tr.back().w.data() + tr.back().w.size());
    return {{"verdict", verdict_name(tr.verdict)}, {"t_end", tr.t_end},
            {"final_loss", tr.back().loss},        {"min_loss", tr.min_loss},
            {"final_grad_norm", tr.back().grad_norm}, {"w_end", w},
            {"steps", tr.steps},                   {"underflow", tr.underflow}};
}

}  // namespace gfl
