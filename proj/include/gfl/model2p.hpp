// Staged two-parameter map (u,v) -> R^d aligned with a BoxTree.
//
// The level curve v -> Phi(u,v) is a uniform cubic B-spline over control points whose
// positions move with u. Stage 0 is the linear map (v, a+1-u/u1, ...). Stage m deforms
// every level-m box piece: gathering raises a tooth per child pair, spreading extends
// the tooth into two columns that cover the children along the next coordinate.
#pragma once
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "boxtree.hpp"
#include "model.hpp"
#include "smooth.hpp"

namespace gfl {

struct StagedConfig {
    double stretch = 1.0;             // global u-stretch multiplier
    double initial_stretch = 1.0;     // u_1 = initial_stretch * (unit displacement / unit speed)
    double initial_gap_ratio = 0.05;  // (a - face) / h_1
    double tip_start_ratio = 0.1;     // column offset from the pair midline after gathering, / eps
    double tip_end_ratio = 0.9;       // column offset after spreading, / eps
    double column_ratio = 0.05;       // compressed column height after gathering, / h
    double offset_end_ratio = 0.25;   // final / initial distance of the piece to its box face
    int leaf_points = 6;
    int diag_points = 3;
    int vert_points = 2;
    int cap_points = 3;

    void validate() const {
        if (!(stretch > 0 && initial_stretch > 0 && initial_gap_ratio > 0))
            throw std::invalid_argument("stretch factors and initial gap must be positive");
        if (!(tip_start_ratio > 0 && tip_start_ratio < tip_end_ratio && tip_end_ratio < 1))
            throw std::invalid_argument("need 0 < tip_start_ratio < tip_end_ratio < 1");
        if (!(column_ratio > 0 && column_ratio < 0.5))
            throw std::invalid_argument("column_ratio must lie in (0, 0.5)");
        if (!(offset_end_ratio > 0 && offset_end_ratio < 1))
            throw std::invalid_argument("offset_end_ratio must lie in (0, 1)");
        if (leaf_points < 2 || diag_points < 1 || vert_points < 1 || cap_points < 1)
            throw std::invalid_argument("point counts too small");
    }
};

// Representative geometry of one stage (all level-n boxes are congruent).
struct StageParams {
    int n = 0;  // 1-based stage index; stage n splits level-n boxes
    double u_lo = 0, u_hi = 0, u_star = 0;
    int k = 0, k_next = 0;
    double lambda = 1.0;
    double smooth_width = 0.0;  // stages meet with a kink in u; no substrip
    double a = 0;       // tooth width h along k (box-local frame, one pair half)
    double b = 0;       // box extent along k_next
    double eps = 0;     // gap half-width
    double gap = 0;     // initial distance of the piece to the box face along k_next
    double gap_end = 0; // distance after gathering
    double tip_start = 0, tip_end = 0;
    double column0 = 0;

    double gather_time(double u) const { return (u - u_lo) / (u_star - u_lo); }
    double spread_time(double u) const { return (u - u_star) / (u_hi - u_star); }
    double alpha(double u) const { return ramp(gather_time(u)); }
    double offset(double u) const { return gap - (gap - gap_end) * alpha(u); }
};

// alpha(u) * x - offset(u) in the box-local frame, x in [0, a].
inline double gathering_profile(const StageParams& st, double u, double x) {
    if (u < st.u_lo || u > st.u_star) throw std::out_of_range("u outside the gathering sub-stage");
    if (x < 0.0 || x > st.a) throw std::out_of_range("x outside the tooth [0, a]");
    return st.alpha(u) * x - st.offset(u);
}

struct TipState {
    double x;       // column position along k (box-local, tooth apex at a)
    double extent;  // column top along k_next
};

inline TipState spreading_tip(const StageParams& st, double u) {
    if (u < st.u_star || u > st.u_hi) throw std::out_of_range("u outside the spreading sub-stage");
    const double beta = ramp(st.spread_time(u));
    TipState t;
    t.x = st.a - lerp(st.tip_start, st.tip_end, beta);
    t.extent = lerp(st.a - st.tip_start + st.column0, st.b, beta);
    return t;
}

class StagedModel : public Model {
public:
    StagedModel(BoxTree tree, StagedConfig cfg = {}) : tree_(std::move(tree)), cfg_(cfg) {
        cfg_.validate();
        build();
    }

    int in_dim() const override { return 2; }
    int out_dim() const override { return d_; }
    std::string name() const override { return "staged2p"; }

    Vec value(const Vec& w) const override {
        Vec out = Vec::Zero(d_);
        eval_into(w[0], w[1], out.data());
        return out;
    }

    const BoxTree& tree() const { return tree_; }
    const StagedConfig& config() const { return cfg_; }
    const std::vector<StageParams>& stages() const { return params_; }
    double u1() const { return u1_; }
    double terminal_u() const { return ub_.back(); }
    // u_n for n = 1..depth
    double stage_boundary(int n) const { return ub_[n - 1]; }
    double v_spacing() const { return dv_; }
    double v_begin() const { return v0_ - 0.5 * dv_; }
    double v_end() const { return v0_ + (np_ - 0.5) * dv_; }
    int num_points() const { return np_; }
    const Vec& initial_offset() const { return a_; }

    // v-interval carrying the piece of level-n box idx.
    std::pair<double, double> piece_v_range(int n, int idx) const {
        const Range& r = ranges_[n - 1][idx];
        return {v0_ + (r.start - 0.5) * dv_, v0_ + (r.start + r.count - 0.5) * dv_};
    }
    int piece_orientation(int n, int idx) const { return ranges_[n - 1][idx].orient; }

    // Control point i at parameter u (i may lie outside [0, P)); dx receives d/du when given.
    void control_point(int i, double u, double* x, double* dx = nullptr) const {
        if (i < 0 || i >= np_ || u <= u1_) {
            initial_point(i, u, x, dx);
            return;
        }
        if (dx)
            for (int j = 0; j < d_; ++j) dx[j] = 0.0;
        const int last = static_cast<int>(ub_.size());
        if (u >= ub_.back()) {
            copy_row(last, i, x);
            return;
        }
        int m = static_cast<int>(std::upper_bound(ub_.begin(), ub_.end(), u) - ub_.begin());
        // ub_[m-1] <= u < ub_[m]; stage m (1-based) moves table m to table m+1
        copy_row(m, i, x);
        const Motion& mv = motion_[m - 1][i];
        if (mv.box < 0) return;
        const StageParams& sp = params_[m - 1];
        const Frame& fr = frames_[m - 1][mv.box];
        double p, q, dp, dq;
        if (u <= sp.u_star) {
            const double al = sp.alpha(u);
            const double dal = ramp_deriv(sp.gather_time(u)) / (sp.u_star - sp.u_lo);
            p = lerp(mv.p0, mv.p1, al);
            dp = (mv.p1 - mv.p0) * dal;
            const double lift = tooth(p, mv.tip, sp.a) + mv.q1 - tooth(mv.p1, mv.tip, sp.a);
            q = al * lift - sp.offset(u);
            const double slope = p > mv.tip ? -1.0 : (p < mv.tip ? 1.0 : 0.0);
            dq = dal * lift + al * slope * dp + (sp.gap - sp.gap_end) * dal;
        } else {
            const double be = ramp(sp.spread_time(u));
            const double dbe = ramp_deriv(sp.spread_time(u)) / (sp.u_hi - sp.u_star);
            p = lerp(mv.p1, mv.p2, be);
            q = lerp(mv.q1 - sp.gap_end, mv.q2, be);
            dp = (mv.p2 - mv.p1) * dbe;
            dq = (mv.q2 - mv.q1 + sp.gap_end) * dbe;
        }
        x[fr.k] = fr.orient > 0 ? fr.lo_k + p : fr.hi_k - p;
        x[fr.kn] = fr.side == Side::low ? fr.lo_kn + q : fr.hi_kn - q;
        if (dx) {
            dx[fr.k] = fr.orient > 0 ? dp : -dp;
            dx[fr.kn] = fr.side == Side::low ? dq : -dq;
        }
    }

    // Value and, when du/dv are given, the partial derivatives at (u, v).
    void eval_into(double u, double v, double* out, double* du = nullptr, double* dvv = nullptr) const {
        const double xs = (v - v0_) / dv_;
        const double fl = std::floor(xs);
        const int i0 = static_cast<int>(fl);
        const double t = xs - fl, t2 = t * t, t3 = t2 * t;
        const double wts[4] = {(1 - t) * (1 - t) * (1 - t) / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0,
                               (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0};
        const double dw[4] = {-(1 - t) * (1 - t) / 2.0, (3 * t2 - 4 * t) / 2.0,
                              (-3 * t2 + 2 * t + 1) / 2.0, t2 / 2.0};
        double buf[32];
        std::vector<double> heap;
        double* x = buf;
        if (d_ > 16) {
            heap.resize(2 * d_);
            x = heap.data();
        }
        double* dx = x + d_;
        for (int j = 0; j < d_; ++j) out[j] = 0.0;
        if (du)
            for (int j = 0; j < d_; ++j) du[j] = dvv[j] = 0.0;
        for (int r = 0; r < 4; ++r) {
            control_point(i0 - 1 + r, u, x, du ? dx : nullptr);
            for (int j = 0; j < d_; ++j) out[j] += wts[r] * x[j];
            if (du)
                for (int j = 0; j < d_; ++j) {
                    du[j] += wts[r] * dx[j];
                    dvv[j] += dw[r] * x[j] / dv_;
                }
        }
    }

    Mat jacobian(const Vec& w) const override {
        Mat J(d_, 2);
        Vec x(d_);
        eval_into(w[0], w[1], x.data(), J.col(0).data(), J.col(1).data());
        return J;
    }

    // Control-point positions at u_n (n = 1..depth).
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
    table(int n) const {
        return {tables_[n - 1].data(), np_, d_};
    }

private:
    struct Frame {
        int k = 0, kn = 0;
        double lo_k = 0, hi_k = 0, lo_kn = 0, hi_kn = 0;
        int orient = 1;
        Side side = Side::high;
    };
    struct Motion {
        int box = -1;  // -1: frozen during this stage
        double tip = 0;
        double p0 = 0, p1 = 0, q1 = 0, p2 = 0, q2 = 0;
    };
    struct Range {
        int start = 0, count = 0, orient = 1;
    };

    static double tooth(double p, double tip, double h) { return h - std::abs(p - tip); }

    void copy_row(int n, int i, double* x) const {
        const double* r = tables_[n - 1].data() + static_cast<std::size_t>(i) * d_;
        for (int j = 0; j < d_; ++j) x[j] = r[j];
    }

    void initial_point(int i, double u, double* x, double* dx = nullptr) const {
        const double s = u < u1_ ? 1.0 - u / u1_ : 0.0;
        for (int j = 0; j < d_; ++j) x[j] = a_[j] + s * dir_[j];
        x[k1_] = v0_ + i * dv_;
        if (dx)
            for (int j = 0; j < d_; ++j) dx[j] = u < u1_ ? -dir_[j] / u1_ : 0.0;
    }

    int points_at_level(int n) const { return counts_[n - 1]; }

    void build();
    void layout_block(int m, int box, const Range& r);

    BoxTree tree_;
    StagedConfig cfg_;
    int d_ = 2, np_ = 0, k1_ = 0;
    double dv_ = 1.0, v0_ = 0.0, u1_ = 1.0;
    Vec a_, dir_;
    std::vector<int> counts_;                 // points per box at each level
    std::vector<double> ub_;                  // u_1..u_N
    std::vector<StageParams> params_;         // stages 1..N-1
    std::vector<std::vector<Frame>> frames_;  // per stage, per level-m box
    std::vector<std::vector<Range>> ranges_;  // per level, per box
    std::vector<std::vector<Motion>> motion_; // per stage, per point
    std::vector<std::vector<double>> tables_; // per level, P x d row-major
};

inline void StagedModel::build() {
    const SplitSchedule& sch = tree_.schedule;
    d_ = sch.d;
    const int N = sch.depth;
    k1_ = sch.k_of_level(1);

    // points per box, bottom-up
    counts_.assign(N, 0);
    counts_[N - 1] = cfg_.leaf_points;
    for (int n = N - 1; n >= 1; --n) {
        const int s = sch.stages[n - 1].s;
        counts_[n - 1] = s * (2 * (cfg_.diag_points + cfg_.vert_points + counts_[n]) + cfg_.cap_points);
    }
    np_ = counts_[0];
    const Box& root = tree_.root();
    dv_ = root.extent(k1_) / np_;
    v0_ = root.lo[k1_] + 0.5 * dv_;

    // initial offsets: every coordinate but k1 sits just outside the root face
    const std::vector<Vec> ext = level_extents(sch);
    const double h1 = N > 1 ? ext[0][sch.stages[0].k] / (2.0 * sch.stages[0].s) : root.extent(k1_);
    const double g0 = cfg_.initial_gap_ratio * h1;
    a_ = Vec::Zero(d_);
    dir_ = Vec::Zero(d_);
    for (int j = 0; j < d_; ++j) {
        if (j == k1_) continue;
        const bool high = tree_.nodes[0][0].side[j] == Side::high;
        a_[j] = high ? root.hi[j] + g0 : root.lo[j] - g0;
        dir_[j] = high ? 1.0 : -1.0;
    }
    u1_ = cfg_.initial_stretch;
    ub_.assign(1, u1_);

    // table at u_1
    tables_.assign(N, std::vector<double>(static_cast<std::size_t>(np_) * d_));
    for (int i = 0; i < np_; ++i) initial_point(i, u1_, tables_[0].data() + static_cast<std::size_t>(i) * d_);

    ranges_.assign(N, {});
    ranges_[0] = {Range{0, np_, 1}};
    for (int n = 2; n <= N; ++n) ranges_[n - 1].resize(tree_.levels[n - 1].size());

    params_.clear();
    frames_.assign(N - 1, {});
    motion_.assign(N - 1, std::vector<Motion>(np_));
    for (int m = 1; m < N; ++m) {
        const StageSpec& sp = sch.stages[m - 1];
        const int kn = sch.k_of_level(m + 1);
        const Vec& e = ext[m - 1];
        StageParams st;
        st.n = m;
        st.k = sp.k;
        st.k_next = kn;
        st.lambda = sp.lambda;
        st.a = e[sp.k] / (2.0 * sp.s);
        st.b = e[kn];
        st.eps = sp.eps;
        st.tip_start = cfg_.tip_start_ratio * sp.eps;
        st.tip_end = cfg_.tip_end_ratio * sp.eps;
        st.column0 = cfg_.column_ratio * st.a;

        // frames and measured gap
        auto& frs = frames_[m - 1];
        frs.resize(tree_.levels[m - 1].size());
        double gap_sum = 0.0, gap_min = 1e300, gap_max = -1e300;
        long gap_cnt = 0;
        for (std::size_t bi = 0; bi < frs.size(); ++bi) {
            const Box& b = tree_.levels[m - 1][bi];
            Frame& fr = frs[bi];
            fr.k = sp.k;
            fr.kn = kn;
            fr.lo_k = b.lo[sp.k];
            fr.hi_k = b.hi[sp.k];
            fr.lo_kn = b.lo[kn];
            fr.hi_kn = b.hi[kn];
            fr.orient = ranges_[m - 1][bi].orient;
            fr.side = tree_.nodes[m - 1][bi].side[kn];
            const Range& r = ranges_[m - 1][bi];
            for (int i = r.start; i < r.start + r.count; ++i) {
                const double* x = tables_[m - 1].data() + static_cast<std::size_t>(i) * d_;
                const double q0 = fr.side == Side::low ? x[kn] - fr.lo_kn : fr.hi_kn - x[kn];
                gap_sum += -q0;
                gap_min = std::min(gap_min, -q0);
                gap_max = std::max(gap_max, -q0);
                ++gap_cnt;
            }
        }
        st.gap = gap_sum / gap_cnt;
        if (!(gap_min > 0.0) || gap_max - gap_min > 1e-9 * (1.0 + std::abs(st.gap)))
            throw GeometryError("stage " + std::to_string(m) + ": piece offsets are not uniform", m);
        st.gap_end = cfg_.offset_end_ratio * st.gap;

        // stage length from the slowest point speed
        const double sp_piece = (e[sp.k] / counts_[m - 1]) / dv_;
        const double sp_col = ((st.b - 2.0 * st.a) / counts_[m]) / dv_;
        const double du = cfg_.stretch * sp.lambda *
                          std::max(st.a / sp_piece, st.b / std::min(sp_piece, sp_col));
        st.u_lo = ub_.back();
        st.u_hi = st.u_lo + du;
        st.u_star = 0.5 * (st.u_lo + st.u_hi);
        params_.push_back(st);
        ub_.push_back(st.u_hi);

        for (std::size_t bi = 0; bi < frs.size(); ++bi) layout_block(m, static_cast<int>(bi), ranges_[m - 1][bi]);

        // table at u_{m+1}
        auto& nxt = tables_[m];
        nxt = tables_[m - 1];
        for (int i = 0; i < np_; ++i) {
            const Motion& mv = motion_[m - 1][i];
            if (mv.box < 0) continue;
            const Frame& fr = frs[mv.box];
            double* x = nxt.data() + static_cast<std::size_t>(i) * d_;
            x[fr.k] = fr.orient > 0 ? fr.lo_k + mv.p2 : fr.hi_k - mv.p2;
            x[fr.kn] = fr.side == Side::low ? fr.lo_kn + mv.q2 : fr.hi_kn - mv.q2;
        }
    }
}

inline void StagedModel::layout_block(int m, int box, const Range& r) {
    const SplitSchedule& sch = tree_.schedule;
    const StageParams& st = params_[m - 1];
    const Frame& fr = frames_[m - 1][box];
    const int s = sch.stages[m - 1].s;
    const int Sd = cfg_.diag_points, Sv = cfg_.vert_points, C = cfg_.cap_points;
    const int nc = counts_[m];
    const int B = 2 * (Sd + Sv + nc) + C;
    const double h = st.a, Lq = st.b;
    const double D0 = st.tip_start, DE = st.tip_end, l0 = st.column0;
    const double hh = h - D0;
    const double qb = hh - st.gap_end;  // column foot after spreading
    auto& mot = motion_[m - 1];
    // direction of x_kn as q grows
    const int qdir = fr.side == Side::low ? 1 : -1;

    for (int j = 1; j <= s; ++j) {
        const double T = (2 * j - 1) * h;
        const int base = r.start + (j - 1) * B;
        // left half in material order; right half mirrors it
        std::vector<Motion> half;
        half.reserve(Sd + Sv + nc);
        for (int i = 0; i < Sd; ++i) {
            const double t = (i + 0.5) / Sd;
            Motion mv;
            mv.p1 = T - h + t * hh;
            mv.q1 = t * hh;
            mv.p2 = mv.p1;
            mv.q2 = mv.q1 - st.gap_end;
            half.push_back(mv);
        }
        for (int i = 0; i < Sv + nc; ++i) {
            const double q2 = i < Sv ? qb + (i + 0.5) / Sv * (2.0 * h - qb)
                                     : 2.0 * h + (i - Sv + 0.5) * (Lq - 2.0 * h) / nc;
            const double z = (q2 - qb) / (Lq - qb);
            Motion mv;
            mv.p1 = T - D0;
            mv.q1 = hh + l0 * z;
            mv.p2 = T - DE;
            mv.q2 = q2;
            half.push_back(mv);
        }
        const int nh = static_cast<int>(half.size());
        for (int i = 0; i < nh; ++i) {
            Motion mv = half[i];
            mv.box = box;
            mv.tip = T;
            mot[base + i] = mv;
            Motion mr = half[nh - 1 - i];
            mr.box = box;
            mr.tip = T;
            mr.p1 = 2 * T - mr.p1;
            mr.p2 = 2 * T - mr.p2;
            mot[base + nh + C + i] = mr;
        }
        for (int i = 0; i < C; ++i) {
            const double th = std::numbers::pi * (1.0 - (i + 1.0) / (C + 1.0));
            Motion mv;
            mv.box = box;
            mv.tip = T;
            mv.p1 = T + D0 * std::cos(th);
            mv.q1 = hh + l0 + D0 * std::sin(th);
            mv.p2 = T + DE * std::cos(th);
            mv.q2 = Lq + DE * std::sin(th);
            mot[base + nh + i] = mv;
        }
        for (int i = base; i < base + B; ++i) {
            const double* x = tables_[m - 1].data() + static_cast<std::size_t>(i) * d_;
            mot[i].p0 = fr.orient > 0 ? x[fr.k] - fr.lo_k : fr.hi_k - x[fr.k];
        }

        // children: material-left child sits on the left column, traversed upward
        const int beta_l = fr.orient > 0 ? 2 * j - 1 : 2 * s - 2 * j + 2;
        const int beta_r = fr.orient > 0 ? 2 * j : 2 * s - 2 * j + 1;
        const int cl = tree_.child_index(m, box, beta_l);
        const int cr = tree_.child_index(m, box, beta_r);
        ranges_[m][cl] = Range{base + Sd + Sv, nc, qdir};
        ranges_[m][cr] = Range{base + nh + C, nc, -qdir};
    }
}

struct CurvePoint {
    double v;
    Vec x;
};

inline std::vector<CurvePoint> level_curve(const StagedModel& m, double u, int n_samples,
                                           double margin = 0.0) {
    if (n_samples < 2) throw std::invalid_argument("need at least two samples");
    const double a = m.v_begin() - margin, b = m.v_end() + margin;
    std::vector<CurvePoint> out;
    out.reserve(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        const double v = a + (b - a) * i / (n_samples - 1);
        out.push_back({v, m.value(Vec{{u, v}})});
    }
    return out;
}

inline void write_level_curve_csv(std::ostream& os, double u, const std::vector<CurvePoint>& pts) {
    if (pts.empty()) return;
    os << "u,v";
    for (int j = 0; j < pts.front().x.size(); ++j) os << ",x" << j + 1;
    os << '\n';
    os.precision(12);
    for (const auto& p : pts) {
        os << u << ',' << p.v;
        for (int j = 0; j < p.x.size(); ++j) os << ',' << p.x[j];
        os << '\n';
    }
}

struct NearestResult {
    double v = 0;
    double distance = 0;
};

// Grid search over the active v-range at a quarter knot spacing, then golden-section refinement.
inline NearestResult nearest_on_level_curve(const StagedModel& m, double u, const Vec& f) {
    const double step = 0.25 * m.v_spacing();
    const double a = m.v_begin() - 4 * m.v_spacing(), b = m.v_end() + 4 * m.v_spacing();
    const int n = static_cast<int>(std::ceil((b - a) / step)) + 1;
    Vec x(m.out_dim());
    auto dist2 = [&](double v) {
        m.eval_into(u, v, x.data());
        return (x - f).squaredNorm();
    };
    double best = 1e300, bv = a;
    for (int i = 0; i < n; ++i) {
        const double v = a + i * step;
        const double d2 = dist2(v);
        if (d2 < best) {
            best = d2;
            bv = v;
        }
    }
    double lo = bv - step, hi = bv + step;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c1 = hi - gr * (hi - lo), c2 = lo + gr * (hi - lo);
    double f1 = dist2(c1), f2 = dist2(c2);
    for (int it = 0; it < 80 && hi - lo > 1e-14 * (1.0 + std::abs(bv)); ++it) {
        if (f1 < f2) {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - gr * (hi - lo);
            f1 = dist2(c1);
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + gr * (hi - lo);
            f2 = dist2(c2);
        }
    }
    const double vr = f1 < f2 ? c1 : c2;
    const double dr = std::min(f1, f2);
    if (dr < best) return {vr, std::sqrt(dr)};
    return {bv, std::sqrt(best)};
}

struct BranchAlignment {
    int box = 0;
    double offset = 0;        // max distance of the segment from the designated edge line
    double straightness = 0;  // max deviation across the segment of the off-axis coordinates
    double span_lo = 0, span_hi = 0;
    bool ok = true;
};

struct AlignmentReport {
    int level = 0;
    double tolerance = 0;
    double max_offset = 0;
    double max_straightness = 0;
    int flagged = 0;
    std::vector<BranchAlignment> branches;
};

// Distance tolerance for the aligned segments of level n: the largest piece offset seen there,
// in every off-axis coordinate at once.
inline double alignment_tolerance(const StagedModel& m, int n) {
    double tol = 0.0;
    const Vec& a = m.initial_offset();
    const Box& root = m.tree().root();
    for (int j = 0; j < a.size(); ++j)
        if (j != m.tree().schedule.k_of_level(1))
            tol = std::max(tol, std::min(std::abs(a[j] - root.lo[j]), std::abs(a[j] - root.hi[j])));
    for (int i = 1; i < n; ++i) tol = std::max(tol, m.stages()[i - 1].eps);
    return 1.01 * std::sqrt(static_cast<double>(a.size() - 1)) * tol;
}

// Checks each level-n box against the level curve at u_n: the interior of its piece must be a
// straight segment along x_{k_n}, close to the box edge selected by the box's aligned faces, and
// spanning the box extent along x_{k_n} up to the spline end effects.
inline AlignmentReport alignment_check(const StagedModel& m, const BoxTree& tree, int n,
                                       double tolerance = -1.0) {
    AlignmentReport rep;
    rep.level = n;
    rep.tolerance = tolerance > 0 ? tolerance : alignment_tolerance(m, n);
    const double u = m.stage_boundary(n);
    const int k = tree.schedule.k_of_level(n);
    const int d = m.out_dim();
    const double dv = m.v_spacing();
    for (std::size_t bi = 0; bi < tree.levels[n - 1].size(); ++bi) {
        const Box& b = tree.levels[n - 1][bi];
        const auto& sides = tree.nodes[n - 1][bi].side;
        auto [va, vb] = m.piece_v_range(n, static_cast<int>(bi));
        BranchAlignment br;
        br.box = static_cast<int>(bi);
        const double lo = va + 2.5 * dv, hi = vb - 2.5 * dv;
        const int ns = 64;
        Vec first;
        br.span_lo = 1e300;
        br.span_hi = -1e300;
        for (int i = 0; i <= ns; ++i) {
            const double v = lo + (hi - lo) * i / ns;
            Vec x = m.value(Vec{{u, v}});
            if (i == 0) first = x;
            double off2 = 0.0, dev = 0.0;
            for (int j = 0; j < d; ++j) {
                if (j == k) continue;
                const double edge = sides[j] == Side::high ? b.hi[j] : b.lo[j];
                off2 += (x[j] - edge) * (x[j] - edge);
                dev = std::max(dev, std::abs(x[j] - first[j]));
            }
            br.offset = std::max(br.offset, std::sqrt(off2));
            br.straightness = std::max(br.straightness, dev);
            br.span_lo = std::min(br.span_lo, x[k]);
            br.span_hi = std::max(br.span_hi, x[k]);
        }
        const double slack = 3.0 * b.extent(k) / std::max(1, (int)std::round((vb - va) / dv));
        br.ok = br.offset <= rep.tolerance && br.straightness <= 1e-9 * (1.0 + b.diameter()) &&
                br.span_lo <= b.lo[k] + slack && br.span_hi >= b.hi[k] - slack &&
                br.span_lo >= b.lo[k] - slack && br.span_hi <= b.hi[k] + slack;
        rep.max_offset = std::max(rep.max_offset, br.offset);
        rep.max_straightness = std::max(rep.max_straightness, br.straightness);
        if (!br.ok) ++rep.flagged;
        rep.branches.push_back(br);
    }
    return rep;
}

}  // namespace gfl
