// Monte-Carlo and grid estimators: learnable fractions, barrier certificates,
// sphere sweeps, image cube occupancy.
#pragma once
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <thread>
#include <unordered_set>
#include <vector>

#include "boxtree.hpp"
#include "gradflow.hpp"
#include "json.hpp"
#include "models.hpp"
#include "sequences.hpp"

namespace gfl {

struct Interval {
    double lo = 0, hi = 1;
};

inline Interval wilson_interval(long successes, long n, double z = 1.959963984540054) {
    if (n <= 0) return {0.0, 1.0};
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double den = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / den;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / den;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

constexpr double kZ95 = 1.959963984540054;
constexpr double kZ99 = 2.5758293035489004;

struct FractionEstimate {
    long n_samples = 0;
    long n_success = 0;
    double estimate = 0;
    Interval ci;
    std::map<std::string, long> verdicts;

    double half_width() const { return 0.5 * (ci.hi - ci.lo); }
};

inline FractionEstimate make_estimate(long successes, long n, double z = kZ95) {
    FractionEstimate e;
    e.n_samples = n;
    e.n_success = successes;
    e.estimate = n > 0 ? static_cast<double>(successes) / n : 0.0;
    e.ci = wilson_interval(successes, n, z);
    return e;
}

inline nlohmann::json to_json(const FractionEstimate& e) {
    return {{"n_samples", e.n_samples}, {"n_success", e.n_success}, {"estimate", e.estimate},
            {"ci95", {e.ci.lo, e.ci.hi}}, {"verdicts", e.verdicts}};
}

using Rng = std::mt19937_64;
using TargetSampler = std::function<Vec(Rng&)>;

inline TargetSampler uniform_sampler(Box b) {
    return [b](Rng& rng) { return sample_uniform(b, rng); };
}

inline TargetSampler gaussian_sampler(Vec mean, double sigma) {
    return [mean, sigma](Rng& rng) {
        std::normal_distribution<double> g(0.0, sigma);
        Vec p = mean;
        for (int i = 0; i < p.size(); ++i) p[i] += g(rng);
        return p;
    };
}

inline TargetSampler f0_sampler(std::shared_ptr<const BoxTree> tree) {
    return [tree](Rng& rng) { return sample_f0(*tree, rng); };
}

// Runs job(i) for i in [0,n) on up to `threads` workers; results are written by index.
template <class Job>
void parallel_for(long n, int threads, Job&& job) {
    if (threads <= 1 || n <= 1) {
        for (long i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (long i = next++; i < n; i = next++) job(i);
        });
    for (auto& th : pool) th.join();
}

inline int default_threads() {
    const unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : static_cast<int>(h);
}

struct TargetRecord {
    Vec f;
    Verdict verdict = Verdict::Budget;
    double final_loss = 0;
    double min_loss = 0;
    double t_end = 0;
    long steps = 0;
    long u_violations = 0;
    double max_uptick = 0;
    bool bound_ok = true;
    Vec w_end;
};

inline nlohmann::json to_json(const TargetRecord& r) {
    return {{"target", std::vector<double>(r.f.data(), r.f.data() + r.f.size())},
            {"verdict", verdict_name(r.verdict)},
            {"final_loss", r.final_loss},
            {"min_loss", r.min_loss},
            {"t_end", r.t_end},
            {"steps", r.steps},
            {"u_violations", r.u_violations},
            {"max_loss_uptick", r.max_uptick},
            {"bound_ok", r.bound_ok},
            {"w_end", std::vector<double>(r.w_end.data(), r.w_end.data() + r.w_end.size())}};
}

inline TargetRecord run_target(const Model& m, const Vec& f, const GfOptions& opt) {
    Trajectory tr = integrate(m, f, opt);
    TargetRecord r;
    r.f = f;
    r.verdict = tr.verdict;
    r.final_loss = tr.back().loss;
    r.min_loss = tr.min_loss;
    r.t_end = tr.t_end;
    r.steps = tr.steps;
    r.u_violations = m.in_dim() == 2 ? static_cast<long>(u_monotonicity(tr).size()) : 0;
    r.max_uptick = max_loss_uptick(tr);
    r.bound_ok = bound_check(tr, f, m).ok;
    r.w_end = tr.back().w;
    return r;
}

struct LearnableResult {
    FractionEstimate estimate;
    std::vector<TargetRecord> records;
};

// Targets are drawn sequentially from rng, so results do not depend on the thread count.
inline LearnableResult learnable_fraction(const Model& m, const TargetSampler& sampler, long n,
                                          const GfOptions& opt, Rng& rng,
                                          int threads = default_threads()) {
    std::vector<Vec> targets;
    targets.reserve(n);
    for (long i = 0; i < n; ++i) targets.push_back(sampler(rng));
    LearnableResult res;
    res.records.resize(n);
    parallel_for(n, threads, [&](long i) { res.records[i] = run_target(m, targets[i], opt); });
    long ok = 0;
    std::map<std::string, long> counts;
    for (const auto& r : res.records) {
        ok += r.verdict == Verdict::Learnable;
        ++counts[verdict_name(r.verdict)];
    }
    res.estimate = make_estimate(ok, n);
    res.estimate.verdicts = counts;
    return res;
}

struct BarrierReport {
    double radius = 0;
    double base_loss = 0;    // L(0)
    double min_excess = 0;   // min over the sphere grid of L(w) - L(0)
    Vec argmin;
    bool certified = false;  // min_excess > 0
    // gradient-flow cross-check
    Verdict verdict = Verdict::Budget;
    double max_w_norm = 0;
    bool stayed_inside = false;
    double terminal_loss = 0;
    double loss_lower_bound = 0;  // 0.5*(l - sup_{|w|<=r} |Phi(w)-Phi(0)|)^2, clipped at 0
};

inline nlohmann::json to_json(const BarrierReport& b) {
    return {{"radius", b.radius},           {"base_loss", b.base_loss},
            {"min_excess", b.min_excess},   {"certified", b.certified},
            {"verdict", verdict_name(b.verdict)}, {"max_w_norm", b.max_w_norm},
            {"stayed_inside", b.stayed_inside}, {"terminal_loss", b.terminal_loss},
            {"loss_lower_bound", b.loss_lower_bound}};
}

inline double barrier_radius(double initial_loss) { return std::cbrt(initial_loss); }

inline BarrierReport barrier_certificate(const Model& m, const Vec& f0, double r, int grid_size,
                                         const GfOptions& opt) {
    const int W = m.in_dim();
    BarrierReport rep;
    rep.radius = r;
    const Vec zero = Vec::Zero(W);
    const Vec phi0 = m.value(zero);
    rep.base_loss = 0.5 * (f0 - phi0).squaredNorm();
    std::vector<Vec> dirs;
    if (W == 1)
        dirs = {Vec::Ones(1), -Vec::Ones(1)};
    else
        dirs = sphere_grid(W - 1, grid_size);
    rep.min_excess = std::numeric_limits<double>::infinity();
    double sup_disp = 0.0;
    for (const Vec& y : dirs) {
        const Vec w = r * y;
        const Vec x = m.value(w);
        const double ex = 0.5 * (f0 - x).squaredNorm() - rep.base_loss;
        if (ex < rep.min_excess) {
            rep.min_excess = ex;
            rep.argmin = w;
        }
        for (double s : {0.25, 0.5, 0.75, 1.0}) sup_disp = std::max(sup_disp, (m.value(s * w) - phi0).norm());
    }
    rep.certified = rep.min_excess > 0.0;
    const double l = (f0 - phi0).norm();
    rep.loss_lower_bound = l > sup_disp ? 0.5 * (l - sup_disp) * (l - sup_disp) : 0.0;

    Trajectory tr = integrate(m, f0, opt);
    rep.verdict = tr.verdict;
    rep.max_w_norm = tr.max_w_norm;
    rep.stayed_inside = tr.max_w_norm < r;
    rep.terminal_loss = tr.back().loss;
    return rep;
}

struct SweepReport {
    double max_loss = 0;
    Vec witness_y;
    Vec witness_target;
    double bound = 0;  // 0.5 * (l/2)^2
    std::vector<double> losses;
    std::vector<Vec> grid;
};

// Each target runs to the common horizon opt.t_max: the antipodal argument needs one fixed time.
inline SweepReport sphere_sweep(const Model& m, const SphereEmbedding& g, int grid_n, GfOptions opt,
                                int threads = default_threads()) {
    opt.stop_on_success = false;
    opt.dwell_fraction = 2.0;
    SweepReport rep;
    rep.grid = sphere_grid(g.ws, grid_n);
    const double l = g.antipodal_length();
    rep.bound = 0.5 * (0.5 * l) * (0.5 * l);
    rep.losses.assign(rep.grid.size(), 0.0);
    parallel_for(static_cast<long>(rep.grid.size()), threads, [&](long i) {
        const Vec f = g(rep.grid[i]);
        rep.losses[i] = integrate(m, f, opt).back().loss;
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < rep.losses.size(); ++i)
        if (rep.losses[i] > rep.losses[best]) best = i;
    rep.max_loss = rep.losses[best];
    rep.witness_y = rep.grid[best];
    rep.witness_target = g(rep.grid[best]);
    return rep;
}

struct OccupancyOptions {
    Vec cube_lo;            // lower corner of the bounding cube
    double cube_side = 1.0;
    Vec offset;             // grid offset in [0, 1/N)^d as a fraction of the cube side; empty = 0
    // parameter domain: fixed box, or [-R,R]^W with R doubling from r0
    bool expanding = true;
    Vec param_lo, param_hi;  // used when !expanding
    double r0 = 1.0;
    int max_doublings = 16;
    double stable_rel = 0.01;
    long max_samples = 50000000;
};

struct OccupancyResult {
    int N = 0;
    long occupied = 0;
    long budget = 0;  // parameter samples used
    double final_radius = 0;
    Vec cube_lo;
    double cube_side = 1.0;

    double fraction(int d) const { return occupied / std::pow(static_cast<double>(N), d); }
};

namespace detail {
struct CellMarker {
    int N, d;
    Vec lo, shift;
    double side;
    std::unordered_set<long long> cells;

    void mark(const Vec& x) {
        long long key = 0;
        for (int j = 0; j < d; ++j) {
            const double t = (x[j] - lo[j]) / side + shift[j];
            if (!(t >= 0.0 && t < 1.0)) {
                if (t == 1.0 && shift[j] == 0.0) {
                    key = key * N + (N - 1);
                    continue;
                }
                return;
            }
            key = key * N + std::min(N - 1, static_cast<int>(t * N));
        }
        cells.insert(key);
    }
};
}  // namespace detail

// Marks grid cells of side cube_side/N hit by Phi at `budget` low-discrepancy parameter samples
// (per unit R^W volume when expanding).
inline OccupancyResult occupancy(const Model& m, int N, long budget, const OccupancyOptions& oo) {
    if (N < 2) throw std::invalid_argument("grid resolution must be at least 2");
    const int d = m.out_dim(), W = m.in_dim();
    detail::CellMarker mk{N, d, oo.cube_lo.size() ? oo.cube_lo : Vec(Vec::Zero(d)),
                          oo.offset.size() ? oo.offset : Vec(Vec::Zero(d)), oo.cube_side, {}};
    OccupancyResult res;
    res.N = N;
    res.cube_lo = mk.lo;
    res.cube_side = oo.cube_side;
    unsigned long long idx = 0;
    auto sample_box = [&](const Vec& lo, const Vec& hi, long count) {
        for (long i = 0; i < count; ++i, ++idx) {
            Vec h = halton(idx, W);
            Vec w = lo + (hi - lo).cwiseProduct(h);
            mk.mark(m.value(w));
        }
        res.budget += count;
    };
    if (!oo.expanding) {
        sample_box(oo.param_lo, oo.param_hi, budget);
        res.occupied = static_cast<long>(mk.cells.size());
        return res;
    }
    double R = oo.r0;
    long prev = -1;
    long count = budget;
    for (int it = 0; it <= oo.max_doublings; ++it) {
        idx = 0;  // restart the sequence: each pass covers the whole box
        sample_box(Vec::Constant(W, -R), Vec::Constant(W, R), count);
        const long occ = static_cast<long>(mk.cells.size());
        res.final_radius = R;
        if (prev > 0 && std::abs(occ - prev) <= oo.stable_rel * prev) {
            prev = occ;
            break;
        }
        prev = occ;
        if (res.budget + count * (1L << W) > oo.max_samples) break;
        R *= 2.0;
        count *= (1L << W);
    }
    res.occupied = prev;
    return res;
}

struct ScalingResult {
    double slope = 0;
    double intercept = 0;
    std::vector<OccupancyResult> points;
};

// Least-squares slope of log(occupied) against log(N); budget_rule(N) gives the sample budget.
inline ScalingResult occupancy_scaling(const Model& m, const std::vector<int>& Ns,
                                       const std::function<long(int)>& budget_rule,
                                       const std::function<OccupancyOptions(int)>& options) {
    if (Ns.size() < 3) throw std::invalid_argument("need at least three resolutions");
    ScalingResult sr;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int N : Ns) {
        OccupancyResult r = occupancy(m, N, budget_rule(N), options(N));
        sr.points.push_back(r);
        const double x = std::log(static_cast<double>(N)), y = std::log(static_cast<double>(r.occupied));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(Ns.size());
    sr.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    sr.intercept = (sy - sr.slope * sx) / n;
    return sr;
}

struct DeltaRow {
    double delta = 0;
    FractionEstimate fraction;  // share of targets with terminal loss below delta
};

// Terminal losses are computed once; each delta just thresholds them.
inline std::vector<DeltaRow> trapped_fraction_vs_delta(const Model& m, const TargetSampler& sampler,
                                                       const std::vector<double>& deltas, long n,
                                                       GfOptions opt, Rng& rng,
                                                       std::vector<TargetRecord>* records = nullptr,
                                                       int threads = default_threads()) {
    for (std::size_t i = 1; i < deltas.size(); ++i)
        if (!(deltas[i] < deltas[i - 1])) throw std::invalid_argument("deltas must be decreasing");
    opt.delta_success = std::min(opt.delta_success, deltas.empty() ? 1.0 : deltas.back() * 1e-3);
    LearnableResult lr = learnable_fraction(m, sampler, n, opt, rng, threads);
    std::vector<DeltaRow> rows;
    for (double dl : deltas) {
        long c = 0;
        for (const auto& r : lr.records) c += r.final_loss < dl;
        rows.push_back({dl, make_estimate(c, n)});
    }
    if (records) *records = std::move(lr.records);
    return rows;
}

}  // namespace gfl
