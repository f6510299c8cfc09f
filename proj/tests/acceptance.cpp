// End-to-end acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <string>

#include "gfl/measure.hpp"
#include "gfl/model2p.hpp"
#include "gfl/models.hpp"

using namespace gfl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& what) {
    std::printf("criterion %d %s: %s\n", id, ok ? "PASS" : "FAIL", what.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// Loss monotonicity and the distance bound, pooled over every recorded trajectory.
struct Hygiene {
    long trajectories = 0;
    double max_uptick = 0;
    long bound_failures = 0;

    void add(const Trajectory& tr, const Vec& f, const Model& m) {
        ++trajectories;
        max_uptick = std::max(max_uptick, max_loss_uptick(tr));
        bound_failures += !bound_check(tr, f, m).ok;
    }
    void add(const std::vector<TargetRecord>& recs) {
        for (const auto& r : recs) {
            ++trajectories;
            max_uptick = std::max(max_uptick, r.max_uptick);
            bound_failures += !r.bound_ok;
        }
    }
};

GfOptions staged_options(const BoxTree& tree) {
    GfOptions o;
    const double leaf = leaf_diameter(tree.schedule);
    o.delta_success = 0.5 * leaf * leaf;
    o.t_max = 1e4;
    o.rel_tol = 1e-8;
    o.abs_tol = 1e-10;
    o.g_tol = 1e-10;
    o.max_steps = 200000;
    return o;
}

void criterion1(Hygiene& hy) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::normal_distribution<double> g;
    GfOptions opt;
    opt.rel_tol = 1e-11;
    opt.abs_tol = 1e-13;
    opt.t_max = 20;
    opt.stop_on_success = false;
    opt.dwell_fraction = 2;
    opt.record_stride = 1 << 30;
    for (int i = 0; i < 50; ++i) opt.t_grid.push_back(0.4 + (20.0 - 0.4) * i / 49);
    double worst = 0;
    long missing = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 8;
        auto m = make_linear_surjective(d, d, rng);
        Vec f(d);
        for (int i = 0; i < d; ++i) f[i] = g(rng);
        auto tr = integrate(m, f, opt);
        int hits = 0;
        for (const auto& s : tr.samples)
            if (std::find(opt.t_grid.begin(), opt.t_grid.end(), s.t) != opt.t_grid.end()) {
                ++hits;
                worst = std::max(worst, (s.w - m.closed_form(f, s.t)).norm() / (1 + f.norm()));
            }
        missing += 50 - hits;
        hy.add(tr, f, m);
    }
    const double secs = seconds_since(t0);
    report(1, worst <= 1e-6 && missing == 0 && secs <= 10,
           fmt("integrator oracle on 100 linear models (d<=8), max error/(1+|f|) %.3g <= 1e-6, "
               "%ld grid points missed, %.1f s <= 10 s",
               worst, missing, secs));
}

void criterion2(Hygiene& hy) {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (int d : {2, 3}) {
        auto tree = std::make_shared<BoxTree>(build_tree(default_schedule(d, 1.0, 4)));
        StagedModel m(*tree);
        GfOptions opt = staged_options(*tree);
        Rng rng(200 + d);
        auto lr = learnable_fraction(m, f0_sampler(tree), 500, opt, rng);
        long viol = 0, above = 0;
        for (const auto& r : lr.records)
            if (r.verdict == Verdict::Learnable) {
                viol += r.u_violations;
                above += r.final_loss > opt.delta_success;
            }
        hy.add(lr.records);
        ok = ok && lr.estimate.estimate >= 0.99 && viol == 0 && above == 0;
        detail += fmt("d=%d learnable %ld/500 (%.3f), u-violations %ld; ", d, lr.estimate.n_success,
                      lr.estimate.estimate, viol);
    }
    const double secs = seconds_since(t0);
    ok = ok && secs <= 600;
    report(2, ok, "F0 targets, depth 4: " + detail + fmt("%.1f s <= 600 s", secs));
}

void criterion3(Hygiene& hy) {
    const auto t0 = Clock::now();
    auto tree = std::make_shared<BoxTree>(build_tree(default_schedule(2, 1.0, 4)));
    StagedModel m(*tree);
    const double kept = kept_fraction(tree->schedule);
    Rng rng(300);
    long hits = 0;
    const long n_mc = 100000;
    for (long i = 0; i < n_mc; ++i) hits += locate(*tree, sample_uniform(tree->root(), rng)).reached_leaf(*tree);
    const auto mc = make_estimate(hits, n_mc, 2.5758293035489004);
    GfOptions opt = staged_options(*tree);
    opt.t_max = 400;
    opt.max_steps = 20000;
    auto lr = learnable_fraction(m, uniform_sampler(tree->root()), 2000, opt, rng);
    hy.add(lr.records);
    const double hw = lr.estimate.half_width();
    const bool ok = lr.estimate.estimate >= kept - hw && mc.ci.lo <= kept && kept <= mc.ci.hi;
    report(3, ok,
           fmt("uniform root targets: learnable %.4f >= kept %.5f - %.4f; Monte-Carlo 99%% CI [%.5f, %.5f] at 1e5 "
               "contains kept; %.1f s",
               lr.estimate.estimate, kept, hw, mc.ci.lo, mc.ci.hi, seconds_since(t0)));
}

void criterion4(Hygiene& hy) {
    const auto t0 = Clock::now();
    auto tree = build_tree(default_schedule(3, 1.0, 4));
    StagedModel m(tree);
    const double l = 0.1;
    const double r = barrier_radius(0.5 * l * l);
    auto bt = barrier_target(m, l);
    GfOptions opt;
    opt.t_max = 200;
    auto rep = barrier_certificate(m, bt.f0, r, 400, opt);
    hy.add(integrate(m, bt.f0, opt), bt.f0, m);
    Rng rng(400);
    const Vec f = sample_f0(tree, rng);
    auto ctl = barrier_certificate(m, f, r, 400, opt);
    const bool ok = rep.certified && rep.stayed_inside && rep.verdict == Verdict::Trapped && !ctl.certified;
    report(4, ok,
           fmt("barrier l=%.2g r=%.4f: min excess %.3g > 0, max|w| %.3g < r, verdict %s; control excess %.3g "
               "(certified=%s); %.1f s",
               l, r, rep.min_excess, rep.max_w_norm, verdict_name(rep.verdict), ctl.min_excess,
               ctl.certified ? "true" : "false", seconds_since(t0)));
}

void criterion5() {
    const auto t0 = Clock::now();
    auto tree = build_tree(default_schedule(3, 1.0, 4));
    StagedModel m(tree);
    const double rho = 0.3;
    auto g = sphere_embedding_axes(2, tree.root().center(), rho);
    GfOptions opt = staged_options(tree);
    opt.t_max = 50;
    opt.max_steps = 20000;
    auto rep = sphere_sweep(m, g, 1000, opt);
    const bool inside = tree.root().contains(Box(g.center - Vec::Constant(3, rho), g.center + Vec::Constant(3, rho)));
    const bool ok = rep.grid.size() >= 1000 && inside && rep.max_loss >= 0.9 * rep.bound;
    report(5, ok,
           fmt("sphere radius %.2g, %zu points, horizon %.0f: max terminal loss %.4g >= 0.9 * %.4g; %.1f s", rho,
               rep.grid.size(), opt.t_max, rep.max_loss, rep.bound, seconds_since(t0)));
}

void criterion6(Hygiene& hy) {
    const auto t0 = Clock::now();
    auto m = make_sqrt2_sin_curve();
    GfOptions opt;
    opt.t_max = 1000;
    Rng rng(600);
    std::vector<TargetRecord> recs;
    const std::vector<double> deltas = {1e-1, 1e-2, 1e-3, 1e-4};
    auto rows = trapped_fraction_vs_delta(m, uniform_sampler(Box(Vec::Constant(2, -1), Vec::Constant(2, 1))), deltas,
                                          1000, opt, rng, &recs);
    hy.add(recs);
    bool decreasing = true;
    std::string fr;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i && !(rows[i].fraction.estimate < rows[i - 1].fraction.estimate)) decreasing = false;
        fr += fmt("%s%.3f", i ? ", " : "", rows[i].fraction.estimate);
    }
    const Vec f{{0.6, 0.37}};
    auto tr = integrate(m, f, opt);
    hy.add(tr, f, m);
    report(6, decreasing && tr.verdict == Verdict::Trapped,
           fmt("sin curve, 1000 targets: fraction below delta {%s} strictly decreasing; (0.6, 0.37) %s at loss %.4g; "
               "%.1f s",
               fr.c_str(), verdict_name(tr.verdict), tr.back().loss, seconds_since(t0)));
}

// Cells [i/N,(i+1)/N) x [j/N,(j+1)/N) met by (x, x^2), x in [0,1): i^2 < (j+1)N and jN < (i+1)^2.
long parabola_raster(int N) {
    long c = 0;
    for (long i = 0; i < N; ++i)
        for (long j = 0; j < N; ++j) c += i * i < (j + 1) * N && j * N < (i + 1) * (i + 1);
    return c;
}

void criterion7() {
    const auto t0 = Clock::now();
    auto parabola = make_parabola();
    Rng rng(700);
    std::uniform_real_distribution<double> U(0, 1);
    auto sr = occupancy_scaling(
        parabola, {8, 16, 32, 64, 128}, [](int N) { return 200L * N; },
        [&](int N) {
            OccupancyOptions o;
            o.cube_lo = Vec::Constant(2, -1);
            o.cube_side = 2;
            o.offset = Vec{{U(rng) / N, U(rng) / N}};
            return o;
        });
    auto sinm = make_sqrt2_sin_curve();
    OccupancyOptions so;
    so.cube_lo = Vec::Constant(2, -1);
    so.cube_side = 2;
    auto fill = occupancy(sinm, 32, 1000, so);
    OccupancyOptions uo;
    uo.expanding = false;
    uo.param_lo = Vec::Zero(1);
    uo.param_hi = Vec::Ones(1);
    uo.cube_lo = Vec::Zero(2);
    uo.cube_side = 1;
    const long n10 = occupancy(parabola, 10, 200000, uo).occupied;
    const long oracle = parabola_raster(10);
    const bool ok = std::abs(sr.slope - 1.0) <= 0.2 && fill.fraction(2) > 0.95 && n10 == oracle;
    report(7, ok,
           fmt("parabola slope %.4f in [0.8, 1.2]; sin fill at N=32 %.4f > 0.95 (R=%.0f); parabola N=10 %ld cells, "
               "raster oracle %ld; %.1f s",
               sr.slope, fill.fraction(2), fill.final_radius, n10, oracle, seconds_since(t0)));
}

void criterion8(const Hygiene& hy) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(800);
    std::normal_distribution<double> g;
    std::vector<std::pair<std::string, std::shared_ptr<Model>>> zoo;
    zoo.emplace_back("linear", std::make_shared<LinearModel>(make_linear_surjective(4, 4, rng)));
    Mat A(3, 2);
    Vec b(3);
    for (int i = 0; i < 3; ++i) {
        b[i] = g(rng);
        for (int j = 0; j < 2; ++j) A(i, j) = g(rng);
    }
    zoo.emplace_back("sin-torus", std::make_shared<SinTorusModel>(make_sin_torus(A, b)));
    zoo.emplace_back("sqrt2-curve", std::make_shared<SinTorusModel>(make_sqrt2_sin_curve()));
    zoo.emplace_back("parabola", std::make_shared<OneParamModel>(make_parabola()));
    for (int d : {2, 3})
        zoo.emplace_back("staged d=" + std::to_string(d),
                         std::make_shared<StagedModel>(build_tree(default_schedule(d, 1.0, 4))));
    std::uniform_real_distribution<double> U(0, 1);
    double worst = 0;
    std::string per;
    for (const auto& [name, m] : zoo) {
        double w_model = 0;
        const auto* sm = dynamic_cast<const StagedModel*>(m.get());
        for (int p = 0; p < 1000; ++p) {
            Vec w(m->in_dim());
            if (sm) {
                w[0] = -0.2 + (1.1 * sm->terminal_u() + 0.2) * U(rng);
                w[1] = sm->v_begin() + (sm->v_end() - sm->v_begin()) * U(rng);
            } else {
                for (int j = 0; j < w.size(); ++j) w[j] = 4.0 * g(rng);
            }
            w_model = std::max(w_model, relative_max_error(m->jacobian(w), fd_jacobian(*m, w)));
        }
        worst = std::max(worst, w_model);
        per += fmt("%s%s %.2g", per.empty() ? "" : ", ", name.c_str(), w_model);
    }
    const bool ok = worst <= 1e-4 && hy.max_uptick <= 1e-9 && hy.bound_failures == 0;
    report(8, ok,
           fmt("Jacobian vs finite differences at 1000 probes per model {%s} <= 1e-4; over %ld trajectories max loss "
               "uptick %.3g <= 1e-9, distance-bound failures %ld; %.1f s",
               per.c_str(), hy.trajectories, hy.max_uptick, hy.bound_failures, seconds_since(t0)));
}

}  // namespace

int main() {
    Hygiene hy;
    const auto t0 = Clock::now();
    criterion1(hy);
    criterion2(hy);
    criterion3(hy);
    criterion4(hy);
    criterion5();
    criterion6(hy);
    criterion7();
    criterion8(hy);
    std::printf("%d of 8 criteria passed in %.1f s on %d thread(s)\n", 8 - failures, seconds_since(t0),
                default_threads());
    return failures == 0 ? 0 : 1;
}
