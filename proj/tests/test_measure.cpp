#include <gtest/gtest.h>

#include <random>

#include "gfl/measure.hpp"
#include "gfl/model2p.hpp"

using namespace gfl;

namespace {

// Cells of a 1/N grid on [0,1]^2 met by (x, x^2), x in [0,1], counted column by column:
// column i covers y in [(i/N)^2, ((i+1)/N)^2].
long parabola_cells(int N) {
    long count = 0;
    for (int i = 0; i < N; ++i) {
        const double y0 = double(i) * i / (double(N) * N), y1 = double(i + 1) * (i + 1) / (double(N) * N);
        const int j0 = static_cast<int>(std::floor(y0 * N));
        const int j1 = std::min(N - 1, static_cast<int>(std::ceil(y1 * N)) - 1);
        count += j1 - j0 + 1;
    }
    return count;
}

OccupancyOptions unit_square_params() {
    OccupancyOptions o;
    o.expanding = false;
    o.param_lo = Vec::Zero(1);
    o.param_hi = Vec::Ones(1);
    o.cube_lo = Vec::Zero(2);
    o.cube_side = 1.0;
    return o;
}

}  // namespace

TEST(Wilson, KnownValuesAndBounds) {
    auto ci = wilson_interval(0, 10);
    EXPECT_EQ(ci.lo, 0.0);
    EXPECT_NEAR(ci.hi, 0.27753, 1e-5);
    ci = wilson_interval(10, 10);
    EXPECT_NEAR(ci.lo, 0.72247, 1e-5);
    EXPECT_NEAR(ci.hi, 1.0, 1e-15);
    ci = wilson_interval(50, 100);
    EXPECT_NEAR(ci.lo, 0.40383, 1e-5);
    EXPECT_NEAR(ci.hi, 0.59617, 1e-5);
    auto e = make_estimate(37, 120);
    EXPECT_LE(e.ci.lo, e.estimate);
    EXPECT_LE(e.estimate, e.ci.hi);
}

TEST(Wilson, CoverageOnBernoulliOracle) {
    std::mt19937_64 rng(1);
    for (double p : {0.05, 0.3, 0.5, 0.9}) {
        std::bernoulli_distribution B(p);
        int covered = 0;
        for (int rep = 0; rep < 100; ++rep) {
            long s = 0;
            for (int i = 0; i < 200; ++i) s += B(rng);
            auto ci = wilson_interval(s, 200);
            covered += ci.lo <= p && p <= ci.hi;
        }
        EXPECT_GE(covered, 93) << "p = " << p;
    }
}

TEST(LearnableFraction, LinearModelLearnsEverything) {
    std::mt19937_64 g(2);
    auto m = make_linear_surjective(3, 4, g);
    Rng rng(3);
    GfOptions opt;
    auto r = learnable_fraction(m, gaussian_sampler(Vec::Zero(3), 1.0), 50, opt, rng, 2);
    EXPECT_EQ(r.estimate.estimate, 1.0);
    EXPECT_EQ(r.estimate.verdicts["Learnable"], 50);
    long total = 0;
    for (auto& [k, v] : r.estimate.verdicts) total += v;
    EXPECT_EQ(total, r.estimate.n_samples);
}

TEST(LearnableFraction, IndependentOfThreadCount) {
    auto m = make_sqrt2_sin_curve();
    GfOptions opt;
    opt.t_max = 200;
    Rng r1(4), r2(4);
    auto a = learnable_fraction(m, uniform_sampler(Box(Vec::Constant(2, -1), Vec::Constant(2, 1))), 40, opt, r1, 1);
    auto b = learnable_fraction(m, uniform_sampler(Box(Vec::Constant(2, -1), Vec::Constant(2, 1))), 40, opt, r2, 4);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].f, b.records[i].f);
        EXPECT_EQ(a.records[i].final_loss, b.records[i].final_loss);
    }
}

TEST(LearnableFraction, StagedModelOnF0Targets) {
    auto tree = std::make_shared<const BoxTree>(build_tree(default_schedule(2, 1.0, 4)));
    StagedModel m(*tree);
    const double leaf = leaf_diameter(tree->schedule);
    GfOptions opt;
    opt.delta_success = 0.5 * leaf * leaf;
    opt.t_max = 400;
    Rng rng(5);
    auto r = learnable_fraction(m, f0_sampler(tree), 20, opt, rng);
    EXPECT_EQ(r.estimate.n_success, 20);
}

TEST(Barrier, LinearModelExactQuadratic) {
    Mat A(3, 2);
    A << 1, 0, 0, 2, 0, 0;
    LinearModel m(A);
    auto bt = barrier_target(m, 0.2);
    const double r = 0.1;
    GfOptions opt;
    opt.t_max = 100;
    auto rep = barrier_certificate(m, bt.f0, r, 256, opt);
    // L(w) - L(0) = 0.5 |A w|^2, smallest on the sphere along e1
    EXPECT_NEAR(rep.min_excess, 0.5 * r * r, 1e-12);
    EXPECT_TRUE(rep.certified);
    EXPECT_TRUE(rep.stayed_inside);
    EXPECT_NE(rep.verdict, Verdict::Learnable);
}

TEST(Barrier, StagedModelTrapsAndControlFails) {
    auto tree = build_tree(default_schedule(3, 1.0, 4));
    StagedModel m(tree);
    const double l = 0.1;
    auto bt = barrier_target(m, l);
    const double r = barrier_radius(0.5 * l * l);
    GfOptions opt;
    opt.t_max = 200;
    auto rep = barrier_certificate(m, bt.f0, r, 400, opt);
    EXPECT_TRUE(rep.certified);
    EXPECT_LT(rep.max_w_norm, r);
    EXPECT_EQ(rep.verdict, Verdict::Trapped);
    EXPECT_GE(rep.terminal_loss, rep.loss_lower_bound);

    Rng rng(6);
    Vec f = sample_f0(tree, rng);
    EXPECT_FALSE(barrier_certificate(m, f, r, 400, opt).certified);
}

TEST(Sweep, DegenerateRadiusGivesOneTarget) {
    auto m = make_sqrt2_sin_curve();
    auto g = sphere_embedding_axes(1, Vec{{0.6, 0.37}}, 0.0);
    GfOptions opt;
    opt.t_max = 50;
    auto rep = sphere_sweep(m, g, 16, opt);
    const double single = integrate(m, Vec{{0.6, 0.37}}, opt).back().loss;
    for (double L : rep.losses) EXPECT_DOUBLE_EQ(L, rep.losses.front());
    EXPECT_NEAR(rep.max_loss, single, 1e-12);
    EXPECT_EQ(rep.bound, 0.0);
}

TEST(Sweep, SurjectiveLinearModelLearnsTheWholeSphere) {
    std::mt19937_64 g(7);
    auto m = make_linear_surjective(3, 3, g);
    auto s = sphere_embedding_axes(2, Vec::Zero(3), 0.5);
    GfOptions opt;
    opt.t_max = 2000;
    auto rep = sphere_sweep(m, s, 200, opt);
    EXPECT_EQ(rep.grid.size(), 200u);
    EXPECT_LT(rep.max_loss, opt.delta_success);
}

TEST(SphereGrid, AntipodalClosure) {
    for (int dim : {1, 2}) {
        auto pts = sphere_grid(dim, 101);
        EXPECT_GE(pts.size(), 101u);
        for (const auto& p : pts) {
            EXPECT_NEAR(p.norm(), 1.0, 1e-14);
            double best = 1e300;
            for (const auto& q : pts) best = std::min(best, (p + q).norm());
            EXPECT_LT(best, 1e-14);
        }
    }
}

TEST(Occupancy, ConstantMapHitsOneCell) {
    auto m = make_constant_curve(Vec{{0.3, 0.7}});
    OccupancyOptions o;
    o.cube_lo = Vec::Zero(2);
    auto r = occupancy(m, 16, 1000, o);
    EXPECT_EQ(r.occupied, 1);
    std::vector<int> Ns = {8, 16, 32};
    auto sr = occupancy_scaling(m, Ns, [](int) { return 100L; }, [&](int) { return o; });
    EXPECT_NEAR(sr.slope, 0.0, 1e-12);
}

TEST(Occupancy, ParabolaMatchesRasterization) {
    auto m = make_parabola();
    for (int N : {10, 17, 40}) EXPECT_EQ(occupancy(m, N, 200000, unit_square_params()).occupied, parabola_cells(N)) << N;
    EXPECT_EQ(parabola_cells(10), 19);
}

TEST(Occupancy, MonotoneInBudget) {
    auto m = make_sqrt2_sin_curve();
    OccupancyOptions o;
    o.cube_lo = Vec::Constant(2, -1);
    o.cube_side = 2;
    o.expanding = false;
    o.param_lo = Vec::Constant(1, -50);
    o.param_hi = Vec::Constant(1, 50);
    long prev = 0;
    for (long b : {10L, 100L, 1000L, 10000L}) {
        const long occ = occupancy(m, 32, b, o).occupied;
        EXPECT_GE(occ, prev);
        EXPECT_LE(occ, 32 * 32);
        prev = occ;
    }
}

TEST(Occupancy, ParabolaSlopeNearOne) {
    auto m = make_parabola();
    Rng rng(8);
    std::uniform_real_distribution<double> U(0, 1);
    auto sr = occupancy_scaling(
        m, {8, 16, 32, 64}, [](int N) { return 200L * N; },
        [&](int N) {
            OccupancyOptions o;
            o.cube_lo = Vec::Constant(2, -1);
            o.cube_side = 2;
            o.offset = Vec{{U(rng) / N, U(rng) / N}};
            return o;
        });
    EXPECT_NEAR(sr.slope, 1.0, 0.2);
}

TEST(Occupancy, SinCurveFillsTheSquare) {
    auto m = make_sqrt2_sin_curve();
    OccupancyOptions o;
    o.cube_lo = Vec::Constant(2, -1);
    o.cube_side = 2;
    auto r = occupancy(m, 16, 500, o);
    EXPECT_GT(r.fraction(2), 0.95);
    EXPECT_THROW(occupancy(m, 1, 10, o), std::invalid_argument);
}

TEST(TrappedVsDelta, LinearStaysAtOne) {
    std::mt19937_64 g(9);
    auto m = make_linear_surjective(2, 2, g);
    Rng rng(10);
    auto rows = trapped_fraction_vs_delta(m, gaussian_sampler(Vec::Zero(2), 1.0), {1e-1, 1e-2, 1e-3, 1e-4}, 30,
                                          GfOptions{}, rng);
    for (const auto& r : rows) EXPECT_EQ(r.fraction.estimate, 1.0);
}

TEST(TrappedVsDelta, SinCurveFractionFalls) {
    auto m = make_sqrt2_sin_curve();
    Rng rng(11);
    GfOptions opt;
    opt.t_max = 1000;
    std::vector<TargetRecord> recs;
    auto rows = trapped_fraction_vs_delta(m, uniform_sampler(Box(Vec::Constant(2, -1), Vec::Constant(2, 1))),
                                          {1e-1, 1e-2, 1e-3, 1e-4}, 300, opt, rng, &recs);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(recs.size(), 300u);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].fraction.estimate, rows[i - 1].fraction.estimate);
    EXPECT_THROW(trapped_fraction_vs_delta(m, uniform_sampler(Box(Vec::Zero(2), Vec::Ones(2))), {1e-3, 1e-2}, 5, opt, rng),
                 std::invalid_argument);
}

TEST(Halton, FirstPointsAndRange) {
    Vec p = halton(0, 2);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 1.0 / 3.0);
    p = halton(2, 2);
    EXPECT_DOUBLE_EQ(p[0], 0.75);
    EXPECT_DOUBLE_EQ(p[1], 1.0 / 9.0);
    for (int i = 0; i < 1000; ++i) {
        Vec q = halton(i, 5);
        EXPECT_GE(q.minCoeff(), 0.0);
        EXPECT_LT(q.maxCoeff(), 1.0);
    }
}
