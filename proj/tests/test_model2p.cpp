#include <gtest/gtest.h>

#include <memory>
#include <random>
#include <sstream>

#include "gfl/gradflow.hpp"
#include "gfl/model2p.hpp"
#include "gfl/models.hpp"

using namespace gfl;

namespace {

const StagedModel& model(int d) {
    static std::unique_ptr<StagedModel> m2, m3;
    auto& m = d == 2 ? m2 : m3;
    if (!m) m = std::make_unique<StagedModel>(build_tree(default_schedule(d, 1.0, 4)));
    return *m;
}

double random_u(const StagedModel& m, std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(-0.2, 1.1 * m.terminal_u())(rng);
}

double random_v(const StagedModel& m, std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(m.v_begin(), m.v_end())(rng);
}

}  // namespace

TEST(Staged, InitialStageIsLinear) {
    for (int d : {2, 3}) {
        const auto& m = model(d);
        const Vec& a = m.initial_offset();
        const Box& root = m.tree().root();
        for (double u : {-0.5, 0.0, 0.3 * m.u1(), 0.9 * m.u1()})
            for (double v : {-0.7, 0.0, 0.4}) {
                Vec x = m.value(Vec{{u, v}});
                EXPECT_NEAR(x[0], v, 1e-13);
                for (int j = 1; j < d; ++j) {
                    const double dir = a[j] > root.hi[j] ? 1.0 : -1.0;
                    EXPECT_NEAR(x[j], a[j] + (1 - u / m.u1()) * dir, 1e-13);
                }
                Mat J = m.jacobian(Vec{{u, v}});
                EXPECT_NEAR(J(0, 1), 1.0, 1e-12);
                EXPECT_NEAR(J(0, 0), 0.0, 1e-12);
                for (int j = 1; j < d; ++j) {
                    EXPECT_NEAR(std::abs(J(j, 0)), 1.0 / m.u1(), 1e-12);
                    EXPECT_NEAR(J(j, 1), 0.0, 1e-12);
                }
            }
    }
}

TEST(Staged, FirstBoundaryCurveRunsAlongRootEdge) {
    const auto& m = model(3);
    const Box& root = m.tree().root();
    const Vec& a = m.initial_offset();
    for (int j = 1; j < 3; ++j) {
        EXPECT_GT(std::abs(a[j]) - root.hi[j], 0.0);
        EXPECT_LT(std::abs(a[j]) - root.hi[j], m.stages()[0].a);
    }
    for (double v : {-0.9, 0.0, 0.9}) {
        Vec x = m.value(Vec{{m.u1(), v}});
        EXPECT_NEAR(x[0], v, 1e-12);
        EXPECT_NEAR(x[1], a[1], 1e-12);
        EXPECT_NEAR(x[2], a[2], 1e-12);
    }
}

TEST(Staged, StageBoundariesIncrease) {
    for (int d : {2, 3}) {
        const auto& m = model(d);
        EXPECT_EQ(m.stage_boundary(1), m.u1());
        for (const auto& st : m.stages()) {
            EXPECT_LT(st.u_lo, st.u_star);
            EXPECT_LT(st.u_star, st.u_hi);
            EXPECT_EQ(st.u_hi, m.stage_boundary(st.n + 1));
            EXPECT_NE(st.k, st.k_next);
        }
        EXPECT_EQ(m.terminal_u(), m.stage_boundary(4));
    }
}

TEST(Staged, FrozenBeyondTerminal) {
    std::mt19937_64 rng(1);
    const auto& m = model(2);
    for (int i = 0; i < 100; ++i) {
        const double v = random_v(m, rng);
        EXPECT_EQ(m.value(Vec{{m.terminal_u(), v}}), m.value(Vec{{m.terminal_u() + 5.0, v}}));
    }
}

TEST(Staged, OnlyStageCoordinatesMoveWithinAStage) {
    std::mt19937_64 rng(2);
    const auto& m = model(3);
    for (const auto& st : m.stages())
        for (int i = 0; i < 200; ++i) {
            const double u1 = std::uniform_real_distribution<double>(st.u_lo, st.u_hi)(rng);
            const double u2 = std::uniform_real_distribution<double>(st.u_lo, st.u_hi)(rng);
            const double v = random_v(m, rng);
            Vec x1 = m.value(Vec{{u1, v}}), x2 = m.value(Vec{{u2, v}});
            Mat J = m.jacobian(Vec{{u1, v}});
            for (int j = 0; j < 3; ++j)
                if (j != st.k && j != st.k_next) {
                    EXPECT_EQ(x1[j], x2[j]);
                    EXPECT_LE(std::abs(J(j, 0)), 1e-10);
                }
        }
}

TEST(Staged, ContinuousAcrossStageBoundaries) {
    std::mt19937_64 rng(3);
    for (int d : {2, 3}) {
        const auto& m = model(d);
        for (int n = 1; n <= 4; ++n)
            for (int i = 0; i < 20; ++i) {
                const double v = random_v(m, rng), u = m.stage_boundary(n);
                std::vector<double> C;
                for (double h : {1e-3, 1e-4, 1e-5})
                    C.push_back((m.value(Vec{{u - h, v}}) - m.value(Vec{{u + h, v}})).norm() / h);
                // a jump would make the ratio grow like 1/h
                EXPECT_LE(C[2], 2.0 * C[0] + 1e-6);
                EXPECT_LE(C[1], 2.0 * C[0] + 1e-6);
            }
    }
}

TEST(Staged, JacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (int d : {2, 3}) {
        const auto& m = model(d);
        double worst = 0;
        for (int p = 0; p < 1000; ++p) {
            Vec w{{random_u(m, rng), random_v(m, rng)}};
            worst = std::max(worst, relative_max_error(m.jacobian(w), fd_jacobian(m, w)));
        }
        EXPECT_LE(worst, 1e-4) << "d = " << d;
    }
}

TEST(Staged, DoublingStretchHalvesUSpeed) {
    auto tree = build_tree(default_schedule(2, 1.0, 4));
    StagedConfig c2;
    c2.stretch = 2.0;
    StagedModel m1(tree), m2(tree, c2);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const double u = std::uniform_real_distribution<double>(m1.u1(), m1.terminal_u())(rng);
        const double v = random_v(m1, rng);
        const double u2 = m1.u1() + 2.0 * (u - m1.u1());
        Vec x1 = m1.value(Vec{{u, v}}), x2 = m2.value(Vec{{u2, v}});
        EXPECT_LT((x1 - x2).norm(), 1e-12);
        Vec d1 = m1.jacobian(Vec{{u, v}}).col(0), d2 = m2.jacobian(Vec{{u2, v}}).col(0);
        EXPECT_LT((d2 - 0.5 * d1).norm(), 1e-9 * (1 + d1.norm()));
    }
}

TEST(Gathering, ProfileEndpointsAndMonotonicity) {
    const auto& st = model(2).stages()[0];
    EXPECT_THROW(gathering_profile(st, st.u_lo - 1e-3, 0.1), std::out_of_range);
    EXPECT_THROW(gathering_profile(st, st.u_star + 1e-3, 0.1), std::out_of_range);
    for (double x : {0.0, 0.25 * st.a, 0.5 * st.a, st.a}) {
        EXPECT_DOUBLE_EQ(gathering_profile(st, st.u_lo, x), -st.gap);
        EXPECT_NEAR(gathering_profile(st, st.u_star, x), x - st.gap_end, 1e-15);
        const double mid = gathering_profile(st, 0.5 * (st.u_lo + st.u_star), x);
        if (x > 0) {
            EXPECT_GT(mid, -st.gap);
            EXPECT_LT(mid, x - st.gap_end);
        }
        double prev = -1e300;
        for (int i = 0; i <= 200; ++i) {
            const double u = st.u_lo + (st.u_star - st.u_lo) * i / 200;
            const double g = gathering_profile(st, u, x);
            EXPECT_GE(g, prev);
            prev = g;
        }
    }
    double prev = 1e300;
    for (int i = 0; i <= 200; ++i) {
        const double e = st.offset(st.u_lo + (st.u_star - st.u_lo) * i / 200);
        EXPECT_LT(e, prev);
        EXPECT_GT(e, 0.0);
        prev = e;
    }
}

TEST(Spreading, TipExtentGrowsToBoxLength) {
    for (const auto& st : model(3).stages()) {
        EXPECT_THROW(spreading_tip(st, st.u_star - 1e-3), std::out_of_range);
        const TipState t0 = spreading_tip(st, st.u_star), t1 = spreading_tip(st, st.u_hi);
        EXPECT_NEAR(t0.extent, st.a, 0.1 * st.a);
        EXPECT_DOUBLE_EQ(t1.extent, st.b);
        double pe = -1e300, px = 1e300;
        for (int i = 0; i <= 400; ++i) {
            const TipState t = spreading_tip(st, st.u_star + (st.u_hi - st.u_star) * i / 400);
            EXPECT_GE(t.extent, pe);
            EXPECT_LE(t.x, px);
            EXPECT_GE(t.x, st.a - st.eps);
            pe = t.extent;
            px = t.x;
        }
    }
}

TEST(LevelCurve, StraightAtZeroAndCsv) {
    const auto& m = model(2);
    auto pts = level_curve(m, 0.0, 50);
    ASSERT_EQ(pts.size(), 50u);
    for (const auto& p : pts) EXPECT_NEAR(p.x[1], pts.front().x[1], 1e-13);
    EXPECT_THROW(level_curve(m, 0.0, 1), std::invalid_argument);
    std::ostringstream os;
    write_level_curve_csv(os, 0.0, pts);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "u,v,x1,x2");
}

TEST(Nearest, OnCurveAndInitialProjection) {
    const auto& m = model(2);
    std::mt19937_64 rng(6);
    for (int i = 0; i < 10; ++i) {
        const double u = random_u(m, rng), v = random_v(m, rng);
        auto r = nearest_on_level_curve(m, u, m.value(Vec{{u, v}}));
        EXPECT_LT(r.distance, 1e-7);
    }
    Vec f{{0.3, -0.4}};
    auto r = nearest_on_level_curve(m, 0.5 * m.u1(), f);
    EXPECT_NEAR(r.v, 0.3, 1e-7);
    EXPECT_NEAR(r.distance, std::abs(m.value(Vec{{0.5 * m.u1(), 0.3}})[1] - f[1]), 1e-10);
}

TEST(Nearest, F0TargetsApproachTheirBranch) {
    for (int d : {2, 3}) {
        const auto& m = model(d);
        const auto& tree = m.tree();
        std::mt19937_64 rng(7);
        for (int t = 0; t < 5; ++t) {
            Vec f = sample_f0(tree, rng);
            auto path = locate(tree, f).path;
            double prev = 1e300;
            for (int i = 0; i <= 60; ++i) {
                const double u = m.terminal_u() * i / 60;
                const double dist = nearest_on_level_curve(m, u, f).distance;
                EXPECT_LE(dist, prev + 1e-12);
                prev = dist;
            }
            for (int n = 2; n <= tree.depth(); ++n) {
                auto r = nearest_on_level_curve(m, m.stage_boundary(n), f);
                auto [va, vb] = m.piece_v_range(n, path[n - 1]);
                // spline end effects reach one knot past the piece
                EXPECT_GE(r.v, va - m.v_spacing());
                EXPECT_LE(r.v, vb + m.v_spacing());
            }
        }
    }
}

TEST(Alignment, EveryLevelHasAlignedPieces) {
    for (int d : {2, 3}) {
        const auto& m = model(d);
        for (int n = 1; n <= 4; ++n) {
            auto rep = alignment_check(m, m.tree(), n);
            EXPECT_EQ(rep.branches.size(), m.tree().levels[n - 1].size());
            EXPECT_EQ(rep.flagged, 0) << "d=" << d << " n=" << n;
            EXPECT_LE(rep.max_offset, rep.tolerance);
        }
        EXPECT_EQ(alignment_check(m, m.tree(), 1).branches.size(), 1u);
    }
}

TEST(Alignment, ShiftedBoxesAreFlagged) {
    const auto& m = model(2);
    BoxTree moved = m.tree();
    for (auto& b : moved.levels[2]) {
        b.lo[1] += 0.05;
        b.hi[1] += 0.05;
    }
    auto rep = alignment_check(m, moved, 3);
    EXPECT_EQ(rep.flagged, static_cast<int>(moved.levels[2].size()));
}

TEST(Barrier, StagedTargetIsOrthogonal) {
    const auto& m = model(3);
    auto bt = barrier_target(m, 0.1);
    EXPECT_LE((bt.J0.transpose() * (bt.f0 - bt.phi0)).norm(), 1e-10);
}

TEST(Learnability, F0TargetsConvergeWithIncreasingU) {
    const auto& m = model(2);
    const double leaf = leaf_diameter(m.tree().schedule);
    GfOptions opt;
    opt.delta_success = 0.5 * leaf * leaf;
    opt.t_max = 400;
    std::mt19937_64 rng(8);
    for (int t = 0; t < 10; ++t) {
        Vec f = sample_f0(m.tree(), rng);
        auto tr = integrate(m, f, opt);
        EXPECT_EQ(tr.verdict, Verdict::Learnable) << f.transpose();
        EXPECT_TRUE(u_monotonicity(tr).empty());
        EXPECT_TRUE(bound_check(tr, f, m).ok);
        EXPECT_LE(tr.max_loss_uptick, 1e-9);
    }
}

TEST(Config, RejectsBadRatios) {
    StagedConfig c;
    c.tip_end_ratio = 0.05;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.leaf_points = 1;
    EXPECT_THROW(StagedModel(build_tree(default_schedule(2, 1.0, 2)), c), std::invalid_argument);
}
