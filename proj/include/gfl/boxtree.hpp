// Nested box hierarchy whose intersection is the learnable Cantor-type set.
#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace gfl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class GeometryError : public std::runtime_error {
public:
    GeometryError(const std::string& what, int stage = 0)
        : std::runtime_error(what), stage_(stage) {}
    int stage() const { return stage_; }

private:
    int stage_;
};

enum class Side : std::int8_t { low = -1, high = 1 };

inline const char* side_name(Side s) { return s == Side::low ? "low" : "high"; }
inline Side side_from_name(const std::string& s) {
    if (s == "low") return Side::low;
    if (s == "high") return Side::high;
    throw std::invalid_argument("side must be \"low\" or \"high\", got \"" + s + "\"");
}

struct Box {
    Vec lo, hi;

    Box() = default;
    Box(Vec l, Vec h) : lo(std::move(l)), hi(std::move(h)) {}

    int dim() const { return static_cast<int>(lo.size()); }
    double extent(int i) const { return hi[i] - lo[i]; }
    Vec extents() const { return hi - lo; }
    Vec center() const { return 0.5 * (lo + hi); }
    double diameter() const { return (hi - lo).norm(); }
    double volume() const { return (hi - lo).prod(); }

    bool contains(const Vec& p) const {
        for (int i = 0; i < dim(); ++i)
            if (p[i] < lo[i] || p[i] > hi[i]) return false;
        return true;
    }
    bool contains(const Box& b) const {
        for (int i = 0; i < dim(); ++i)
            if (b.lo[i] < lo[i] || b.hi[i] > hi[i]) return false;
        return true;
    }
    // Interiors overlap.
    bool overlaps(const Box& b) const {
        for (int i = 0; i < dim(); ++i)
            if (b.hi[i] <= lo[i] || b.lo[i] >= hi[i]) return false;
        return true;
    }
};

// One splitting stage: cut along k into 2s children separated by gaps 2*eps.
struct StageSpec {
    int k = 0;  // 0-based coordinate
    int s = 2;
    double eps = 0.0;
    double lambda = 1.0;  // u-stretch factor used by the staged model
};

struct SplitSchedule {
    int d = 2;
    double c = 1.0;
    Box root;                    // defaults to [-c,c]^d
    int depth = 1;               // number of box levels; depth-1 splits
    std::vector<StageSpec> stages;
    int k_final = 0;             // coordinate of the last level's aligned edges
    Side root_side = Side::high;  // face of the root carrying the initial aligned edge

    int k_of_level(int n) const {  // n is 1-based level
        return n <= static_cast<int>(stages.size()) ? stages[n - 1].k : k_final;
    }
};

inline Box cube_box(int d, double c) { return Box(Vec::Constant(d, -c), Vec::Constant(d, c)); }

inline std::vector<Box> split_box(const Box& parent, int k, int k_next, int s, double eps,
                                  Side align_side) {
    const int d = parent.dim();
    if (k < 0 || k >= d || k_next < 0 || k_next >= d)
        throw GeometryError("split coordinate out of range");
    if (k == k_next) throw GeometryError("splitting coordinate must differ from the next one");
    if (s < 1) throw GeometryError("splitting number must be positive");
    const double a = parent.lo[k], b = parent.hi[k];
    const double h = (b - a) / (2.0 * s);
    if (eps < 0.0 || eps >= 0.5 * h) {
        std::ostringstream os;
        os << "gap half-width " << eps << " must lie in [0, h/2) with h = " << h;
        throw GeometryError(os.str());
    }
    if (parent.extent(k_next) <= 2.0 * h) {
        std::ostringstream os;
        os << "edge along coordinate " << k_next + 1 << " has length " << parent.extent(k_next)
           << ", not longer than 2h = " << 2.0 * h;
        throw GeometryError(os.str());
    }
    std::vector<Box> out;
    out.reserve(2 * s);
    for (int beta = 1; beta <= 2 * s; ++beta) {
        Box child = parent;
        child.lo[k] = a + (beta - 1) * h + eps;
        child.hi[k] = a + beta * h - eps;
        if (align_side == Side::low)
            child.lo[k_next] = parent.lo[k_next] + 2.0 * h;
        else
            child.hi[k_next] = parent.hi[k_next] - 2.0 * h;
        out.push_back(std::move(child));
    }
    return out;
}

// Edge lengths of every level, without building the tree.
inline std::vector<Vec> level_extents(const SplitSchedule& sch) {
    std::vector<Vec> out{sch.root.extents()};
    for (int n = 1; n < sch.depth; ++n) {
        const StageSpec& st = sch.stages[n - 1];
        Vec e = out.back();
        const int kn = sch.k_of_level(n + 1);
        const double h = e[st.k] / (2.0 * st.s);
        e[st.k] = h - 2.0 * st.eps;
        e[kn] -= 2.0 * h;
        out.push_back(e);
    }
    return out;
}

inline void validate(const SplitSchedule& sch) {
    if (sch.d < 2) throw GeometryError("dimension must be at least 2");
    if (sch.root.dim() != sch.d) throw GeometryError("root box dimension mismatch");
    for (int i = 0; i < sch.d; ++i)
        if (!(sch.root.lo[i] < sch.root.hi[i])) throw GeometryError("root box is empty");
    if (sch.depth < 1) throw GeometryError("depth must be at least 1");
    if (static_cast<int>(sch.stages.size()) != sch.depth - 1)
        throw GeometryError("expected depth-1 stage records");
    if (sch.k_final < 0 || sch.k_final >= sch.d) throw GeometryError("final coordinate out of range");
    Vec e = sch.root.extents();
    for (int n = 1; n < sch.depth; ++n) {
        const StageSpec& st = sch.stages[n - 1];
        const int kn = sch.k_of_level(n + 1);
        if (st.k < 0 || st.k >= sch.d) throw GeometryError("splitting coordinate out of range", n);
        if (st.k == kn)
            throw GeometryError("consecutive splitting coordinates must differ (k_{n+1} != k_n)", n);
        if (st.s < 1) throw GeometryError("splitting number must be positive", n);
        if (!(st.lambda >= 1.0)) throw GeometryError("stretch factor must be >= 1", n);
        const double h = e[st.k] / (2.0 * st.s);
        if (st.eps < 0.0 || st.eps >= 0.5 * h) {
            std::ostringstream os;
            os << "stage " << n << ": gap half-width " << st.eps << " violates eps < h/2 = " << 0.5 * h;
            throw GeometryError(os.str(), n);
        }
        if (e[kn] <= 2.0 * h) {
            std::ostringstream os;
            os << "stage " << n << ": edge along coordinate " << kn + 1 << " (" << e[kn]
               << ") is not longer than 2h = " << 2.0 * h;
            throw GeometryError(os.str(), n);
        }
        e[st.k] = h - 2.0 * st.eps;
        e[kn] -= 2.0 * h;
    }
}

struct DefaultScheduleOptions {
    double gap_ratio = 0.05;    // eps_n / h_n
    double contraction = 0.5;   // upper bound on 2h_n / (edge along k_{n+1})
    int s_min = 2;
    double lambda = 1.0;
};

// Cyclic coordinates; s_n is the smallest value >= s_min whose contraction stays below the bound.
inline SplitSchedule default_schedule(int d, double c, int depth,
                                      const DefaultScheduleOptions& opt = {}) {
    SplitSchedule sch;
    sch.d = d;
    sch.c = c;
    sch.root = cube_box(d, c);
    sch.depth = depth;
    sch.k_final = (depth - 1) % d;
    Vec e = sch.root.extents();
    for (int n = 1; n < depth; ++n) {
        StageSpec st;
        st.k = (n - 1) % d;
        const int kn = n % d;
        int s = opt.s_min;
        while (e[st.k] / s > opt.contraction * e[kn]) ++s;
        st.s = s;
        const double h = e[st.k] / (2.0 * s);
        st.eps = opt.gap_ratio * h;
        st.lambda = opt.lambda;
        sch.stages.push_back(st);
        e[st.k] = h - 2.0 * st.eps;
        e[kn] -= 2.0 * h;
    }
    validate(sch);
    return sch;
}

inline nlohmann::json to_json(const Box& b) {
    return {{"lo", std::vector<double>(b.lo.data(), b.lo.data() + b.dim())},
            {"hi", std::vector<double>(b.hi.data(), b.hi.data() + b.dim())}};
}

inline Box box_from_json(const nlohmann::json& j) {
    auto lo = j.at("lo").get<std::vector<double>>();
    auto hi = j.at("hi").get<std::vector<double>>();
    if (lo.size() != hi.size()) throw std::invalid_argument("box lo/hi size mismatch");
    return Box(Eigen::Map<Vec>(lo.data(), lo.size()), Eigen::Map<Vec>(hi.data(), hi.size()));
}

// Coordinates are 1-based in JSON.
inline nlohmann::json to_json(const SplitSchedule& sch) {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : sch.stages)
        st.push_back({{"k", s.k + 1}, {"s", s.s}, {"eps", s.eps}, {"lambda", s.lambda}});
    return {{"schema", "gfl.schedule/1"}, {"dimension", sch.d}, {"c", sch.c},
            {"root", to_json(sch.root)}, {"depth", sch.depth}, {"k_final", sch.k_final + 1},
            {"root_side", side_name(sch.root_side)}, {"stages", st}};
}

inline SplitSchedule schedule_from_json(const nlohmann::json& j) {
    SplitSchedule sch;
    sch.d = j.at("dimension").get<int>();
    sch.c = j.value("c", 1.0);
    sch.root = j.contains("root") ? box_from_json(j.at("root")) : cube_box(sch.d, sch.c);
    sch.depth = j.at("depth").get<int>();
    for (const auto& s : j.value("stages", nlohmann::json::array())) {
        StageSpec st;
        st.k = s.at("k").get<int>() - 1;
        st.s = s.at("s").get<int>();
        st.eps = s.at("eps").get<double>();
        st.lambda = s.value("lambda", 1.0);
        sch.stages.push_back(st);
    }
    sch.k_final = j.contains("k_final") ? j.at("k_final").get<int>() - 1 : (sch.depth - 1) % sch.d;
    sch.root_side = side_from_name(j.value("root_side", std::string("high")));
    validate(sch);
    return sch;
}

struct BoxNode {
    int parent = -1;
    int beta = 0;  // 1-based child index along the splitting coordinate
    std::vector<Side> side;  // face carrying the aligned edge, per coordinate
};

struct BoxTree {
    SplitSchedule schedule;
    std::vector<std::vector<Box>> levels;
    std::vector<std::vector<BoxNode>> nodes;

    const Box& root() const { return levels.front().front(); }
    int depth() const { return static_cast<int>(levels.size()); }
    const std::vector<Box>& leaves() const { return levels.back(); }
    int children_per_box(int level) const { return 2 * schedule.stages[level - 1].s; }
    // Index into level n+1 of child beta (1-based) of box i at level n.
    int child_index(int level, int i, int beta) const {
        return i * children_per_box(level) + beta - 1;
    }
};

inline BoxTree build_tree(const SplitSchedule& sch) {
    validate(sch);
    BoxTree t;
    t.schedule = sch;
    t.levels.push_back({sch.root});
    t.nodes.push_back({BoxNode{-1, 0, std::vector<Side>(sch.d, sch.root_side)}});
    for (int n = 1; n < sch.depth; ++n) {
        const StageSpec& st = sch.stages[n - 1];
        const int kn = sch.k_of_level(n + 1);
        std::vector<Box> next;
        std::vector<BoxNode> next_nodes;
        const auto& cur = t.levels.back();
        const auto& cur_nodes = t.nodes.back();
        next.reserve(cur.size() * 2 * st.s);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            std::vector<Box> kids;
            try {
                kids = split_box(cur[i], st.k, kn, st.s, st.eps, cur_nodes[i].side[kn]);
            } catch (const GeometryError& e) {
                throw GeometryError(std::string("stage ") + std::to_string(n) + ": " + e.what(), n);
            }
            for (int beta = 1; beta <= 2 * st.s; ++beta) {
                BoxNode nd{static_cast<int>(i), beta, cur_nodes[i].side};
                nd.side[st.k] = (beta % 2 == 1) ? Side::high : Side::low;
                next_nodes.push_back(std::move(nd));
                next.push_back(std::move(kids[beta - 1]));
            }
        }
        t.levels.push_back(std::move(next));
        t.nodes.push_back(std::move(next_nodes));
    }
    return t;
}

struct LocateResult {
    std::vector<int> path;            // box index per level reached
    std::optional<int> rejected;      // first level (1-based) with no containing box
    bool reached_leaf(const BoxTree& t) const { return !rejected && static_cast<int>(path.size()) == t.depth(); }
};

inline LocateResult locate(const BoxTree& t, const Vec& f) {
    LocateResult r;
    if (!t.root().contains(f)) {
        r.rejected = 1;
        return r;
    }
    r.path.push_back(0);
    for (int n = 1; n < t.depth(); ++n) {
        const int parent = r.path.back();
        const int m = t.children_per_box(n);
        int found = -1;
        for (int beta = 1; beta <= m; ++beta) {
            const int idx = t.child_index(n, parent, beta);
            if (t.levels[n][idx].contains(f)) {
                found = idx;
                break;
            }
        }
        if (found < 0) {
            r.rejected = n + 1;
            return r;
        }
        r.path.push_back(found);
    }
    return r;
}

template <class Rng>
Vec sample_f0(const BoxTree& t, Rng& rng) {
    const auto& leaves = t.leaves();
    std::uniform_int_distribution<std::size_t> pick(0, leaves.size() - 1);
    const Box& b = leaves[pick(rng)];
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Vec p(b.dim());
    for (int i = 0; i < b.dim(); ++i) p[i] = b.lo[i] + u01(rng) * b.extent(i);
    return p;
}

template <class Rng>
Vec sample_uniform(const Box& b, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Vec p(b.dim());
    for (int i = 0; i < b.dim(); ++i) p[i] = b.lo[i] + u01(rng) * b.extent(i);
    return p;
}

inline double kept_fraction(const SplitSchedule& sch) {
    validate(sch);
    Vec e = sch.root.extents();
    double frac = 1.0;
    for (int n = 1; n < sch.depth; ++n) {
        const StageSpec& st = sch.stages[n - 1];
        const int kn = sch.k_of_level(n + 1);
        const double h = e[st.k] / (2.0 * st.s);
        frac *= (1.0 - 4.0 * st.s * st.eps / e[st.k]) * (1.0 - 2.0 * h / e[kn]);
        e[st.k] = h - 2.0 * st.eps;
        e[kn] -= 2.0 * h;
    }
    return frac;
}

inline double leaf_diameter(const SplitSchedule& sch) { return level_extents(sch).back().norm(); }

inline nlohmann::json tree_to_json(const BoxTree& t) {
    nlohmann::json lv = nlohmann::json::array();
    for (std::size_t n = 0; n < t.levels.size(); ++n) {
        nlohmann::json boxes = nlohmann::json::array();
        for (std::size_t i = 0; i < t.levels[n].size(); ++i) {
            auto b = to_json(t.levels[n][i]);
            b["parent"] = t.nodes[n][i].parent;
            boxes.push_back(std::move(b));
        }
        lv.push_back({{"level", n + 1}, {"boxes", boxes}});
    }
    return {{"schema", "gfl.tree/1"}, {"schedule", to_json(t.schedule)}, {"levels", lv}};
}

}  // namespace gfl
