// Experiment runner: JSON configs, named experiments, run records.
#pragma once
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/boxtree.hpp"
#include "gfl/gradflow.hpp"
#include "gfl/measure.hpp"
#include "gfl/model2p.hpp"
#include "gfl/models.hpp"
#include "gfl/svg.hpp"

namespace gfl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kConfigSchema = "gfl.experiment/1";
inline constexpr const char* kRunSchema = "gfl.run/1";
inline constexpr const char* kOutputRootEnv = "GFLAB_OUTPUT_ROOT";
inline constexpr double kZ99 = 2.5758293035489004;

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& msg)
        : std::runtime_error(field.empty() ? msg : "field '" + field + "': " + msg), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Shortest round-trip decimal form.
inline std::string fmt(double x) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline std::string utc_now() {
    const std::time_t tt = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------- config access

// Typed view of one JSON object; every key read is remembered so leftovers can be reported.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
        if (j_ && !j_->is_object()) throw ConfigError(path_, "expected an object");
    }

    bool present() const { return j_ != nullptr; }
    std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    const json* raw(const std::string& k) {
        used_.insert(k);
        if (!j_) return nullptr;
        auto it = j_->find(k);
        return it == j_->end() ? nullptr : &*it;
    }
    bool has(const std::string& k) { return raw(k) != nullptr; }

    double num(const std::string& k, double def) {
        const json* p = raw(k);
        if (!p) return def;
        if (!p->is_number()) throw ConfigError(field(k), "expected a number");
        return p->get<double>();
    }
    double positive(const std::string& k, double def) {
        const double v = num(k, def);
        if (!(v > 0)) throw ConfigError(field(k), "must be positive");
        return v;
    }
    long integer(const std::string& k, long def, long min_value = std::numeric_limits<long>::min()) {
        const json* p = raw(k);
        long v = def;
        if (p) {
            if (!p->is_number_integer()) throw ConfigError(field(k), "expected an integer");
            v = p->get<long>();
        }
        if (v < min_value) throw ConfigError(field(k), "must be at least " + std::to_string(min_value));
        return v;
    }
    bool flag(const std::string& k, bool def) {
        const json* p = raw(k);
        if (!p) return def;
        if (!p->is_boolean()) throw ConfigError(field(k), "expected true or false");
        return p->get<bool>();
    }
    std::string str(const std::string& k, const std::string& def) {
        const json* p = raw(k);
        if (!p) return def;
        if (!p->is_string()) throw ConfigError(field(k), "expected a string");
        return p->get<std::string>();
    }
    std::vector<double> nums(const std::string& k, std::vector<double> def) {
        const json* p = raw(k);
        if (!p) return def;
        return number_array(*p, field(k));
    }
    std::vector<int> ints(const std::string& k, std::vector<int> def) {
        const json* p = raw(k);
        if (!p) return def;
        if (!p->is_array()) throw ConfigError(field(k), "expected an array of integers");
        std::vector<int> out;
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (!(*p)[i].is_number_integer())
                throw ConfigError(field(k) + "[" + std::to_string(i) + "]", "expected an integer");
            out.push_back((*p)[i].get<int>());
        }
        return out;
    }
    Vec vec(const std::string& k, const Vec& def, int size) {
        const json* p = raw(k);
        if (!p) return def;
        auto v = number_array(*p, field(k));
        if (size >= 0 && static_cast<int>(v.size()) != size)
            throw ConfigError(field(k), "expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
        return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    Section sub(const std::string& k) { return Section(raw(k), field(k)); }

    void finish() const {
        if (!j_) return;
        for (const auto& item : j_->items())
            if (!used_.count(item.key())) throw ConfigError(field(item.key()), "unknown or unused key");
    }

    static std::vector<double> number_array(const json& j, const std::string& where) {
        if (!j.is_array()) throw ConfigError(where, "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(j[i].get<double>());
        }
        return out;
    }

private:
    const json* j_;
    std::string path_;
    std::set<std::string> used_;
};

inline json parse_config_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("", "JSON syntax error at line " + std::to_string(line) + ", column " +
                                  std::to_string(col) + ": " + e.what());
    }
}

inline json load_config(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("", "cannot read config file " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------- run context

struct Assertion {
    std::string name;
    bool passed = false;
    json detail;
};

struct RunContext {
    fs::path dir;
    std::vector<std::string> files;
    json summary = json::object();
    std::vector<Assertion> assertions;

    std::ofstream open(const std::string& name) {
        files.push_back(name);
        std::ofstream os(dir / name);
        if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
        return os;
    }
    void write_jsonl(const std::string& name, const std::vector<json>& rows) {
        auto os = open(name);
        for (const auto& r : rows) os << r.dump() << '\n';
    }
    void check(const std::string& name, bool passed, json detail = json::object()) {
        assertions.push_back({name, passed, std::move(detail)});
    }
};

struct Setup {
    Section& top;
    std::uint64_t seed = 0;
    int threads = 1;
    bool svg = true;
};

// ---------------------------------------------------------------- builders

inline std::string stage_field(const GeometryError& e) {
    const std::string msg = e.what();
    if (e.stage() <= 0) return "schedule";
    std::string f = "schedule.stages[" + std::to_string(e.stage() - 1) + "]";
    if (msg.find("gap half-width") != std::string::npos) return f + ".eps";
    if (msg.find("consecutive") != std::string::npos) return f + ".k";
    if (msg.find("not longer than") != std::string::npos) return f + ".s";
    if (msg.find("splitting number") != std::string::npos) return f + ".s";
    if (msg.find("stretch factor") != std::string::npos) return f + ".lambda";
    return f;
}

// Either a generated cyclic schedule or explicit stage records (coordinates 1-based).
inline SplitSchedule read_schedule(Section s, int default_dim) {
    const int d = static_cast<int>(s.integer("dimension", default_dim, 2));
    const double c = s.positive("c", 1.0);
    SplitSchedule sch;
    try {
        if (const json* st = s.raw("stages")) {
            if (!st->is_array()) throw ConfigError(s.field("stages"), "expected an array");
            sch.d = d;
            sch.c = c;
            sch.root = cube_box(d, c);
            if (s.has("root")) {
                Section r = s.sub("root");
                sch.root = Box(r.vec("lo", Vec(), d), r.vec("hi", Vec(), d));
                if (sch.root.lo.size() != d || sch.root.hi.size() != d)
                    throw ConfigError(s.field("root"), "needs both lo and hi");
                r.finish();
            }
            for (std::size_t i = 0; i < st->size(); ++i) {
                Section e(&(*st)[i], s.field("stages") + "[" + std::to_string(i) + "]");
                StageSpec spec;
                if (!e.has("k")) throw ConfigError(e.field("k"), "missing");
                spec.k = static_cast<int>(e.integer("k", 0, 1)) - 1;
                if (spec.k >= d) throw ConfigError(e.field("k"), "exceeds the dimension");
                spec.s = static_cast<int>(e.integer("s", 2, 1));
                if (!e.has("eps")) throw ConfigError(e.field("eps"), "missing");
                spec.eps = e.num("eps", -1.0);
                spec.lambda = e.num("lambda", 1.0);
                e.finish();
                sch.stages.push_back(spec);
            }
            sch.depth = static_cast<int>(s.integer("depth", static_cast<long>(sch.stages.size()) + 1, 1));
            sch.k_final = static_cast<int>(s.integer("k_final", (sch.depth - 1) % d + 1, 1)) - 1;
            if (sch.k_final >= d) throw ConfigError(s.field("k_final"), "exceeds the dimension");
            const std::string side = s.str("root_side", "high");
            if (side != "high" && side != "low") throw ConfigError(s.field("root_side"), "expected high or low");
            sch.root_side = side_from_name(side);
            validate(sch);
        } else {
            DefaultScheduleOptions o;
            const int depth = static_cast<int>(s.integer("depth", 4, 1));
            o.gap_ratio = s.num("gap_ratio", o.gap_ratio);
            if (!(o.gap_ratio >= 0 && o.gap_ratio < 0.5))
                throw ConfigError(s.field("gap_ratio"), "must lie in [0, 0.5) so that eps < h/2");
            o.contraction = s.positive("contraction", o.contraction);
            o.s_min = static_cast<int>(s.integer("s_min", o.s_min, 1));
            o.lambda = s.num("lambda", o.lambda);
            sch = default_schedule(d, c, depth, o);
        }
        s.finish();
        build_tree(sch);
    } catch (const GeometryError& e) {
        throw ConfigError(stage_field(e), std::string("geometry: ") + e.what());
    }
    return sch;
}

struct ModelBundle {
    std::string type;
    std::shared_ptr<const Model> model;
    std::shared_ptr<const StagedModel> staged;  // set for staged2p
    std::shared_ptr<const BoxTree> tree;        // set for staged2p
};

inline ModelBundle read_model(Setup& su, const std::string& default_type, const std::vector<std::string>& allowed,
                              int default_dim) {
    Section m = su.top.sub("model");
    ModelBundle b;
    b.type = m.str("type", default_type);
    if (std::find(allowed.begin(), allowed.end(), b.type) == allowed.end()) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw ConfigError(m.field("type"), "'" + b.type + "' is not usable here (expected one of: " + list + ")");
    }
    if (b.type == "staged2p") {
        StagedConfig c;
        c.stretch = m.num("stretch", c.stretch);
        c.initial_stretch = m.num("initial_stretch", c.initial_stretch);
        c.initial_gap_ratio = m.num("initial_gap_ratio", c.initial_gap_ratio);
        c.tip_start_ratio = m.num("tip_start_ratio", c.tip_start_ratio);
        c.tip_end_ratio = m.num("tip_end_ratio", c.tip_end_ratio);
        c.column_ratio = m.num("column_ratio", c.column_ratio);
        c.offset_end_ratio = m.num("offset_end_ratio", c.offset_end_ratio);
        c.leaf_points = static_cast<int>(m.integer("leaf_points", c.leaf_points));
        c.diag_points = static_cast<int>(m.integer("diag_points", c.diag_points));
        c.vert_points = static_cast<int>(m.integer("vert_points", c.vert_points));
        c.cap_points = static_cast<int>(m.integer("cap_points", c.cap_points));
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("model", e.what());
        }
        SplitSchedule sch = read_schedule(su.top.sub("schedule"), default_dim);
        try {
            auto tree = std::make_shared<BoxTree>(build_tree(sch));
            b.staged = std::make_shared<StagedModel>(*tree, c);
            b.tree = tree;
        } catch (const GeometryError& e) {
            throw ConfigError(stage_field(e), std::string("geometry: ") + e.what());
        } catch (const std::invalid_argument& e) {
            throw ConfigError("model", e.what());
        }
        b.model = b.staged;
    } else if (b.type == "sqrt2-curve") {
        b.model = std::make_shared<SinTorusModel>(make_sqrt2_sin_curve());
    } else if (b.type == "parabola") {
        b.model = std::make_shared<OneParamModel>(make_parabola());
    } else if (b.type == "sin-torus") {
        const json* A = m.raw("A");
        if (!A || !A->is_array() || A->empty()) throw ConfigError(m.field("A"), "expected a non-empty array of rows");
        const int rows = static_cast<int>(A->size());
        Mat M;
        for (int i = 0; i < rows; ++i) {
            auto r = Section::number_array((*A)[i], m.field("A") + "[" + std::to_string(i) + "]");
            if (i == 0) M.resize(rows, static_cast<int>(r.size()));
            if (static_cast<int>(r.size()) != M.cols() || r.empty())
                throw ConfigError(m.field("A") + "[" + std::to_string(i) + "]", "rows must have equal nonzero length");
            for (int j = 0; j < M.cols(); ++j) M(i, j) = r[j];
        }
        Vec bb = m.vec("b", Vec::Zero(rows), rows);
        b.model = std::make_shared<SinTorusModel>(make_sin_torus(M, bb));
    }
    m.finish();
    return b;
}

struct GfDefaults {
    GfOptions opt;
    double delta_leaf = 0;  // > 0: delta_success = delta_leaf * leaf_diameter^2
};

inline GfOptions read_gf(Setup& su, GfDefaults def, const ModelBundle* mb) {
    Section g = su.top.sub("gf");
    GfOptions o = def.opt;
    o.t_max = g.positive("t_max", o.t_max);
    o.rel_tol = g.positive("rel_tol", o.rel_tol);
    o.abs_tol = g.positive("abs_tol", o.abs_tol);
    o.g_tol = g.positive("g_tol", o.g_tol);
    o.max_steps = g.integer("max_steps", o.max_steps, 1);
    o.record_stride = static_cast<int>(g.integer("record_stride", o.record_stride, 1));
    o.dwell_fraction = g.positive("dwell_fraction", o.dwell_fraction);
    o.h_max = g.positive("h_max", o.h_max);
    const bool has_abs = g.has("delta_success");
    const bool has_leaf = g.has("delta_success_leaf");
    if (has_abs && has_leaf)
        throw ConfigError(g.field("delta_success_leaf"), "give either delta_success or delta_success_leaf");
    if (has_abs) {
        o.delta_success = g.positive("delta_success", 1.0);
    } else {
        const double leaf = g.num("delta_success_leaf", def.delta_leaf);
        if (has_leaf && !(leaf > 0)) throw ConfigError(g.field("delta_success_leaf"), "must be positive");
        if (leaf > 0) {
            if (!mb || !mb->tree) throw ConfigError(g.field("delta_success_leaf"), "needs a staged model");
            const double diam = leaf_diameter(mb->tree->schedule);
            o.delta_success = leaf * diam * diam;
        }
    }
    g.finish();
    return o;
}

struct SamplerSpec {
    TargetSampler sampler;
    json description;
};

inline SamplerSpec read_sampler(Setup& su, const std::string& default_type, int d, const ModelBundle& mb) {
    Section s = su.top.sub("sampler");
    SamplerSpec out;
    const std::string type = s.str("type", default_type);
    out.description = {{"type", type}};
    if (type == "f0") {
        if (!mb.tree) throw ConfigError(s.field("type"), "f0 sampling needs a staged model");
        out.sampler = f0_sampler(mb.tree);
    } else if (type == "uniform") {
        Box box = mb.tree ? mb.tree->root() : cube_box(d, 1.0);
        if (s.has("box")) {
            Section bx = s.sub("box");
            box = Box(bx.vec("lo", box.lo, d), bx.vec("hi", box.hi, d));
            for (int i = 0; i < d; ++i)
                if (!(box.lo[i] < box.hi[i])) throw ConfigError(s.field("box"), "needs lo < hi in every coordinate");
            bx.finish();
        }
        out.description["box"] = to_json(box);
        out.sampler = uniform_sampler(box);
    } else if (type == "gaussian") {
        Vec mean = s.vec("mean", Vec::Zero(d), d);
        const double sigma = s.positive("sigma", 1.0);
        out.description["mean"] = to_std(mean);
        out.description["sigma"] = sigma;
        out.sampler = gaussian_sampler(mean, sigma);
    } else {
        throw ConfigError(s.field("type"), "expected f0, uniform or gaussian");
    }
    s.finish();
    return out;
}

inline void finish_config(Setup& su) { su.top.finish(); }

// ---------------------------------------------------------------- plotting helpers

inline XY proj(const Vec& x) { return {x[0], x[1]}; }

inline void plot_level_curves(SvgPlot& plot, const StagedModel& m, int samples) {
    const int depth = m.tree().depth();
    static const char* colors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    for (int n = 1; n <= depth; ++n) {
        std::vector<XY> pts;
        for (const auto& p : level_curve(m, m.stage_boundary(n), samples)) pts.push_back(proj(p.x));
        plot.polyline(pts, colors[(n - 1) % 6], 0.6);
    }
}

// ---------------------------------------------------------------- experiments

inline GfDefaults staged_defaults() {
    GfDefaults d;
    d.opt.t_max = 1e4;
    d.opt.rel_tol = 1e-8;
    d.opt.abs_tol = 1e-10;
    d.opt.g_tol = 1e-10;
    d.opt.max_steps = 200000;
    d.delta_leaf = 0.5;
    return d;
}

inline void exp_oracle_linear(Setup& su, RunContext* ctx) {
    Section p = su.top.sub("params");
    const int d = static_cast<int>(p.integer("d", 4, 1));
    const int W = static_cast<int>(p.integer("W", d, 1));
    if (W < d) throw ConfigError(p.field("W"), "must be at least d for a surjective model");
    const long n_models = p.integer("n_models", 10, 1);
    const int n_grid = static_cast<int>(p.integer("n_grid", 50, 2));
    const double t_lo = p.positive("t_lo", 0.4);
    const double t_hi = p.positive("t_hi", 20.0);
    if (!(t_hi > t_lo)) throw ConfigError(p.field("t_hi"), "must exceed t_lo");
    const double tol = p.positive("tolerance", 1e-6);
    p.finish();
    GfDefaults def;
    def.opt.rel_tol = 1e-11;
    def.opt.abs_tol = 1e-13;
    def.opt.t_max = t_hi;
    GfOptions opt = read_gf(su, def, nullptr);
    if (opt.t_max < t_hi) throw ConfigError("gf.t_max", "must cover the time grid up to t_hi");
    opt.stop_on_success = false;
    opt.dwell_fraction = 2.0;
    opt.record_stride = std::numeric_limits<int>::max();
    for (int i = 0; i < n_grid; ++i) opt.t_grid.push_back(t_lo + (t_hi - t_lo) * i / (n_grid - 1));
    finish_config(su);
    if (!ctx) return;

    Rng rng(su.seed);
    std::normal_distribution<double> g;
    std::vector<LinearModel> models;
    std::vector<Vec> targets;
    for (long i = 0; i < n_models; ++i) {
        models.push_back(make_linear_surjective(d, W, rng));
        Vec f(d);
        for (int j = 0; j < d; ++j) f[j] = g(rng);
        targets.push_back(f);
    }
    std::vector<std::vector<double>> dev(n_models);
    std::vector<long> steps(n_models);
    parallel_for(n_models, su.threads, [&](long i) {
        Trajectory tr = integrate(models[i], targets[i], opt);
        dev[i].assign(n_grid, std::numeric_limits<double>::infinity());
        for (const auto& s : tr.samples) {
            auto it = std::find(opt.t_grid.begin(), opt.t_grid.end(), s.t);
            if (it != opt.t_grid.end())
                dev[i][it - opt.t_grid.begin()] = (s.w - models[i].closed_form(targets[i], s.t)).norm();
        }
        steps[i] = tr.steps;
    });
    std::vector<json> rows;
    double worst = 0, worst_norm = 0;
    auto csv = ctx->open("deviation.csv");
    csv << "model,t,deviation\n";
    for (long i = 0; i < n_models; ++i) {
        const double mx = *std::max_element(dev[i].begin(), dev[i].end());
        const double nz = mx / (1.0 + targets[i].norm());
        worst = std::max(worst, mx);
        worst_norm = std::max(worst_norm, nz);
        rows.push_back({{"model", i}, {"d", d}, {"W", W}, {"target", to_std(targets[i])},
                        {"max_deviation", mx}, {"normalized_deviation", nz}, {"steps", steps[i]}});
        for (int k = 0; k < n_grid; ++k) csv << i << ',' << fmt(opt.t_grid[k]) << ',' << fmt(dev[i][k]) << '\n';
    }
    ctx->write_jsonl("results.jsonl", rows);
    ctx->summary = {{"models", n_models}, {"d", d}, {"W", W}, {"grid_points", n_grid},
                    {"max_deviation", worst}, {"max_normalized_deviation", worst_norm}};
    ctx->check("closed_form_deviation", worst_norm <= tol, {{"value", worst_norm}, {"threshold", tol}});
}

inline std::vector<json> located_records(const std::vector<TargetRecord>& recs, const BoxTree* tree) {
    std::vector<json> rows;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        json r = to_json(recs[i]);
        r["index"] = i;
        if (tree) r["in_f0"] = locate(*tree, recs[i].f).reached_leaf(*tree);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void verdict_csv(RunContext& ctx, const FractionEstimate& e) {
    auto os = ctx.open("verdicts.csv");
    os << "verdict,count\n";
    for (const char* v : {"Learnable", "Trapped", "Budget"}) {
        auto it = e.verdicts.find(v);
        os << v << ',' << (it == e.verdicts.end() ? 0 : it->second) << '\n';
    }
}

inline void exp_learn2p(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "staged2p", {"staged2p"}, 2);
    const int d = mb.model->out_dim();
    SamplerSpec sp = read_sampler(su, "f0", d, mb);
    GfOptions opt = read_gf(su, staged_defaults(), &mb);
    Section p = su.top.sub("params");
    const long n = p.integer("n_targets", 200, 1);
    const double min_fraction = p.num("min_fraction", sp.description["type"] == "f0" ? 0.99 : 0.0);
    const long n_traj = p.integer("trajectories", 4, 0);
    const int curve_samples = static_cast<int>(p.integer("curve_samples", 4000, 2));
    const double max_uptick = p.num("max_loss_uptick", 1e-9);
    p.finish();
    finish_config(su);
    if (!ctx) return;

    Rng rng(su.seed);
    LearnableResult lr = learnable_fraction(*mb.model, sp.sampler, n, opt, rng, su.threads);
    ctx->write_jsonl("results.jsonl", located_records(lr.records, mb.tree.get()));
    verdict_csv(*ctx, lr.estimate);

    long u_viol = 0, bound_bad = 0;
    double uptick = 0;
    for (const auto& r : lr.records) {
        u_viol += r.u_violations;
        bound_bad += !r.bound_ok;
        uptick = std::max(uptick, r.max_uptick);
    }
    GfOptions fine = opt;
    fine.record_stride = 1;
    std::vector<Trajectory> trs;
    for (long i = 0; i < std::min(n_traj, n); ++i) {
        trs.push_back(integrate(*mb.model, lr.records[i].f, fine));
        char name[64];
        std::snprintf(name, sizeof name, "trajectory_%03ld.csv", i);
        auto os = ctx->open(name);
        write_trajectory_csv(os, trs.back());
    }
    {
        auto os = ctx->open("level_curves.csv");
        os << "level,u,v";
        for (int j = 0; j < d; ++j) os << ",x" << j + 1;
        os << '\n';
        for (int lev = 1; lev <= mb.tree->depth(); ++lev) {
            const double u = mb.staged->stage_boundary(lev);
            for (const auto& pt : level_curve(*mb.staged, u, curve_samples)) {
                os << lev << ',' << fmt(u) << ',' << fmt(pt.v);
                for (int j = 0; j < d; ++j) os << ',' << fmt(pt.x[j]);
                os << '\n';
            }
        }
    }
    if (su.svg) {
        const Box& root = mb.tree->root();
        const double pad = 0.05 * std::max(root.extent(0), root.extent(1));
        SvgPlot plot(root.lo[0] - pad, root.hi[0] + pad, root.lo[1] - pad, root.hi[1] + pad);
        plot.title("level curves at stage boundaries, trajectories in output space");
        plot.labels("x1", "x2");
        plot.rect(root.lo[0], root.lo[1], root.hi[0], root.hi[1], "#999999");
        for (const Box& b : mb.tree->leaves()) plot.rect(b.lo[0], b.lo[1], b.hi[0], b.hi[1], "#bbbbbb", "#f3f3f3");
        plot_level_curves(plot, *mb.staged, curve_samples);
        for (std::size_t i = 0; i < trs.size(); ++i) {
            std::vector<XY> img;
            for (const auto& s : trs[i].samples) img.push_back(proj(mb.model->value(s.w)));
            plot.polyline(img, "#d62728", 1.2);
            plot.points({proj(lr.records[i].f)}, "#000000", 3);
        }
        ctx->open("learn2p.svg") << plot.str();
    }
    ctx->summary = {{"sampler", sp.description},
                    {"learnable", to_json(lr.estimate)},
                    {"delta_success", opt.delta_success},
                    {"u_violations", u_viol},
                    {"bound_failures", bound_bad},
                    {"max_loss_uptick", uptick}};
    ctx->check("learnable_fraction", lr.estimate.estimate >= min_fraction,
               {{"value", lr.estimate.estimate}, {"threshold", min_fraction}});
    ctx->check("u_monotone", u_viol == 0, {{"value", u_viol}});
    ctx->check("loss_nonincreasing", uptick <= max_uptick, {{"value", uptick}, {"threshold", max_uptick}});
    ctx->check("distance_bound", bound_bad == 0, {{"value", bound_bad}});
}

inline void exp_f0_measure(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "staged2p", {"staged2p"}, 2);
    const int d = mb.model->out_dim();
    SamplerSpec sp = read_sampler(su, "uniform", d, mb);
    GfOptions opt = read_gf(su, staged_defaults(), &mb);
    Section p = su.top.sub("params");
    const long n = p.integer("n_targets", 200, 1);
    const long n_mc = p.integer("n_mc", 100000, 1);
    const double min_f0 = p.num("min_f0_learnable", 0.99);
    p.finish();
    finish_config(su);
    if (!ctx) return;

    Rng rng(su.seed);
    const double kept = kept_fraction(mb.tree->schedule);
    long hits = 0;
    for (long i = 0; i < n_mc; ++i) hits += locate(*mb.tree, sample_uniform(mb.tree->root(), rng)).reached_leaf(*mb.tree);
    const FractionEstimate mc = make_estimate(hits, n_mc, kZ99);
    LearnableResult lr = learnable_fraction(*mb.model, sp.sampler, n, opt, rng, su.threads);
    auto rows = located_records(lr.records, mb.tree.get());
    long in_f0 = 0, in_f0_ok = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i]["in_f0"].get<bool>()) {
            ++in_f0;
            in_f0_ok += lr.records[i].verdict == Verdict::Learnable;
        }
    const FractionEstimate learn99 = make_estimate(lr.estimate.n_success, n, kZ99);
    const double f0_share = in_f0 ? static_cast<double>(in_f0_ok) / in_f0 : 1.0;
    ctx->write_jsonl("results.jsonl", rows);
    verdict_csv(*ctx, lr.estimate);
    {
        auto os = ctx->open("summary.csv");
        os << "quantity,estimate,ci_lo,ci_hi\n";
        os << "kept_fraction," << fmt(kept) << ',' << fmt(kept) << ',' << fmt(kept) << '\n';
        os << "kept_fraction_mc," << fmt(mc.estimate) << ',' << fmt(mc.ci.lo) << ',' << fmt(mc.ci.hi) << '\n';
        os << "learnable_fraction," << fmt(lr.estimate.estimate) << ',' << fmt(lr.estimate.ci.lo) << ','
           << fmt(lr.estimate.ci.hi) << '\n';
    }
    ctx->summary = {{"kept_fraction", kept},
                    {"kept_fraction_mc", to_json(mc)},
                    {"learnable", to_json(lr.estimate)},
                    {"f0_targets", in_f0},
                    {"f0_targets_learnable", in_f0_ok},
                    {"delta_success", opt.delta_success}};
    ctx->check("kept_fraction_in_mc_ci99", mc.ci.lo <= kept && kept <= mc.ci.hi,
               {{"value", kept}, {"ci99", {mc.ci.lo, mc.ci.hi}}});
    ctx->check("learnable_not_below_kept", learn99.ci.hi >= kept,
               {{"ci99_hi", learn99.ci.hi}, {"kept_fraction", kept}});
    ctx->check("f0_targets_learnable", f0_share >= min_f0, {{"value", f0_share}, {"threshold", min_f0}});
}

inline void exp_sin_trap(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "sqrt2-curve", {"sqrt2-curve", "parabola", "sin-torus"}, 2);
    const int d = mb.model->out_dim();
    SamplerSpec sp = read_sampler(su, "uniform", d, mb);
    GfDefaults def;
    def.opt.t_max = 1000;
    GfOptions opt = read_gf(su, def, &mb);
    Section p = su.top.sub("params");
    const long n = p.integer("n_targets", 1000, 1);
    const auto deltas = p.nums("deltas", {1e-1, 1e-2, 1e-3, 1e-4});
    if (deltas.empty()) throw ConfigError(p.field("deltas"), "must not be empty");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0)) throw ConfigError(p.field("deltas") + "[" + std::to_string(i) + "]", "must be positive");
        if (i && !(deltas[i] < deltas[i - 1]))
            throw ConfigError(p.field("deltas") + "[" + std::to_string(i) + "]", "deltas must be strictly decreasing");
    }
    const Vec trap = p.vec("trap_target", d == 2 ? Vec{{0.6, 0.37}} : Vec::Zero(d), d);
    const bool strict = p.flag("require_strict_decrease", true);
    p.finish();
    finish_config(su);
    if (!ctx) return;

    Rng rng(su.seed);
    std::vector<TargetRecord> recs;
    auto rows = trapped_fraction_vs_delta(*mb.model, sp.sampler, deltas, n, opt, rng, &recs, su.threads);
    ctx->write_jsonl("results.jsonl", located_records(recs, nullptr));
    {
        auto os = ctx->open("trapped_fraction.csv");
        os << "delta,fraction_below,ci_lo,ci_hi\n";
        for (const auto& r : rows)
            os << fmt(r.delta) << ',' << fmt(r.fraction.estimate) << ',' << fmt(r.fraction.ci.lo) << ','
               << fmt(r.fraction.ci.hi) << '\n';
    }
    GfOptions fine = opt;
    fine.record_stride = 1;
    Trajectory tr = integrate(*mb.model, trap, fine);
    {
        auto os = ctx->open("trap_trajectory.csv");
        write_trajectory_csv(os, tr);
    }
    if (su.svg && d == 2 && mb.model->in_dim() == 1) {
        SvgPlot plot(-1.1, 1.1, -1.1, 1.1);
        plot.title("gradient-flow image on the curve");
        plot.labels("x1", "x2");
        const double w_end = tr.back().w[0];
        const double span = std::max(20.0, std::abs(w_end) + 5.0);
        std::vector<XY> curve, img;
        for (int i = 0; i <= 8000; ++i) curve.push_back(proj(mb.model->value(Vec::Constant(1, -span + 2 * span * i / 8000.0))));
        plot.polyline(curve, "#cccccc", 0.5);
        const int steps = 400;
        for (int i = 0; i <= steps; ++i) img.push_back(proj(mb.model->value(Vec::Constant(1, w_end * i / steps))));
        plot.polyline(img, "#d62728", 1.5);
        plot.points({proj(mb.model->value(Vec::Zero(1)))}, "#2ca02c", 4);
        plot.points({proj(mb.model->value(tr.back().w))}, "#d62728", 4);
        plot.points({proj(trap)}, "#1f77b4", 4);
        ctx->open("sin_trap.svg") << plot.str();
    }
    json table = json::array();
    bool decreasing = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        table.push_back({{"delta", rows[i].delta}, {"fraction", to_json(rows[i].fraction)}});
        if (i && (strict ? !(rows[i].fraction.estimate < rows[i - 1].fraction.estimate)
                         : rows[i].fraction.estimate > rows[i - 1].fraction.estimate))
            decreasing = false;
    }
    ctx->summary = {{"fraction_below_delta", table},
                    {"trap_target", {{"target", to_std(trap)},
                                     {"verdict", verdict_name(tr.verdict)},
                                     {"w_end", to_std(tr.back().w)},
                                     {"final_loss", tr.back().loss},
                                     {"grad_norm", tr.back().grad_norm}}}};
    ctx->check("fraction_decreasing", decreasing, {{"strict", strict}});
    ctx->check("trap_target_trapped", tr.verdict == Verdict::Trapped, {{"verdict", verdict_name(tr.verdict)}});
}

inline void exp_barrier(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "staged2p", {"staged2p", "sin-torus", "sqrt2-curve", "parabola"}, 3);
    GfDefaults def;
    def.opt.t_max = 200;
    GfOptions opt = read_gf(su, def, &mb);
    Section p = su.top.sub("params");
    const double l = p.positive("l", 0.1);
    const double r = p.positive("radius", barrier_radius(0.5 * l * l));
    const int grid = static_cast<int>(p.integer("grid", 400, 2));
    const bool control = p.flag("control", mb.tree != nullptr);
    if (control && !mb.tree) throw ConfigError(p.field("control"), "needs a staged model");
    p.finish();
    finish_config(su);
    BarrierTarget bt;
    try {
        bt = barrier_target(*mb.model, l);
    } catch (const std::runtime_error& e) {
        throw ConfigError("model", e.what());
    }
    if (!ctx) return;

    BarrierReport rep = barrier_certificate(*mb.model, bt.f0, r, grid, opt);
    std::vector<json> rows;
    json main = to_json(rep);
    main["role"] = "barrier";
    main["target"] = to_std(bt.f0);
    rows.push_back(main);
    std::optional<BarrierReport> ctl;
    if (control) {
        Rng rng(su.seed);
        Vec f = sample_f0(*mb.tree, rng);
        ctl = barrier_certificate(*mb.model, f, r, grid, opt);
        json c = to_json(*ctl);
        c["role"] = "control";
        c["target"] = to_std(f);
        rows.push_back(c);
    }
    ctx->write_jsonl("results.jsonl", rows);
    GfOptions fine = opt;
    fine.record_stride = 1;
    {
        auto os = ctx->open("barrier_trajectory.csv");
        write_trajectory_csv(os, integrate(*mb.model, bt.f0, fine));
    }
    ctx->summary = {{"l", l}, {"radius", r}, {"barrier", main}};
    if (ctl) ctx->summary["control"] = rows.back();
    ctx->check("certified", rep.certified, {{"min_excess", rep.min_excess}});
    ctx->check("stayed_inside", rep.stayed_inside, {{"max_w_norm", rep.max_w_norm}, {"radius", r}});
    ctx->check("trapped", rep.verdict == Verdict::Trapped, {{"verdict", verdict_name(rep.verdict)}});
    ctx->check("terminal_loss_above_bound", rep.terminal_loss >= rep.loss_lower_bound,
               {{"terminal_loss", rep.terminal_loss}, {"lower_bound", rep.loss_lower_bound}});
    if (ctl) ctx->check("control_not_certified", !ctl->certified, {{"min_excess", ctl->min_excess}});
}

inline void exp_sphere(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "staged2p", {"staged2p", "sin-torus", "sqrt2-curve", "parabola"}, 3);
    const int d = mb.model->out_dim();
    GfDefaults def = staged_defaults();
    def.opt.t_max = 50;
    if (!mb.tree) def.delta_leaf = 0;
    GfOptions opt = read_gf(su, def, &mb);
    Section p = su.top.sub("params");
    const int ws = static_cast<int>(p.integer("sphere_dim", mb.model->in_dim(), 1));
    if (ws + 1 > d) throw ConfigError(p.field("sphere_dim"), "sphere_dim + 1 must not exceed the output dimension");
    const double radius = p.positive("radius", 0.3);
    const Vec center = p.vec("center", mb.tree ? mb.tree->root().center() : Vec(Vec::Zero(d)), d);
    const int grid = static_cast<int>(p.integer("grid", 1000, 2));
    const std::string frame = p.str("frame", "axes");
    if (frame != "axes" && frame != "random") throw ConfigError(p.field("frame"), "expected axes or random");
    const double min_ratio = p.num("min_ratio", 0.9);
    p.finish();
    finish_config(su);
    if (!ctx) return;

    Rng rng(su.seed);
    SphereEmbedding g = frame == "axes" ? sphere_embedding_axes(ws, center, radius)
                                        : sphere_embedding(ws, center, radius, rng);
    SweepReport rep = sphere_sweep(*mb.model, g, grid, opt, su.threads);
    std::vector<json> rows;
    auto csv = ctx->open("sphere.csv");
    csv << "index";
    for (int j = 0; j <= ws; ++j) csv << ",y" << j + 1;
    csv << ",loss\n";
    for (std::size_t i = 0; i < rep.grid.size(); ++i) {
        rows.push_back({{"index", i}, {"y", to_std(rep.grid[i])}, {"target", to_std(g(rep.grid[i]))},
                        {"loss", rep.losses[i]}});
        csv << i;
        for (int j = 0; j <= ws; ++j) csv << ',' << fmt(rep.grid[i][j]);
        csv << ',' << fmt(rep.losses[i]) << '\n';
    }
    ctx->write_jsonl("results.jsonl", rows);
    ctx->summary = {{"sphere_dim", ws},          {"radius", radius},
                    {"center", to_std(center)},  {"points", rep.grid.size()},
                    {"horizon", opt.t_max},      {"max_loss", rep.max_loss},
                    {"bound", rep.bound},        {"witness_y", to_std(rep.witness_y)},
                    {"witness_target", to_std(rep.witness_target)}};
    ctx->check("max_loss_reaches_bound", rep.max_loss >= min_ratio * rep.bound,
               {{"max_loss", rep.max_loss}, {"threshold", min_ratio * rep.bound}});
}

inline void exp_occupancy(Setup& su, RunContext* ctx) {
    ModelBundle mb = read_model(su, "parabola", {"parabola", "sqrt2-curve", "sin-torus", "staged2p"}, 2);
    const int d = mb.model->out_dim(), W = mb.model->in_dim();
    Section p = su.top.sub("params");
    auto Ns = p.ints("N", {8, 16, 32, 64, 128});
    if (Ns.empty()) throw ConfigError(p.field("N"), "must not be empty");
    for (std::size_t i = 0; i < Ns.size(); ++i)
        if (Ns[i] < 2) throw ConfigError(p.field("N") + "[" + std::to_string(i) + "]", "must be at least 2");
    const long per_n = p.integer("budget_per_n", 200, 1);
    const long budget_fixed = p.integer("budget", 0, 0);
    OccupancyOptions base;
    base.cube_lo = p.vec("cube_lo", Vec::Constant(d, -1.0), d);
    base.cube_side = p.positive("cube_side", 2.0);
    base.expanding = p.flag("expanding", true);
    base.r0 = p.positive("r0", 1.0);
    base.max_doublings = static_cast<int>(p.integer("max_doublings", base.max_doublings, 0));
    if (!base.expanding) {
        base.param_lo = p.vec("param_lo", Vec(), W);
        base.param_hi = p.vec("param_hi", Vec(), W);
        if (base.param_lo.size() != W || base.param_hi.size() != W)
            throw ConfigError(p.field("param_lo"), "a fixed parameter box needs param_lo and param_hi");
    }
    const bool random_offset = p.flag("random_offset", true);
    const bool has_slope = p.has("slope_range");
    const auto slope_range = p.nums("slope_range", {});
    if (has_slope && slope_range.size() != 2) throw ConfigError(p.field("slope_range"), "expected [lo, hi]");
    const bool has_fill = p.has("fill_min");
    const double fill_min = p.num("fill_min", 0.0);
    p.finish();
    finish_config(su);
    if (Ns.size() < 3 && has_slope) throw ConfigError("params.N", "a slope needs at least three resolutions");
    if (!ctx) return;

    Rng rng(su.seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<OccupancyResult> pts;
    std::vector<json> rows;
    for (int N : Ns) {
        OccupancyOptions o = base;
        o.offset = Vec::Zero(d);
        if (random_offset)
            for (int j = 0; j < d; ++j) o.offset[j] = U(rng) / N;
        const long budget = budget_fixed > 0 ? budget_fixed : per_n * N;
        pts.push_back(occupancy(*mb.model, N, budget, o));
        rows.push_back({{"N", N}, {"occupied", pts.back().occupied}, {"fraction", pts.back().fraction(d)},
                        {"samples", pts.back().budget}, {"final_radius", pts.back().final_radius},
                        {"offset", to_std(o.offset)}});
    }
    double slope = std::numeric_limits<double>::quiet_NaN();
    if (Ns.size() >= 3) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& r : pts) {
            const double x = std::log(static_cast<double>(r.N)), y = std::log(static_cast<double>(r.occupied));
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double k = static_cast<double>(pts.size());
        slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    }
    ctx->write_jsonl("results.jsonl", rows);
    {
        auto os = ctx->open("occupancy.csv");
        os << "N,occupied,fraction,samples,final_radius\n";
        for (const auto& r : pts)
            os << r.N << ',' << r.occupied << ',' << fmt(r.fraction(d)) << ',' << r.budget << ','
               << fmt(r.final_radius) << '\n';
    }
    if (su.svg) {
        double ymax = 1;
        for (const auto& r : pts) ymax = std::max(ymax, static_cast<double>(r.occupied));
        const double nlo = *std::min_element(Ns.begin(), Ns.end()), nhi = *std::max_element(Ns.begin(), Ns.end());
        SvgPlot plot(nlo / 1.5, nhi * 1.5, 0.5, std::max(ymax, std::pow(nhi, d)) * 2, true);
        plot.title("occupied cells against grid resolution");
        plot.labels("N", "cells");
        std::vector<XY> line, full;
        for (const auto& r : pts) line.push_back({double(r.N), double(r.occupied)});
        for (double N : {nlo, nhi}) full.push_back({N, std::pow(N, d)});
        plot.polyline(full, "#bbbbbb", 1.0);
        plot.polyline(line, "#1f77b4", 1.5);
        plot.points(line, "#1f77b4", 3);
        ctx->open("occupancy.svg") << plot.str();
    }
    const auto& last = pts.back();
    ctx->summary = {{"model", mb.type}, {"slope", Ns.size() >= 3 ? json(slope) : json(nullptr)},
                    {"points", rows}, {"fraction_at_max_N", last.fraction(d)}};
    if (has_slope)
        ctx->check("slope_in_range", slope >= slope_range[0] && slope <= slope_range[1],
                   {{"value", slope}, {"range", slope_range}});
    if (has_fill)
        ctx->check("fill_fraction", last.fraction(d) > fill_min, {{"value", last.fraction(d)}, {"threshold", fill_min}});
}

// ---------------------------------------------------------------- registry and driver

struct ExperimentInfo {
    std::string name;
    std::string description;
    void (*fn)(Setup&, RunContext*);
};

inline const std::vector<ExperimentInfo>& experiments() {
    static const std::vector<ExperimentInfo> list = {
        {"learn2p", "staged two-parameter model: learnable fraction, u-monotonicity, level curves", exp_learn2p},
        {"sin-trap", "one-parameter sine curve: trapped target and fraction below delta", exp_sin_trap},
        {"barrier", "loss barrier certificate around the origin, with an F0 control", exp_barrier},
        {"sphere", "antipodal sphere sweep at a fixed horizon", exp_sphere},
        {"occupancy", "grid cells met by the model image against resolution", exp_occupancy},
        {"f0-measure", "kept fraction of the box tree against Monte-Carlo and flow results", exp_f0_measure},
        {"oracle-linear", "linear models against the closed-form flow", exp_oracle_linear},
    };
    return list;
}

inline const ExperimentInfo& find_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.name == name) return e;
    std::string list;
    for (const auto& e : experiments()) list += (list.empty() ? "" : ", ") + e.name;
    throw ConfigError("experiment", "unknown experiment '" + name + "' (expected one of: " + list + ")");
}

struct Parsed {
    std::string experiment;
    std::uint64_t seed = 0;
    int threads = 0;
    bool svg = true;
    std::string output_dir;
};

// Reads the top-level fields and dry-runs the experiment's own checks.
inline Parsed check_config(const json& cfg, RunContext* ctx = nullptr, int threads_override = -1,
                           bool no_svg = false) {
    if (!cfg.is_object()) throw ConfigError("", "config must be a JSON object");
    Section top(&cfg, "");
    const std::string schema = top.str("schema", kConfigSchema);
    if (schema != kConfigSchema)
        throw ConfigError("schema", "unsupported schema '" + schema + "' (expected " + kConfigSchema + ")");
    Parsed p;
    if (!top.has("experiment")) throw ConfigError("experiment", "missing");
    p.experiment = top.str("experiment", "");
    const ExperimentInfo& info = find_experiment(p.experiment);
    const json* seed = top.raw("seed");
    if (seed) {
        if (!seed->is_number_integer() || (seed->is_number_integer() && !seed->is_number_unsigned() && seed->get<long long>() < 0))
            throw ConfigError("seed", "expected a non-negative 64-bit integer");
        p.seed = seed->get<std::uint64_t>();
    }
    p.threads = static_cast<int>(top.integer("threads", 0, 0));
    if (threads_override >= 0) p.threads = threads_override;
    if (p.threads == 0) p.threads = default_threads();
    p.svg = top.flag("svg", true) && !no_svg;
    p.output_dir = top.str("output_dir", "");
    top.str("description", "");
    Setup su{top, p.seed, p.threads, p.svg};
    info.fn(su, ctx);
    return p;
}

// Empty result means the config is clean.
inline std::vector<std::string> validate_config(const json& cfg) {
    try {
        check_config(cfg);
    } catch (const ConfigError& e) {
        return {e.what()};
    }
    return {};
}

struct RunOptions {
    std::string out;      // overrides the config and the environment
    bool force = false;   // reuse a directory holding an earlier run
    int threads = -1;
    bool no_svg = false;
};

struct RunOutcome {
    int exit_code = 0;
    fs::path dir;
    json manifest;
    std::string error;
};

inline fs::path resolve_output_dir(const Parsed& p, const RunOptions& ro) {
    if (!ro.out.empty()) return ro.out;
    if (!p.output_dir.empty()) return p.output_dir;
    const char* root = std::getenv(kOutputRootEnv);
    return fs::path(root && *root ? root : "runs") / (p.experiment + "-" + std::to_string(p.seed));
}

// The run owns its directory: it must be empty, or hold an earlier run that --force replaces.
inline void claim_directory(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError("output_dir", dir.string() + " is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        const fs::path old = dir / "manifest.json";
        if (!force || !fs::exists(old))
            throw ConfigError("output_dir", dir.string() + " is not empty" +
                                                (fs::exists(old) ? " (use --force to replace the earlier run)" : ""));
        json prev = json::parse(std::ifstream(old), nullptr, false);
        if (prev.is_object() && prev.contains("files") && prev["files"].is_array())
            for (const auto& f : prev["files"])
                if (f.is_string() && fs::path(f.get<std::string>()).filename() == f.get<std::string>())
                    fs::remove(dir / f.get<std::string>());
        fs::remove(old);
        if (!fs::is_empty(dir)) throw ConfigError("output_dir", dir.string() + " holds files not owned by the earlier run");
    }
    fs::create_directories(dir);
}

inline RunOutcome run_experiment(const json& cfg, const RunOptions& ro = {}) {
    RunOutcome out;
    Parsed p = check_config(cfg, nullptr, ro.threads, ro.no_svg);
    out.dir = resolve_output_dir(p, ro);
    claim_directory(out.dir, ro.force);
    RunContext ctx;
    ctx.dir = out.dir;
    const std::string started = utc_now();
    std::string status = "pass";
    try {
        check_config(cfg, &ctx, ro.threads, ro.no_svg);
        for (const auto& a : ctx.assertions)
            if (!a.passed) status = "fail";
    } catch (const std::exception& e) {
        status = "error";
        out.error = e.what();
    }
    json asserts = json::array();
    for (const auto& a : ctx.assertions)
        asserts.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
    ctx.files.push_back("manifest.json");
    out.manifest = {{"schema", kRunSchema},
                    {"artifact_version", kVersion},
                    {"experiment", p.experiment},
                    {"seed", p.seed},
                    {"threads", p.threads},
                    {"config", cfg},
                    {"started", started},
                    {"finished", utc_now()},
                    {"status", status},
                    {"summary", ctx.summary},
                    {"assertions", asserts},
                    {"files", ctx.files}};
    if (!out.error.empty()) out.manifest["error"] = out.error;
    std::ofstream(out.dir / "manifest.json") << out.manifest.dump(2) << '\n';
    out.exit_code = status == "pass" ? 0 : 1;
    return out;
}

}  // namespace gfl::cli
