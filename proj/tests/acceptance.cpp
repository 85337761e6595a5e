// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each check recomputes its expected values through an independent
// oracle (see test_util.hpp) rather than trusting the library path.

#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cop3d/cli.hpp"
#include "cop3d/config.hpp"
#include "cop3d/cop.hpp"
#include "cop3d/eval.hpp"
#include "cop3d/geometry.hpp"
#include "cop3d/kitti_io.hpp"
#include "cop3d/matching.hpp"
#include "cop3d/micronet.hpp"
#include "cop3d/synth.hpp"
#include "cop3d/trainer.hpp"
#include "test_util.hpp"

using namespace cop3d;
using micronet::Matrix;
using micronet::Rng;

namespace {

int g_failures = 0;

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

void report(int criterion, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", criterion,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Coupling derivative dz/dtheta vs the implicit finite-difference oracle.
// ---------------------------------------------------------------------------
void criterion_1() {
    Stopwatch watch;
    const geometry::CameraIntrinsics cam{700.0, 621.0, 187.5};
    Rng rng(20250801);

    auto random_box = [&]() {
        geometry::Box3D b;
        b.l = rng.uniform(1.0, 5.0);
        b.w = rng.uniform(0.5, 2.5);
        b.h = rng.uniform(0.8, 2.2);
        b.center = {rng.uniform(-10.0, 10.0), rng.uniform(-1.0, 2.0),
                    rng.uniform(6.0, 60.0)};
        b.yaw = geometry::wrap_angle(rng.uniform(-geometry::kPi, geometry::kPi));
        return b;
    };
    auto random_corner = [&](const geometry::Box3D& b) {
        return geometry::CornerOffset::of(b, rng.uniform() < 0.5 ? -1 : 1,
                                          rng.uniform() < 0.5 ? -1 : 1,
                                          rng.uniform() < 0.5 ? -1 : 1);
    };

    int checked = 0;
    double worst = 0.0;
    while (checked < 500) {
        const geometry::Box3D b = random_box();
        const geometry::CornerOffset corner = random_corner(b);
        const double x = b.center.x, z = b.center.z, th = b.yaw;
        const geometry::PartialsF p = geometry::partials_F(cam, x, z, corner, th);
        // Non-degenerate draw: both partials well away from zero so the
        // bisection-based oracle is conditioned to ~1e-6, and a bracket that
        // stays clear of z + beta <= 0.
        if (std::fabs(p.dF_dz) < 1e-3 || std::fabs(p.dF_dtheta) < 2.0) continue;
        const double corner_radius =
            std::sqrt(corner.dx * corner.dx + corner.dz * corner.dz);
        if (0.5 * z - corner_radius < 0.1) continue;

        const double closed = geometry::coupling_dz_dtheta(cam, x, z, corner, th);
        const double u0 = geometry::projection_F(cam, x, z, corner, th);
        const double eps = 1e-4;
        auto solve_at = [&](double theta) {
            return geometry::solve_depth_for_u(cam, corner, theta, x, u0, 0.5 * z,
                                               2.0 * z + 5.0);
        };
        const double fd = (solve_at(th + eps) - solve_at(th - eps)) / (2 * eps);
        const double rel =
            std::fabs(closed - fd) / std::max(std::fabs(closed), std::fabs(fd));
        worst = std::max(worst, rel);
        ++checked;
    }

    int nonzero = 0, total = 0;
    while (total < 2000) {
        const geometry::Box3D b = random_box();
        const geometry::CornerOffset corner = random_corner(b);
        try {
            if (std::fabs(geometry::coupling_dz_dtheta(cam, b.center.x, b.center.z,
                                                       corner, b.yaw)) > 0.0)
                ++nonzero;
            ++total;
        } catch (const UndefinedCoupling&) {
            ++total;
        }
    }

    const double secs = watch.seconds();
    const bool ok = worst < 1e-5 && nonzero >= static_cast<int>(0.99 * total) &&
                    secs < 5.0;
    report(1, ok,
           fmt("coupling dz/dtheta: max rel err %.2e over 500 configs "
               "(tol 1e-5), nonzero %d/%d, %.2fs (limit 5s)",
               worst, nonzero, total, secs));
}

// ---------------------------------------------------------------------------
// 2. End-to-end gradient fidelity through the full model and matched loss.
// ---------------------------------------------------------------------------
void criterion_2() {
    Stopwatch watch;

    trainer::ExperimentConfig cfg;
    cfg.chain.query_dim = 16;
    cfg.chain.hidden_dim = 16;
    cfg.chain.dropout = 0.0;
    cfg.train.mode = "set";
    cfg.train.n_queries = 4;

    // One multi-object scene so matching, background terms and every head
    // participate.
    const synth::Dataset ds = synth::make_dataset(cfg.scene, cfg.priors, 6, 11);
    std::vector<synth::ObservationSample> scene_objs;
    for (const auto& s : ds.train)
        if (s.scene_id == ds.train.front().scene_id) scene_objs.push_back(s);

    const int n_classes = static_cast<int>(cfg.priors.size());
    const int per_object = 4 + n_classes + 2;
    Matrix features(1, cfg.input_dim());
    std::vector<matching::GtObject> gts;
    for (size_t i = 0; i < scene_objs.size() &&
                       i < static_cast<size_t>(cfg.scene.objects_max); ++i) {
        const auto f = scene_objs[i].features(n_classes);
        for (int c = 0; c < per_object; ++c)
            features.at(0, static_cast<int>(i) * per_object + c) =
                f[static_cast<size_t>(c)];
        matching::GtObject g;
        g.class_index = scene_objs[i].class_index;
        g.box2d = {scene_objs[i].gt_box[0], scene_objs[i].gt_box[1],
                   scene_objs[i].gt_box[2], scene_objs[i].gt_box[3]};
        g.w = scene_objs[i].gt_box3d.w;
        g.h = scene_objs[i].gt_box3d.h;
        g.l = scene_objs[i].gt_box3d.l;
        g.yaw = scene_objs[i].gt_box3d.yaw;
        g.depth = scene_objs[i].gt_box3d.center.z;
        gts.push_back(g);
    }

    const cop::DecodeContext ctx = cfg.decode_context();
    const matching::LossWeights w;

    // A seed whose ReLU pre-activations sit away from the kink.
    uint64_t seed = 1;
    cop::CopModel model;
    cop::ForwardTrace trace;
    for (; seed < 64; ++seed) {
        Rng rng(seed);
        model = cop::CopModel::make(cfg.chain, cfg.input_dim(), n_classes,
                                    cfg.train.n_queries, rng);
        trace = cop::ForwardTrace{};
        (void)cop::model_forward(model, features, false, nullptr, &trace);
        double nearest = 1e9;
        for (const auto& chain : trace.an)
            for (const auto& an : chain)
                for (double v : an.inputs[1].data)
                    nearest = std::min(nearest, std::fabs(v));
        if (nearest > 1e-3) break;
    }

    // Freeze the assignment: the matching step is a constant in the loss.
    const cop::RawOutputs raw = cop::model_forward(model, features, false, nullptr);
    const auto preds = cop::decode_predictions(raw, ctx);
    const Matrix cost = matching::build_cost_matrix(preds, gts, cfg.cost_w);
    const matching::Assignment assignment = matching::hungarian(cost);

    cop::ForwardTrace tr;
    const cop::RawOutputs out = cop::model_forward(model, features, false, nullptr, &tr);
    const matching::LossOutput lo = matching::loss_total(out, ctx, gts, assignment, w);
    const cop::CopGradients analytic = cop::model_backward(model, tr, lo.grad);

    auto params = model.parameters();
    std::vector<const Matrix*> ap;
    for (const Matrix& g : analytic.params) ap.push_back(&g);
    auto loss_fn = [&]() {
        const cop::RawOutputs r = cop::model_forward(model, features, false, nullptr);
        return matching::loss_total(r, ctx, gts, assignment, w).terms.total;
    };
    const micronet::GradCheckResult r = micronet::grad_check(params, ap, loss_fn, 1e-5);

    const double secs = watch.seconds();
    const bool ok = r.max_rel_error < 1e-4 && secs < 30.0;
    report(2, ok,
           fmt("end-to-end grad check: max rel err %.2e over %zu tensors "
               "(tol 1e-4), %.1fs (limit 30s)",
               r.max_rel_error, params.size(), secs));
}

// ---------------------------------------------------------------------------
// 3. Residual identity with zero AttributeNet output weights (bitwise).
// ---------------------------------------------------------------------------
void criterion_3() {
    Rng rng(77);
    cop::ChainConfig cfg;
    cfg.query_dim = 32;
    cfg.hidden_dim = 32;
    cop::CopModel model = cop::CopModel::make(cfg, 9, 3, 1, rng);
    for (auto& chain : model.chains)
        for (auto& an : chain) {
            auto& lin = std::get<micronet::LinearLayer>(an.layers[2]);
            lin.W.fill(0.0);
            lin.b.fill(0.0);
        }

    Matrix q(4, cfg.query_dim);
    for (double& v : q.data) v = rng.uniform(-2.0, 2.0);
    const cop::ChainResult res = cop::chain_forward(model, q);

    bool bitwise = true;
    for (const auto& chain : res.f_tilde)
        for (const Matrix& f : chain) {
            if (!f.same_shape(q)) bitwise = false;
            for (size_t i = 0; i < q.size() && bitwise; ++i)
                if (f.data[i] != q.data[i]) bitwise = false;
        }
    report(3, bitwise,
           "residual aggregation with zero AN output weights reproduces q "
           "bitwise for every chained attribute");
}

// ---------------------------------------------------------------------------
// 4. Hungarian optimality vs exhaustive permutation minimum.
// ---------------------------------------------------------------------------
void criterion_4() {
    Rng rng(4242);
    double worst = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const int K = 1 + static_cast<int>(rng.below(7));
        const int N = 1 + static_cast<int>(rng.below(7));
        Matrix cost(K, N);
        for (double& v : cost.data) v = rng.uniform(-10.0, 10.0);
        const matching::Assignment a = matching::hungarian(cost);
        double total = 0.0;
        for (const auto& [r, c] : a.pairs) total += cost.at(r, c);
        const double brute = oracle::brute_force_assignment_cost(cost);
        worst = std::max(worst, std::fabs(total - brute));
        if (std::fabs(total - brute) > 1e-9 ||
            static_cast<int>(a.pairs.size()) != std::min(K, N))
            ok = false;
    }
    report(4, ok,
           fmt("hungarian equals brute-force permutation minimum on 200 random "
               "matrices (min side <= 7), max |diff| %.2e",
               worst));
}

// ---------------------------------------------------------------------------
// 5. Rotated 3D IoU vs Monte-Carlo oracle plus exact analytic cases.
// ---------------------------------------------------------------------------
void criterion_5() {
    Rng rng(555);
    auto random_box = [&]() {
        geometry::Box3D b;
        b.l = rng.uniform(1.0, 5.0);
        b.w = rng.uniform(0.5, 2.5);
        b.h = rng.uniform(0.8, 2.2);
        b.center = {rng.uniform(-4.0, 4.0), rng.uniform(-1.0, 2.0),
                    rng.uniform(6.0, 40.0)};
        b.yaw = geometry::wrap_angle(rng.uniform(-geometry::kPi, geometry::kPi));
        return b;
    };

    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        geometry::Box3D a = random_box();
        geometry::Box3D b = a;
        b.center.x += rng.uniform(-1.0, 1.0);
        b.center.z += rng.uniform(-1.0, 1.0);
        b.center.y += rng.uniform(-0.5, 0.5);
        b.w *= rng.uniform(0.7, 1.3);
        b.l *= rng.uniform(0.7, 1.3);
        b.h *= rng.uniform(0.7, 1.3);
        b.yaw = geometry::wrap_angle(b.yaw + rng.uniform(-0.7, 0.7));
        const double exact = geometry::iou3d(a, b);
        const double mc = oracle::mc_iou3d(a, b, 1000000, rng);
        worst = std::max(worst, std::fabs(exact - mc));
    }

    geometry::Box3D unit;
    unit.center = {0, 0, 10};
    unit.w = unit.h = unit.l = 1.0;
    geometry::Box3D shifted = unit;
    shifted.center.x += 0.5;
    geometry::Box3D yawed = unit;
    yawed.yaw = geometry::kPi / 4;
    const double e_ident = std::fabs(geometry::iou3d(unit, unit) - 1.0);
    const double e_shift = std::fabs(geometry::iou3d(unit, shifted) - 1.0 / 3.0);
    const double e_yawed =
        std::fabs(geometry::iou3d(unit, yawed) - 1.0 / std::sqrt(2.0));

    const bool ok = worst < 0.01 && e_ident < 1e-6 && e_shift < 1e-6 &&
                    e_yawed < 1e-6;
    report(5, ok,
           fmt("iou3d: max |exact - MC(1e6)| %.4f over 200 pairs (tol 0.01); "
               "analytic cases err %.1e / %.1e / %.1e (tol 1e-6)",
               worst, e_ident, e_shift, e_yawed));
}

// ---------------------------------------------------------------------------
// 6. AP40 vs the exhaustive PR-curve reference.
// ---------------------------------------------------------------------------
void criterion_6() {
    Rng rng(660);
    auto box_at = [](double x, double z) {
        geometry::Box3D b;
        b.center = {x, 1.0, z};
        b.w = 1.6;
        b.h = 1.5;
        b.l = 4.0;
        b.yaw = 0.0;
        return b;
    };

    double worst = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        const int n_gt = 1 + static_cast<int>(rng.below(6));
        std::vector<eval::GroundTruthObj> gts;
        for (int g = 0; g < n_gt; ++g)
            gts.push_back({g, 0, box_at(0, 15.0 + 8.0 * g)});

        const int n_det = 1 + static_cast<int>(rng.below(10));
        std::vector<eval::Detection> dets;
        std::vector<std::pair<double, bool>> scored;
        std::vector<bool> hit(static_cast<size_t>(n_gt), false);
        for (int d = 0; d < n_det; ++d) {
            const double conf = rng.uniform(0.05, 1.0);
            const int target = static_cast<int>(rng.below(static_cast<uint64_t>(n_gt)));
            const bool tp = rng.uniform() < 0.6 && !hit[static_cast<size_t>(target)];
            if (tp) hit[static_cast<size_t>(target)] = true;
            dets.push_back({target, 0, conf,
                            tp ? box_at(0, 15.0 + 8.0 * target)
                               : box_at(14.0, 15.0 + 8.0 * target)});
            scored.emplace_back(conf, tp);
        }
        const double got = eval::ap40(dets, gts, 0.5);
        const double want = oracle::reference_ap40(scored, n_gt);
        worst = std::max(worst, std::fabs(got - want));
        if (std::fabs(got - want) > 1e-9) ok = false;
    }

    // Perfect detector endpoint.
    std::vector<eval::GroundTruthObj> gts = {{0, 0, box_at(0, 20)},
                                             {1, 0, box_at(0, 30)}};
    std::vector<eval::Detection> perfect = {{0, 0, 0.9, box_at(0, 20)},
                                            {1, 0, 0.8, box_at(0, 30)}};
    const double p = eval::ap40(perfect, gts, 0.7);
    if (std::fabs(p - 100.0) > 1e-12) ok = false;

    report(6, ok,
           fmt("ap40 matches the exhaustive PR reference on 100 random sets "
               "(max |diff| %.2e); perfect detector scores %.1f",
               worst, p));
}

// ---------------------------------------------------------------------------
// 7. Headline mechanism claim: cop (S->A->D, residual) vs parallel heads on
//    the default ambiguous dataset, 5-seed batteries.
// ---------------------------------------------------------------------------
void criterion_7() {
    Stopwatch watch;

    // Default ambiguous dataset; trainer profile sized for the acceptance
    // budget (the library defaults train longer and wider).
    trainer::ExperimentConfig cfg;
    cfg.chain.query_dim = 48;
    cfg.chain.hidden_dim = 48;
    cfg.train.epochs = 200;
    cfg.train.lr_decay_epochs = {120, 170};

    auto battery_stats = [&](cop::Variant variant, int battery_index,
                             double& mean, double& stddev) {
        trainer::ExperimentConfig run_cfg = cfg;
        run_cfg.chain.variant = variant;
        run_cfg.chain.attributes = cop::parse_order("S,A,D");
        run_cfg.chain.residual = true;
        run_cfg.train.seeds.clear();
        for (uint64_t s = 1; s <= 5; ++s)
            run_cfg.train.seeds.push_back(1000 * static_cast<uint64_t>(battery_index) + s);
        const trainer::BatteryResult battery = trainer::run_seed_battery(run_cfg, 2);
        for (const auto& [name, st] : battery.stats)
            if (name == "depth_mae") {
                mean = st.mean;
                stddev = st.stddev;
            }
    };

    // Primary battery decides (a); (b) may fail in at most 1 of 5 fresh
    // batteries, so further batteries run only when the first one disagrees.
    double cop_mean = 0, cop_std = 0, par_mean = 0, par_std = 0;
    battery_stats(cop::Variant::Cop, 0, cop_mean, cop_std);
    battery_stats(cop::Variant::Parallel, 0, par_mean, par_std);
    const bool a_holds = cop_mean < par_mean;
    bool b_first = cop_std <= par_std;

    int b_passes = b_first ? 1 : 0;
    int b_total = 1;
    std::string extra;
    if (!b_first) {
        extra = " [battery 0 failed (b); running 4 fresh batteries]";
        for (int bat = 1; bat < 5; ++bat) {
            double cm, cs, pm, ps;
            battery_stats(cop::Variant::Cop, bat, cm, cs);
            battery_stats(cop::Variant::Parallel, bat, pm, ps);
            ++b_total;
            if (cs <= ps) ++b_passes;
            extra += fmt(" b%d:%s", bat, cs <= ps ? "ok" : "FAIL");
        }
    }
    const bool b_holds = (b_total - b_passes) <= 1;

    const double secs = watch.seconds();
    const bool ok = a_holds && b_holds && secs < 600.0;
    report(7, ok,
           fmt("cop vs parallel on the default ambiguous dataset: depth MAE "
               "mean %.4f vs %.4f (a:%s), std %.4f vs %.4f (b: %d/%d "
               "batteries)%s, %.0fs (limit 600s)",
               cop_mean, par_mean, a_holds ? "ok" : "FAIL", cop_std, par_std,
               b_passes, b_total, extra.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 8. Ablation grid: the emitted row set is exactly the factor product.
// ---------------------------------------------------------------------------
void criterion_8() {
    namespace fs = std::filesystem;
    trainer::ExperimentConfig cfg;
    cfg.n_scenes = 6;
    cfg.scene.objects_max = 3;
    cfg.chain.query_dim = 8;
    cfg.chain.hidden_dim = 8;
    cfg.chain.dropout = 0.0;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 16;
    cfg.train.seeds = {1, 2};
    cfg.train.lr_decay_epochs = {};

    const trainer::GridSpec spec;  // all 4 components x 3 subsets x 6 orders
    const auto rows = trainer::run_ablation_grid(cfg, spec, 2);

    const fs::path dir = fs::temp_directory_path() / "cop3d_acceptance_grid";
    fs::create_directories(dir);
    trainer::write_grid_csv((dir / "grid.csv").string(), rows);
    const auto rows2 = trainer::run_ablation_grid(cfg, spec, 1);
    trainer::write_grid_csv((dir / "grid2.csv").string(), rows2);
    const bool deterministic = slurp(dir / "grid.csv") == slurp(dir / "grid2.csv");

    // Expected row set = full cross product of the requested levels.
    std::set<std::string> expected;
    for (const auto& c : spec.components)
        for (const auto& a : spec.attribute_sets)
            for (const auto& o : spec.orders)
                for (const auto& v : spec.variants)
                    expected.insert(c + "|" + a + "|" + o + "|" + v);
    std::set<std::string> got;
    for (const auto& row : rows)
        got.insert(row.component + "|" + row.attribute_set + "|" + row.order +
                   "|" + row.variant);

    const bool ok = got == expected &&
                    rows.size() == spec.components.size() *
                                       spec.attribute_sets.size() *
                                       spec.orders.size() * spec.variants.size() &&
                    deterministic;
    fs::remove_all(dir);
    report(8, ok,
           fmt("ablation grid rows: %zu (expected %zu = 4x3x6x1), row set "
               "matches the factor product, deterministic CSV: %s",
               rows.size(), expected.size(), deterministic ? "yes" : "NO"));
}

// ---------------------------------------------------------------------------
// 9. KITTI I/O round trips.
// ---------------------------------------------------------------------------
void criterion_9() {
    namespace fs = std::filesystem;
    Rng rng(909);
    bool parse_ok = true;
    const char* types[4] = {"Car", "Pedestrian", "Cyclist", "Van"};
    for (int t = 0; t < 1000 && parse_ok; ++t) {
        kitti::KittiLabel lab;
        lab.type = types[rng.below(4)];
        lab.truncated = rng.uniform(0.0, 1.0);
        lab.occluded = static_cast<int>(rng.below(4));
        lab.alpha = rng.uniform(-3.14, 3.14);
        const double u = rng.uniform(0.0, 1100.0), v = rng.uniform(0.0, 300.0);
        lab.bbox = {u, v, u + rng.uniform(4.0, 140.0), v + rng.uniform(4.0, 70.0)};
        lab.h = rng.uniform(0.3, 3.0);
        lab.w = rng.uniform(0.3, 3.0);
        lab.l = rng.uniform(0.3, 8.0);
        lab.x = rng.uniform(-30.0, 30.0);
        lab.y = rng.uniform(-2.0, 3.0);
        lab.z = rng.uniform(4.0, 80.0);
        lab.rotation_y = rng.uniform(-3.14, 3.14);
        lab.has_score = rng.uniform() < 0.5;
        lab.score = rng.uniform(0.0, 1.0);

        // parse(format(x)) then one more round: identity on parsed values.
        const kitti::KittiLabel once =
            kitti::parse_label_line(kitti::format_label_line(lab));
        const std::string second = kitti::format_label_line(once);
        const kitti::KittiLabel twice = kitti::parse_label_line(second);
        if (kitti::format_label_line(twice) != second) parse_ok = false;
    }

    const synth::SceneConfig scene_cfg;
    const auto priors = synth::default_priors();
    const synth::Dataset ds = synth::make_dataset(scene_cfg, priors, 20, 404);
    std::vector<synth::ObservationSample> all = ds.train;
    all.insert(all.end(), ds.val.begin(), ds.val.end());

    const fs::path dir = fs::temp_directory_path() / "cop3d_acceptance_kitti";
    fs::remove_all(dir);
    kitti::export_dataset_kitti(all, priors, scene_cfg, dir.string());
    const auto back = kitti::import_dataset_kitti(dir.string(), priors, scene_cfg);

    bool round_ok = back.size() == all.size();
    double worst = 0.0;
    if (round_ok) {
        std::map<long, const synth::ObservationSample*> orig;
        for (const auto& s : all) orig[s.scene_id * 1000 + s.object_id] = &s;
        for (const auto& s : back) {
            const auto it = orig.find(s.scene_id * 1000 + s.object_id);
            if (it == orig.end()) {
                round_ok = false;
                break;
            }
            const auto& o = *it->second;
            for (double d :
                 {s.gt_box3d.center.x - o.gt_box3d.center.x,
                  s.gt_box3d.center.y - o.gt_box3d.center.y,
                  s.gt_box3d.center.z - o.gt_box3d.center.z,
                  s.gt_box3d.w - o.gt_box3d.w, s.gt_box3d.h - o.gt_box3d.h,
                  s.gt_box3d.l - o.gt_box3d.l, s.gt_box3d.yaw - o.gt_box3d.yaw})
                worst = std::max(worst, std::fabs(d));
        }
        if (worst > 1e-2) round_ok = false;
    }
    fs::remove_all(dir);
    report(9, parse_ok && round_ok,
           fmt("KITTI I/O: 1000 fuzzed label round trips %s; export/import "
               "worst Box3D field error %.4f (tol 1e-2)",
               parse_ok ? "identical" : "FAILED", worst));
}

// ---------------------------------------------------------------------------
// 10. Pearson vs an independent two-pass covariance route.
// ---------------------------------------------------------------------------
void criterion_10() {
    Rng rng(1010);
    double worst = 0.0;
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
        const size_t n = 16 + rng.below(200);
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = rng.gaussian();
        for (auto& v : b) v = rng.gaussian();
        const double r = eval::pearson(a, b);
        worst = std::max(worst, std::fabs(r - oracle::pearson_two_pass(a, b)));

        std::vector<double> scaled(a);
        const double s = rng.uniform(0.2, 4.0), off = rng.uniform(-5.0, 5.0);
        for (auto& v : scaled) v = s * v + off;
        if (std::fabs(eval::pearson(scaled, b) - r) > 1e-10) ok = false;
        for (auto& v : scaled) v = -v;
        if (std::fabs(eval::pearson(scaled, b) + r) > 1e-10) ok = false;
    }
    ok = ok && worst < 1e-12;
    report(10, ok,
           fmt("pearson matches the two-pass covariance oracle to %.1e "
               "(tol 1e-12) on 100 series; affine invariance holds",
               worst));
}

// ---------------------------------------------------------------------------
// 11. Determinism: re-running from resolved_config.txt reproduces every CSV
//     bytewise.
// ---------------------------------------------------------------------------
void criterion_11() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "cop3d_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);

    trainer::ExperimentConfig cfg;
    cfg.n_scenes = 10;
    cfg.scene.objects_max = 3;
    cfg.chain.query_dim = 8;
    cfg.chain.hidden_dim = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    cfg.train.seeds = {1, 2};
    cfg.train.lr_decay_epochs = {};
    const fs::path cfg_path = root / "exp.cfg";
    std::ofstream(cfg_path, std::ios::binary) << config::serialize(cfg);

    const fs::path out1 = root / "run1";
    const fs::path out2 = root / "run2";
    const int rc1 = cli::dispatch({"battery", "--config", cfg_path.string(),
                                   "--out", out1.string(), "--jobs", "2"});
    const int rc2 = cli::dispatch({"battery", "--config",
                                   (out1 / "resolved_config.txt").string(),
                                   "--out", out2.string(), "--jobs", "1"});

    bool ok = rc1 == 0 && rc2 == 0;
    int compared = 0;
    std::string mismatch;
    if (ok) {
        for (const auto& entry : fs::recursive_directory_iterator(out1)) {
            if (!entry.is_regular_file()) continue;
            const std::string ext = entry.path().extension().string();
            if (ext != ".csv" && entry.path().filename() != "resolved_config.txt")
                continue;
            const fs::path rel = fs::relative(entry.path(), out1);
            if (!fs::exists(out2 / rel) ||
                slurp(entry.path()) != slurp(out2 / rel)) {
                ok = false;
                mismatch = rel.string();
                break;
            }
            ++compared;
        }
        if (compared == 0) ok = false;
    }
    fs::remove_all(root);
    report(11, ok,
           fmt("battery re-run from resolved_config.txt reproduced %d CSV "
               "files bytewise%s%s",
               compared, mismatch.empty() ? "" : "; first mismatch: ",
               mismatch.c_str()));
}

} // namespace

int main() {
    std::printf("cop3d acceptance suite\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_11();
    if (g_failures == 0) {
        std::printf("all criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
}
