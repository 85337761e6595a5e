#include "cop3d/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>

namespace cop3d::trainer {

using micronet::Matrix;
using micronet::Rng;

void TrainerConfig::validate() const {
    if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (lr <= 0 || lr_decay_rate <= 0)
        throw InvalidConfig("learning rate and decay rate must be > 0");
    if (weight_decay < 0) throw InvalidConfig("weight_decay must be >= 0");
    if (seeds.empty()) throw InvalidConfig("seed list must not be empty");
    if (mode != "single" && mode != "set")
        throw InvalidConfig("trainer mode must be 'single' or 'set'");
    if (n_queries < 1) throw InvalidConfig("n_queries must be >= 1");
    if (depth_scale <= 0) throw InvalidConfig("depth_scale must be > 0");
    for (size_t i = 1; i < lr_decay_epochs.size(); ++i)
        if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            throw InvalidConfig("lr_decay_epochs must be strictly increasing");
}

void ExperimentConfig::validate() const {
    scene.validate();
    if (priors.empty()) throw InvalidConfig("need at least one class prior");
    for (const auto& p : priors) p.validate();
    if (n_scenes < 2) throw InvalidConfig("n_scenes must be >= 2");
    chain.validate();
    loss_w.validate();
    cost_w.validate();
    train.validate();
    if (iou_thresholds.size() != priors.size())
        throw InvalidConfig("need one IoU threshold per class");
    if (distance_edges.empty())
        throw InvalidConfig("distance_edges must not be empty");
    if (chain.variant == cop::Variant::Htl && train.htl_boundaries.size() != 2)
        throw InvalidConfig("htl variant needs two stage boundaries");
}

cop::DecodeContext ExperimentConfig::decode_context() const {
    cop::DecodeContext ctx;
    for (const auto& p : priors)
        ctx.prior_dims.push_back({p.mean_w, p.mean_h, p.mean_l});
    ctx.depth_scale = train.depth_scale;
    return ctx;
}

int ExperimentConfig::input_dim() const {
    const int per_object = 4 + static_cast<int>(priors.size()) + 2;
    return train.mode == "set" ? per_object * scene.objects_max : per_object;
}

namespace {

matching::GtObject to_gt(const synth::ObservationSample& s) {
    matching::GtObject g;
    g.class_index = s.class_index;
    g.box2d = {s.gt_box[0], s.gt_box[1], s.gt_box[2], s.gt_box[3]};
    g.w = s.gt_box3d.w;
    g.h = s.gt_box3d.h;
    g.l = s.gt_box3d.l;
    g.yaw = s.gt_box3d.yaw;
    g.depth = s.gt_box3d.center.z;
    return g;
}

/// Per-scene record used by set mode.
struct SceneBatch {
    long scene_id = 0;
    Matrix features;  // 1 x input_dim (padded object slots)
    std::vector<matching::GtObject> gts;
    std::vector<synth::ObservationSample> samples;
};

std::vector<SceneBatch> group_scenes(const std::vector<synth::ObservationSample>& samples,
                                     const ExperimentConfig& cfg) {
    const int n_classes = static_cast<int>(cfg.priors.size());
    const int per_object = 4 + n_classes + 2;
    std::map<long, std::vector<const synth::ObservationSample*>> by_scene;
    for (const auto& s : samples) by_scene[s.scene_id].push_back(&s);

    std::vector<SceneBatch> out;
    out.reserve(by_scene.size());
    for (auto& [id, objs] : by_scene) {
        SceneBatch sb;
        sb.scene_id = id;
        sb.features = Matrix(1, cfg.input_dim());
        int slot = 0;
        for (const auto* s : objs) {
            if (slot >= cfg.scene.objects_max) break;
            const auto f = s->features(n_classes);
            for (int i = 0; i < per_object; ++i)
                sb.features.at(0, slot * per_object + i) = f[static_cast<size_t>(i)];
            sb.gts.push_back(to_gt(*s));
            sb.samples.push_back(*s);
            ++slot;
        }
        out.push_back(std::move(sb));
    }
    return out;
}

Matrix stack_features(const std::vector<synth::ObservationSample>& samples,
                      int n_classes) {
    const int dim = 4 + n_classes + 2;
    Matrix X(static_cast<int>(samples.size()), dim);
    for (size_t r = 0; r < samples.size(); ++r) {
        const auto f = samples[r].features(n_classes);
        for (int c = 0; c < dim; ++c) X.at(static_cast<int>(r), c) = f[static_cast<size_t>(c)];
    }
    return X;
}

double current_lr(const TrainerConfig& tc, int epoch) {
    double lr = tc.lr;
    for (int boundary : tc.lr_decay_epochs)
        if (epoch >= boundary) lr *= tc.lr_decay_rate;
    return lr;
}

eval::AttributeErrors pair_errors(const cop::AttributePrediction& p,
                                  const matching::GtObject& g) {
    eval::AttributeErrors e;
    e.size_err = (std::fabs(p.w - g.w) + std::fabs(p.h - g.h) +
                  std::fabs(p.l - g.l)) / 3.0;
    e.angle_err = std::fabs(geometry::wrap_angle(p.yaw - g.yaw));
    e.depth_err = std::fabs(p.depth - g.depth);
    e.gt_depth = g.depth;
    return e;
}

/// Forward the val split in eval mode and return decoded predictions plus the
/// pairing used for attribute errors. Single mode pairs each sample with its
/// own prediction; set mode pairs via the training cost matrix.
struct ValOutputs {
    std::vector<eval::Detection> dets;
    std::vector<eval::GroundTruthObj> gts;
    std::vector<eval::AttributeErrors> pairs;
    double depth_mae = 0.0;
};

ValOutputs evaluate_split(const ExperimentConfig& cfg, const cop::CopModel& model,
                          const std::vector<synth::ObservationSample>& val,
                          const std::vector<SceneBatch>& val_scenes) {
    const cop::DecodeContext ctx = cfg.decode_context();
    ValOutputs out;
    double depth_abs = 0.0;
    long depth_n = 0;

    if (cfg.train.mode == "single") {
        const int n_classes = static_cast<int>(cfg.priors.size());
        const Matrix X = stack_features(val, n_classes);
        const cop::RawOutputs raw = cop::model_forward(model, X, false, nullptr);
        const auto preds = cop::decode_predictions(raw, ctx);
        for (size_t i = 0; i < val.size(); ++i) {
            const auto& s = val[i];
            const auto& p = preds[i];
            out.dets.push_back({s.scene_id, p.class_index, p.score,
                                cop::box3d_from_prediction(p, cfg.scene.camera,
                                                           cfg.scene.image_w,
                                                           cfg.scene.image_h)});
            out.gts.push_back({s.scene_id, s.class_index, s.gt_box3d});
            const auto e = pair_errors(p, to_gt(s));
            depth_abs += e.depth_err;
            ++depth_n;
            out.pairs.push_back(e);
        }
    } else {
        for (const SceneBatch& sb : val_scenes) {
            const cop::RawOutputs raw =
                cop::model_forward(model, sb.features, false, nullptr);
            const auto preds = cop::decode_predictions(raw, ctx);
            for (const auto& p : preds)
                out.dets.push_back({sb.scene_id, p.class_index, p.score,
                                    cop::box3d_from_prediction(p, cfg.scene.camera,
                                                               cfg.scene.image_w,
                                                               cfg.scene.image_h)});
            for (size_t g = 0; g < sb.gts.size(); ++g)
                out.gts.push_back({sb.scene_id, sb.gts[g].class_index,
                                   sb.samples[g].gt_box3d});
            const Matrix cost = matching::build_cost_matrix(preds, sb.gts, cfg.cost_w);
            const matching::Assignment assign = matching::hungarian(cost);
            for (const auto& [k, n] : assign.pairs) {
                const auto e = pair_errors(preds[static_cast<size_t>(k)],
                                           sb.gts[static_cast<size_t>(n)]);
                depth_abs += e.depth_err;
                ++depth_n;
                out.pairs.push_back(e);
            }
        }
    }
    out.depth_mae = depth_n > 0 ? depth_abs / static_cast<double>(depth_n) : 0.0;
    return out;
}

eval::EvalReport build_report(const ExperimentConfig& cfg, const ValOutputs& vo) {
    eval::EvalReport report;
    for (size_t c = 0; c < cfg.priors.size(); ++c) {
        std::vector<eval::Detection> dets_c;
        std::vector<eval::GroundTruthObj> gts_c;
        for (const auto& d : vo.dets)
            if (d.class_index == static_cast<int>(c)) dets_c.push_back(d);
        for (const auto& g : vo.gts)
            if (g.class_index == static_cast<int>(c)) gts_c.push_back(g);
        eval::ApRow row;
        row.class_name = cfg.priors[c].name;
        row.iou_threshold = cfg.iou_thresholds[c];
        row.n_gt = static_cast<int>(gts_c.size());
        row.ap = gts_c.empty() ? 0.0 : eval::ap40(dets_c, gts_c, row.iou_threshold);
        report.ap_rows.push_back(row);
    }
    report.mae = eval::mae_by_range(vo.pairs, cfg.distance_edges);
    report.n_matched = static_cast<int>(vo.pairs.size());
    eval::fill_pearson(report, vo.pairs);
    return report;
}

void finish_result(const ExperimentConfig& cfg, const ValOutputs& vo,
                   RunResult& result) {
    result.report = build_report(cfg, vo);
    result.depth_mae = result.report.overall_mae(2);
    result.size_mae = result.report.overall_mae(0);
    result.angle_mae = result.report.overall_mae(1);
    for (const auto& row : result.report.ap_rows)
        result.ap_per_class.push_back(row.ap);
}

} // namespace

RunResult run_experiment(const ExperimentConfig& cfg, uint64_t seed,
                         cop::CopModel* model_out) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    const synth::Dataset ds =
        synth::make_dataset(cfg.scene, cfg.priors, cfg.n_scenes, cfg.dataset_seed);
    const int n_classes = static_cast<int>(cfg.priors.size());
    const bool set_mode = cfg.train.mode == "set";

    Rng rng(seed);
    cop::CopModel model =
        cop::CopModel::make(cfg.chain, cfg.input_dim(), n_classes,
                            set_mode ? cfg.train.n_queries : 1, rng);
    auto params = model.parameters();
    micronet::AdamWConfig hp;
    hp.lr = cfg.train.lr;
    hp.weight_decay = cfg.train.weight_decay;
    micronet::OptimizerState opt = micronet::OptimizerState::init(params, hp);

    const cop::DecodeContext ctx = cfg.decode_context();
    const bool staged = cfg.chain.variant == cop::Variant::Htl;

    // Training data layout.
    Matrix X_train;
    std::vector<matching::GtObject> gts_train;
    std::vector<SceneBatch> scenes_train, scenes_val;
    if (set_mode) {
        scenes_train = group_scenes(ds.train, cfg);
        scenes_val = group_scenes(ds.val, cfg);
    } else {
        X_train = stack_features(ds.train, n_classes);
        gts_train.reserve(ds.train.size());
        for (const auto& s : ds.train) gts_train.push_back(to_gt(s));
    }

    RunResult result;
    result.seed = seed;
    std::vector<Matrix> best_params;
    double best_mae = std::numeric_limits<double>::infinity();

    const size_t n_train = set_mode ? scenes_train.size() : ds.train.size();
    std::vector<size_t> perm(n_train);
    std::iota(perm.begin(), perm.end(), 0u);

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        opt.hp.lr = current_lr(cfg.train, epoch);
        cop::LossTermMask mask;
        if (staged) mask = cop::htl_stage_mask(epoch, cfg.train.htl_boundaries);

        // Fisher-Yates shuffle from the run's rng.
        for (size_t i = n_train; i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.below(i));
            std::swap(perm[i - 1], perm[j]);
        }

        double epoch_loss = 0.0;
        long n_batches = 0;

        if (!set_mode) {
            const int dim = X_train.cols;
            for (size_t start = 0; start < n_train;
                 start += static_cast<size_t>(cfg.train.batch_size)) {
                const size_t stop =
                    std::min(n_train, start + static_cast<size_t>(cfg.train.batch_size));
                const int b = static_cast<int>(stop - start);
                Matrix X(b, dim);
                std::vector<matching::GtObject> gts(static_cast<size_t>(b));
                matching::Assignment assign;
                for (int r = 0; r < b; ++r) {
                    const size_t src = perm[start + static_cast<size_t>(r)];
                    std::copy(X_train.row(static_cast<int>(src)),
                              X_train.row(static_cast<int>(src)) + dim, X.row(r));
                    gts[static_cast<size_t>(r)] = gts_train[src];
                    assign.pairs.emplace_back(r, r);
                }
                cop::ForwardTrace trace;
                const cop::RawOutputs raw =
                    cop::model_forward(model, X, true, &rng, &trace);
                const matching::LossOutput lo = matching::loss_total(
                    raw, ctx, gts, assign, cfg.loss_w, staged ? &mask : nullptr);
                const cop::CopGradients grads =
                    cop::model_backward(model, trace, lo.grad);
                std::vector<const Matrix*> gp;
                for (const Matrix& g : grads.params) gp.push_back(&g);
                micronet::adamw_step(params, gp, opt);
                epoch_loss += lo.terms.total;
                ++n_batches;
            }
        } else {
            for (size_t start = 0; start < n_train;
                 start += static_cast<size_t>(cfg.train.batch_size)) {
                const size_t stop =
                    std::min(n_train, start + static_cast<size_t>(cfg.train.batch_size));
                std::vector<Matrix> acc;
                double batch_loss = 0.0;
                for (size_t s = start; s < stop; ++s) {
                    const SceneBatch& sb = scenes_train[perm[s]];
                    cop::ForwardTrace trace;
                    const cop::RawOutputs raw =
                        cop::model_forward(model, sb.features, true, &rng, &trace);
                    const auto preds = cop::decode_predictions(raw, ctx);
                    const Matrix cost =
                        matching::build_cost_matrix(preds, sb.gts, cfg.cost_w);
                    const matching::Assignment assign = matching::hungarian(cost);
                    const matching::LossOutput lo = matching::loss_total(
                        raw, ctx, sb.gts, assign, cfg.loss_w,
                        staged ? &mask : nullptr);
                    const cop::CopGradients grads =
                        cop::model_backward(model, trace, lo.grad);
                    if (acc.empty()) {
                        acc = grads.params;
                    } else {
                        for (size_t t = 0; t < acc.size(); ++t)
                            for (size_t i = 0; i < acc[t].size(); ++i)
                                acc[t].data[i] += grads.params[t].data[i];
                    }
                    batch_loss += lo.terms.total;
                }
                const double inv = 1.0 / static_cast<double>(stop - start);
                for (Matrix& g : acc)
                    for (double& v : g.data) v *= inv;
                std::vector<const Matrix*> gp;
                for (const Matrix& g : acc) gp.push_back(&g);
                micronet::adamw_step(params, gp, opt);
                epoch_loss += batch_loss * inv;
                ++n_batches;
            }
        }

        result.loss_curve.push_back(epoch_loss / std::max(1L, n_batches));

        const ValOutputs vo = evaluate_split(cfg, model, ds.val, scenes_val);
        if (vo.depth_mae < best_mae) {
            best_mae = vo.depth_mae;
            result.best_epoch = epoch;
            best_params.clear();
            for (const Matrix* p : params) best_params.push_back(*p);
        }
    }

    if (!best_params.empty())
        for (size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];

    const ValOutputs vo = evaluate_split(cfg, model, ds.val, scenes_val);
    finish_result(cfg, vo, result);
    if (model_out) *model_out = model;

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

RunResult evaluate_model(const ExperimentConfig& cfg, const cop::CopModel& model) {
    cfg.validate();
    const synth::Dataset ds =
        synth::make_dataset(cfg.scene, cfg.priors, cfg.n_scenes, cfg.dataset_seed);
    std::vector<SceneBatch> scenes_val;
    if (cfg.train.mode == "set") scenes_val = group_scenes(ds.val, cfg);
    const ValOutputs vo = evaluate_split(cfg, model, ds.val, scenes_val);
    RunResult result;
    finish_result(cfg, vo, result);
    return result;
}

BatteryResult run_seed_battery(const ExperimentConfig& cfg, int jobs) {
    cfg.validate();
    const auto& seeds = cfg.train.seeds;
    if (seeds.size() < 2)
        throw TooFewSamples("a seed battery needs at least 2 seeds");

    std::vector<RunResult> results(seeds.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            results[i] = run_experiment(cfg, seeds[i]);
        }
    };
    const int n_threads =
        std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    BatteryResult battery;
    battery.runs = std::move(results);
    std::sort(battery.runs.begin(), battery.runs.end(),
              [](const RunResult& a, const RunResult& b) { return a.seed < b.seed; });

    auto add_stat = [&](const std::string& name, auto getter) {
        std::vector<double> values;
        for (const RunResult& r : battery.runs) values.push_back(getter(r));
        battery.stats.emplace_back(name, eval::seed_stats(values));
    };
    add_stat("depth_mae", [](const RunResult& r) { return r.depth_mae; });
    add_stat("size_mae", [](const RunResult& r) { return r.size_mae; });
    add_stat("angle_mae", [](const RunResult& r) { return r.angle_mae; });
    for (size_t c = 0; c < cfg.priors.size(); ++c) {
        std::string name = "ap40_" + cfg.priors[c].name;
        std::transform(name.begin(), name.end(), name.begin(),
                       [](unsigned char ch) { return std::tolower(ch); });
        add_stat(name, [c](const RunResult& r) {
            return c < r.ap_per_class.size() ? r.ap_per_class[c] : 0.0;
        });
    }
    return battery;
}

ExperimentConfig grid_cell_config(const ExperimentConfig& base,
                                  const std::string& component,
                                  const std::string& attribute_set,
                                  const std::string& order,
                                  const std::string& variant) {
    ExperimentConfig cfg = base;
    const auto order_attrs = cop::parse_order(order);
    const auto subset_attrs = cop::parse_order(attribute_set);
    const std::set<cop::Attribute> subset(subset_attrs.begin(), subset_attrs.end());

    cfg.chain.attributes.clear();
    for (cop::Attribute a : order_attrs)
        if (subset.count(a)) cfg.chain.attributes.push_back(a);
    if (cfg.chain.attributes.size() != subset.size())
        throw InvalidConfig("grid order '" + order + "' does not cover subset '" +
                            attribute_set + "'");

    if (variant == "cop") {
        if (component == "baseline") {
            cfg.chain.variant = cop::Variant::Baseline;
        } else if (component == "fl") {
            cfg.chain.variant = cop::Variant::Parallel;
        } else if (component == "fl_fp") {
            cfg.chain.variant = cop::Variant::Cop;
            cfg.chain.residual = false;
        } else if (component == "fl_fp_fa") {
            cfg.chain.variant = cop::Variant::Cop;
            cfg.chain.residual = true;
        } else {
            throw InvalidConfig("unknown grid component '" + component + "'");
        }
    } else {
        cfg.chain.variant = cop::variant_from_string(variant);
    }
    cfg.chain.validate();
    return cfg;
}

std::vector<GridRow> run_ablation_grid(const ExperimentConfig& cfg,
                                       const GridSpec& spec, int jobs) {
    if (spec.components.empty() || spec.attribute_sets.empty() ||
        spec.orders.empty() || spec.variants.empty())
        throw InvalidConfig("every grid factor needs at least one level");

    std::vector<GridRow> rows;
    for (const auto& component : spec.components)
        for (const auto& attrs : spec.attribute_sets)
            for (const auto& order : spec.orders)
                for (const auto& variant : spec.variants) {
                    GridRow row;
                    row.component = component;
                    row.attribute_set = attrs;
                    row.order = order;
                    row.variant = variant;
                    const ExperimentConfig cell =
                        grid_cell_config(cfg, component, attrs, order, variant);
                    row.battery = run_seed_battery(cell, jobs);
                    rows.push_back(std::move(row));
                }
    return rows;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

} // namespace

void write_seeds_csv(const std::string& path, const std::vector<RunResult>& runs,
                     const std::vector<std::string>& class_names) {
    auto f = open_out(path);
    f << "seed,best_epoch,depth_mae,size_mae,angle_mae";
    for (const auto& name : class_names) {
        std::string low = name;
        std::transform(low.begin(), low.end(), low.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        f << ",ap40_" << low;
    }
    f << ",final_train_loss\n";
    for (const RunResult& r : runs) {
        f << r.seed << ',' << r.best_epoch << ',' << fmt(r.depth_mae) << ','
          << fmt(r.size_mae) << ',' << fmt(r.angle_mae);
        for (size_t c = 0; c < class_names.size(); ++c)
            f << ',' << fmt(c < r.ap_per_class.size() ? r.ap_per_class[c] : 0.0);
        f << ',' << (r.loss_curve.empty() ? std::string("nan") : fmt(r.loss_curve.back()))
          << '\n';
    }
}

void write_battery_csv(const std::string& path, const BatteryResult& battery) {
    auto f = open_out(path);
    f << "metric,mean,std,n\n";
    for (const auto& [name, stats] : battery.stats)
        f << name << ',' << fmt(stats.mean) << ',' << fmt(stats.stddev) << ','
          << battery.runs.size() << '\n';
}

void write_loss_curve_csv(const std::string& path, const RunResult& run) {
    auto f = open_out(path);
    f << "epoch,train_loss\n";
    for (size_t e = 0; e < run.loss_curve.size(); ++e)
        f << e << ',' << fmt(run.loss_curve[e]) << '\n';
}

void write_grid_csv(const std::string& path, const std::vector<GridRow>& rows) {
    auto f = open_out(path);
    f << "component,attributes,order,variant,n_seeds";
    if (!rows.empty())
        for (const auto& [name, stats] : rows.front().battery.stats)
            f << ',' << name << "_mean," << name << "_std";
    f << '\n';
    for (const GridRow& row : rows) {
        f << row.component << ',' << row.attribute_set << ',' << row.order << ','
          << row.variant << ',' << row.battery.runs.size();
        for (const auto& [name, stats] : row.battery.stats)
            f << ',' << fmt(stats.mean) << ',' << fmt(stats.stddev);
        f << '\n';
    }
}

} // namespace cop3d::trainer
