#include "cop3d/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>

#include "cop3d/config.hpp"
#include "cop3d/cop.hpp"
#include "cop3d/eval.hpp"
#include "cop3d/kitti_io.hpp"
#include "cop3d/synth.hpp"
#include "cop3d/trainer.hpp"

namespace cop3d::cli {

namespace fs = std::filesystem;

namespace {

bool color_enabled() {
    if (std::getenv("COP3D_NO_COLOR") != nullptr) return false;
    return isatty(fileno(stderr)) != 0;
}

void diag_error(const std::string& msg) {
    if (color_enabled())
        std::fprintf(stderr, "cop3d: \x1b[31merror:\x1b[0m %s\n", msg.c_str());
    else
        std::fprintf(stderr, "cop3d: error: %s\n", msg.c_str());
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << content;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr const char* kDeviationNote =
    "loss: depth-map term omitted (no image features at this scale); "
    "checkpoint selection: best epoch by val depth MAE";

constexpr const char* kPearsonReferenceNote =
    "reference (full-scale KITTI detector, context only, not reproduced "
    "here): depth-size r=0.35, depth-angle r=0.11";

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::string seed_list;
    int jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* copt = cmd->add_option("--config", args.config_path, "experiment config file");
    if (config_required) copt->required();
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--set", args.overrides,
                    "override section.key=value (repeatable)");
    cmd->add_option("--seed-list", args.seed_list,
                    "comma-separated training seeds (overrides trainer.seeds)");
    cmd->add_option("--jobs", args.jobs, "concurrent seed runs");
}

trainer::ExperimentConfig resolve_config(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (!args.seed_list.empty())
        overrides.push_back("trainer.seeds=" + args.seed_list);
    trainer::ExperimentConfig cfg = config::load(args.config_path, overrides);
    cfg.validate();
    return cfg;
}

fs::path prepare_out(const CommonArgs& args) {
    fs::path out(args.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string());
    return out;
}

void write_resolved(const fs::path& out, const trainer::ExperimentConfig& cfg) {
    write_text(out / "resolved_config.txt", config::serialize(cfg));
}

std::vector<std::string> class_names(const trainer::ExperimentConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& p : cfg.priors) names.push_back(p.name);
    return names;
}

void write_run_outputs(const fs::path& dir, const trainer::RunResult& run) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    trainer::write_loss_curve_csv((dir / "loss_curve.csv").string(), run);
    eval::write_ap40_csv((dir / "ap40.csv").string(), run.report);
    eval::write_mae_csv((dir / "mae_by_range.csv").string(), run.report);
    eval::write_pearson_csv((dir / "pearson.csv").string(), run.report);
}

cop::CopModel load_model(const trainer::ExperimentConfig& cfg,
                         const std::string& path) {
    micronet::Rng rng(0);
    cop::CopModel model = cop::CopModel::make(
        cfg.chain, cfg.input_dim(), static_cast<int>(cfg.priors.size()),
        cfg.train.mode == "set" ? cfg.train.n_queries : 1, rng);
    model.load(path);
    return model;
}

// --- subcommand bodies ---

int cmd_gen(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    const synth::Dataset ds =
        synth::make_dataset(cfg.scene, cfg.priors, cfg.n_scenes, cfg.dataset_seed);
    synth::save_dataset((out / "train.tsv").string(), ds.train);
    synth::save_dataset((out / "val.tsv").string(), ds.val);
    const synth::AmbiguityReport rep = synth::ambiguity_report(ds.train);
    std::ostringstream txt;
    txt << "metric,value\n";
    txt << "r_height_inv_depth," << fmt(rep.r_height_inv_depth) << '\n';
    txt << "r_cue_length," << fmt(rep.r_cue_length) << '\n';
    txt << "ambiguous," << (rep.ambiguous ? 1 : 0) << '\n';
    txt << "n," << rep.n << '\n';
    write_text(out / "ambiguity.csv", txt.str());
    std::printf("train=%zu val=%zu r_height_inv_depth=%.4f ambiguous=%d\n",
                ds.train.size(), ds.val.size(), rep.r_height_inv_depth,
                rep.ambiguous ? 1 : 0);
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    write_text(out / "report_header.txt", std::string(kDeviationNote) + "\n");

    cop::CopModel model;
    const trainer::RunResult run =
        trainer::run_experiment(cfg, cfg.train.seeds.front(), &model);
    model.save((out / "model.ckpt").string());
    write_run_outputs(out, run);
    trainer::write_seeds_csv((out / "seeds.csv").string(), {run}, class_names(cfg));
    std::fprintf(stderr, "seed %llu: best_epoch=%d depth_mae=%.4f (%.1fs)\n",
                 static_cast<unsigned long long>(run.seed), run.best_epoch,
                 run.depth_mae, run.wall_seconds);
    return 0;
}

int cmd_battery(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    write_text(out / "report_header.txt", std::string(kDeviationNote) + "\n");

    const trainer::BatteryResult battery = trainer::run_seed_battery(cfg, args.jobs);
    for (const trainer::RunResult& run : battery.runs) {
        const fs::path dir = out / ("seed_" + std::to_string(run.seed));
        write_run_outputs(dir, run);
    }
    trainer::write_seeds_csv((out / "seeds.csv").string(), battery.runs,
                             class_names(cfg));
    trainer::write_battery_csv((out / "battery.csv").string(), battery);
    for (const auto& [name, stats] : battery.stats)
        std::fprintf(stderr, "%s: mean=%.4f std=%.4f\n", name.c_str(), stats.mean,
                     stats.stddev);
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& components,
               const std::string& attr_sets, const std::string& orders,
               const std::string& variants) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    write_text(out / "report_header.txt", std::string(kDeviationNote) + "\n");

    trainer::GridSpec spec;
    auto parse_list = [](const std::string& csv, std::vector<std::string>& into) {
        if (csv.empty()) return;
        into.clear();
        std::stringstream ss(csv);
        std::string tok;
        while (std::getline(ss, tok, ';')) into.push_back(tok);
    };
    parse_list(components, spec.components);
    parse_list(attr_sets, spec.attribute_sets);
    parse_list(orders, spec.orders);
    parse_list(variants, spec.variants);

    const auto rows = trainer::run_ablation_grid(cfg, spec, args.jobs);
    trainer::write_grid_csv((out / "grid.csv").string(), rows);
    std::fprintf(stderr, "grid rows: %zu\n", rows.size());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& model_path) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    write_text(out / "report_header.txt", std::string(kDeviationNote) + "\n");

    const cop::CopModel model = load_model(cfg, model_path);
    const trainer::RunResult run = trainer::evaluate_model(cfg, model);
    write_run_outputs(out, run);
    std::fprintf(stderr, "depth_mae=%.4f size_mae=%.4f angle_mae=%.4f\n",
                 run.depth_mae, run.size_mae, run.angle_mae);
    return 0;
}

int cmd_correlate(const CommonArgs& args, const std::string& model_path) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    write_text(out / "report_header.txt",
               std::string(kDeviationNote) + "\n" + kPearsonReferenceNote + "\n");

    const cop::CopModel model = load_model(cfg, model_path);
    const trainer::RunResult run = trainer::evaluate_model(cfg, model);

    // Scatter data: one row per matched val object.
    const synth::Dataset ds =
        synth::make_dataset(cfg.scene, cfg.priors, cfg.n_scenes, cfg.dataset_seed);
    const int n_classes = static_cast<int>(cfg.priors.size());
    micronet::Matrix X(static_cast<int>(ds.val.size()), cfg.input_dim());
    std::vector<eval::AttributeErrors> pairs;
    if (cfg.train.mode == "single") {
        for (size_t r = 0; r < ds.val.size(); ++r) {
            const auto f = ds.val[r].features(n_classes);
            for (size_t c = 0; c < f.size(); ++c)
                X.at(static_cast<int>(r), static_cast<int>(c)) = f[c];
        }
        const cop::RawOutputs raw = cop::model_forward(model, X, false, nullptr);
        const auto preds = cop::decode_predictions(raw, cfg.decode_context());
        for (size_t i = 0; i < ds.val.size(); ++i) {
            eval::AttributeErrors e;
            const auto& s = ds.val[i];
            const auto& p = preds[i];
            e.size_err = (std::fabs(p.w - s.gt_box3d.w) + std::fabs(p.h - s.gt_box3d.h) +
                          std::fabs(p.l - s.gt_box3d.l)) / 3.0;
            e.angle_err = std::fabs(geometry::wrap_angle(p.yaw - s.gt_box3d.yaw));
            e.depth_err = std::fabs(p.depth - s.gt_box3d.center.z);
            e.gt_depth = s.gt_box3d.center.z;
            pairs.push_back(e);
        }
    }

    auto write_scatter = [&](const std::string& name, auto geta, auto getb) {
        std::ostringstream txt;
        txt << "err_a,err_b\n";
        for (const auto& p : pairs) txt << fmt(geta(p)) << ',' << fmt(getb(p)) << '\n';
        write_text(out / name, txt.str());
    };
    write_scatter("scatter_size_depth.csv",
                  [](const eval::AttributeErrors& p) { return p.size_err; },
                  [](const eval::AttributeErrors& p) { return p.depth_err; });
    write_scatter("scatter_angle_depth.csv",
                  [](const eval::AttributeErrors& p) { return p.angle_err; },
                  [](const eval::AttributeErrors& p) { return p.depth_err; });
    write_scatter("scatter_size_angle.csv",
                  [](const eval::AttributeErrors& p) { return p.size_err; },
                  [](const eval::AttributeErrors& p) { return p.angle_err; });

    eval::write_pearson_csv((out / "pearson.csv").string(), run.report,
                            kPearsonReferenceNote);

    bool any_valid = false;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (run.report.pearson_r[static_cast<size_t>(i)][static_cast<size_t>(j)])
                any_valid = true;
    if (!any_valid)
        throw DegenerateVariance(
            "all error series are (near-)constant; no correlation to report");
    return 0;
}

int cmd_export_kitti(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    const synth::Dataset ds =
        synth::make_dataset(cfg.scene, cfg.priors, cfg.n_scenes, cfg.dataset_seed);
    std::vector<synth::ObservationSample> all = ds.train;
    all.insert(all.end(), ds.val.begin(), ds.val.end());
    kitti::export_dataset_kitti(all, cfg.priors, cfg.scene, out.string());
    std::fprintf(stderr, "exported %zu objects\n", all.size());
    return 0;
}

int cmd_import_kitti(const CommonArgs& args, const std::string& in_dir) {
    const auto cfg = resolve_config(args);
    const fs::path out = prepare_out(args);
    write_resolved(out, cfg);
    const auto samples = kitti::import_dataset_kitti(in_dir, cfg.priors, cfg.scene);
    synth::save_dataset((out / "dataset.tsv").string(), samples);
    std::fprintf(stderr, "imported %zu objects\n", samples.size());
    return 0;
}

struct SeedsCsv {
    std::vector<std::string> columns;                 // excluding "seed"
    std::vector<std::vector<double>> rows;            // per run, per column
};

SeedsCsv read_seeds_csv(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingRun("run directory lacks seeds.csv: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw MissingRun("empty seeds.csv: " + path.string());
    SeedsCsv out;
    {
        std::stringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) { first = false; continue; }  // "seed"
            out.columns.push_back(cell);
        }
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) { first = false; continue; }
            row.push_back(std::strtod(cell.c_str(), nullptr));
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

int cmd_report(const std::string& out_dir, const std::vector<std::string>& run_dirs) {
    fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string());

    {
        std::ostringstream txt;
        txt << "command = report\nruns =";
        for (const auto& d : run_dirs) txt << ' ' << d;
        txt << '\n';
        write_text(out / "resolved_config.txt", txt.str());
    }

    // Fig-1c style bars: per method (run dir), per metric: mean, std, n.
    std::ostringstream fig1c;
    fig1c << "method,metric,mean,std,n,flag\n";
    for (const std::string& dir : run_dirs) {
        const SeedsCsv seeds = read_seeds_csv(fs::path(dir) / "seeds.csv");
        const std::string method = fs::path(dir).filename().string();
        for (size_t c = 0; c < seeds.columns.size(); ++c) {
            std::vector<double> values;
            for (const auto& row : seeds.rows)
                if (c < row.size()) values.push_back(row[c]);
            if (values.empty()) continue;
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double stddev = 0.0;
            if (values.size() >= 2) {
                double ss = 0.0;
                for (double v : values) ss += (v - mean) * (v - mean);
                stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
            }
            fig1c << method << ',' << seeds.columns[c] << ',' << fmt(mean) << ','
                  << fmt(stddev) << ',' << values.size() << ','
                  << (values.size() < 2 ? "single_sample" : "") << '\n';
        }
    }
    write_text(out / "fig1c.csv", fig1c.str());

    // Fig-4 style MAE bars: merge any mae_by_range.csv under each run dir.
    std::ostringstream fig4;
    fig4 << "method,attribute,bin_lo,bin_hi,mae,count\n";
    for (const std::string& dir : run_dirs) {
        const std::string method = fs::path(dir).filename().string();
        std::vector<fs::path> mae_files;
        if (fs::exists(fs::path(dir) / "mae_by_range.csv"))
            mae_files.push_back(fs::path(dir) / "mae_by_range.csv");
        if (fs::exists(dir))
            for (const auto& entry : fs::directory_iterator(dir))
                if (entry.is_directory() &&
                    fs::exists(entry.path() / "mae_by_range.csv"))
                    mae_files.push_back(entry.path() / "mae_by_range.csv");
        std::sort(mae_files.begin(), mae_files.end());

        // (attribute, bin) -> weighted sum, count
        std::map<std::string, std::pair<double, long>> cells;
        for (const fs::path& file : mae_files) {
            std::ifstream f(file, std::ios::binary);
            std::string line;
            std::getline(f, line);  // header
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                std::stringstream ss(line);
                std::string attr, lo, hi, mae_s, count_s;
                std::getline(ss, attr, ',');
                std::getline(ss, lo, ',');
                std::getline(ss, hi, ',');
                std::getline(ss, mae_s, ',');
                std::getline(ss, count_s, ',');
                const double mae = std::strtod(mae_s.c_str(), nullptr);
                const long count = std::strtol(count_s.c_str(), nullptr, 10);
                auto& cell = cells[attr + "," + lo + "," + hi];
                cell.first += mae * static_cast<double>(count);
                cell.second += count;
            }
        }
        for (const auto& [key, cell] : cells)
            if (cell.second > 0)
                fig4 << method << ',' << key << ','
                     << fmt(cell.first / static_cast<double>(cell.second)) << ','
                     << cell.second << '\n';
    }
    write_text(out / "fig4_mae.csv", fig4.str());
    return 0;
}

} // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"cop3d: chained vs parallel 3D-attribute prediction lab"};
    app.require_subcommand(1);

    CommonArgs gen_a, train_a, battery_a, ablate_a, eval_a, corr_a, expk_a, impk_a;
    std::string eval_model, corr_model, impk_in;
    std::string ablate_components, ablate_attr_sets, ablate_orders, ablate_variants;
    std::string report_out;
    std::vector<std::string> report_runs;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, gen_a);
    auto* train = app.add_subcommand("train", "train one model (first seed)");
    add_common(train, train_a);
    auto* battery = app.add_subcommand("battery", "multi-seed training battery");
    add_common(battery, battery_a);
    auto* ablate = app.add_subcommand("ablate", "component/attribute/order grid");
    add_common(ablate, ablate_a);
    ablate->add_option("--components", ablate_components,
                       "semicolon-separated component levels");
    ablate->add_option("--attr-sets", ablate_attr_sets,
                       "semicolon-separated attribute subsets");
    ablate->add_option("--orders", ablate_orders, "semicolon-separated orders");
    ablate->add_option("--variants", ablate_variants,
                       "semicolon-separated variants");
    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(evalc, eval_a);
    evalc->add_option("--model", eval_model, "model checkpoint")->required();
    auto* correlate = app.add_subcommand("correlate", "error-correlation report");
    add_common(correlate, corr_a);
    correlate->add_option("--model", corr_model, "model checkpoint")->required();
    auto* expk = app.add_subcommand("export-kitti", "write KITTI label/calib files");
    add_common(expk, expk_a);
    auto* impk = app.add_subcommand("import-kitti", "read KITTI label/calib files");
    add_common(impk, impk_a);
    impk->add_option("--in", impk_in, "KITTI directory (label_2/, calib/)")->required();
    auto* report = app.add_subcommand("report", "merge run directories");
    report->add_option("--out", report_out, "output directory")->required();
    report->add_option("runs", report_runs, "completed run directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        diag_error(e.what());
        std::fputs(app.help().c_str(), stderr);
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_a);
        if (train->parsed()) return cmd_train(train_a);
        if (battery->parsed()) return cmd_battery(battery_a);
        if (ablate->parsed())
            return cmd_ablate(ablate_a, ablate_components, ablate_attr_sets,
                              ablate_orders, ablate_variants);
        if (evalc->parsed()) return cmd_eval(eval_a, eval_model);
        if (correlate->parsed()) return cmd_correlate(corr_a, corr_model);
        if (expk->parsed()) return cmd_export_kitti(expk_a);
        if (impk->parsed()) return cmd_import_kitti(impk_a, impk_in);
        if (report->parsed()) return cmd_report(report_out, report_runs);
    } catch (const ConfigError& e) {
        diag_error(e.what());
        return 2;
    } catch (const InvalidConfig& e) {
        diag_error(e.what());
        return 2;
    } catch (const Error& e) {
        diag_error(e.what());
        return 3;
    } catch (const std::exception& e) {
        diag_error(e.what());
        return 3;
    }
    return 1;
}

int dispatch(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("cop3d");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data());
}

} // namespace cop3d::cli
