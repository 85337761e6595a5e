#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cop3d/cop.hpp"
#include "cop3d/eval.hpp"
#include "cop3d/matching.hpp"
#include "cop3d/synth.hpp"

namespace cop3d::trainer {

struct TrainerConfig {
    int epochs = 500;
    int batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double lr_decay_rate = 0.5;
    std::vector<int> lr_decay_epochs{300, 425};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::string mode = "single";  // "single" (per-object regression) or "set"
    int n_queries = 8;            // set mode only
    std::vector<int> htl_boundaries{167, 333};
    double depth_scale = 30.0;

    void validate() const;
};

/// Everything a run needs; serializable to / from the experiment config file.
struct ExperimentConfig {
    synth::SceneConfig scene;
    std::vector<synth::ClassPrior> priors = synth::default_priors();
    int n_scenes = 834;
    uint64_t dataset_seed = 7;
    cop::ChainConfig chain;
    matching::LossWeights loss_w;
    matching::CostWeights cost_w;
    TrainerConfig train;
    std::vector<double> iou_thresholds{0.7, 0.5, 0.5};  // aligned with priors
    std::vector<double> distance_edges{0.0, 30.0, 50.0};

    void validate() const;
    cop::DecodeContext decode_context() const;
    int input_dim() const;
};

struct RunResult {
    uint64_t seed = 0;
    eval::EvalReport report;
    std::vector<double> loss_curve;  // one entry per epoch
    int best_epoch = -1;             // -1 when epochs == 0
    double depth_mae = 0.0, size_mae = 0.0, angle_mae = 0.0;
    std::vector<double> ap_per_class;
    double wall_seconds = 0.0;       // diagnostic only; never in CSVs
};

/// Deterministic given (cfg, seed): dataset generation, training with AdamW
/// and step decay, best-epoch checkpoint by val depth MAE, final evaluation
/// on the val split. Pass `model_out` to receive the trained model.
RunResult run_experiment(const ExperimentConfig& cfg, uint64_t seed,
                         cop::CopModel* model_out = nullptr);

/// Evaluates an already-trained model on the config's val split.
RunResult evaluate_model(const ExperimentConfig& cfg, const cop::CopModel& model);

struct BatteryResult {
    std::vector<RunResult> runs;  // sorted by seed value
    std::vector<std::pair<std::string, eval::SeedStats>> stats;
};

/// Runs every seed in cfg.train.seeds (>= 2 required); seeds may execute
/// concurrently (jobs) and merge deterministically.
BatteryResult run_seed_battery(const ExperimentConfig& cfg, int jobs = 1);

/// Requested factor levels for the ablation grid. Components map onto chain
/// machinery when the variant axis is "cop": baseline, fl (parallel nets),
/// fl_fp (chain without residual), fl_fp_fa (chain with residual). Other
/// variant values (parallel, coop_embed, htl) override the wiring directly.
struct GridSpec {
    std::vector<std::string> components{"baseline", "fl", "fl_fp", "fl_fp_fa"};
    std::vector<std::string> attribute_sets{"D", "D,S", "D,S,A"};
    std::vector<std::string> orders{"S,A,D", "S,D,A", "A,S,D",
                                    "A,D,S", "D,S,A", "D,A,S"};
    std::vector<std::string> variants{"cop"};
};

struct GridRow {
    std::string component, attribute_set, order, variant;
    BatteryResult battery;
};

/// Derives one grid cell's config; the effective chain order is the requested
/// order restricted to the requested attribute subset.
ExperimentConfig grid_cell_config(const ExperimentConfig& base,
                                  const std::string& component,
                                  const std::string& attribute_set,
                                  const std::string& order,
                                  const std::string& variant);

/// Full cross product of the requested factor levels, one battery per row.
std::vector<GridRow> run_ablation_grid(const ExperimentConfig& cfg,
                                       const GridSpec& spec, int jobs = 1);

// --- CSV emission ---
void write_seeds_csv(const std::string& path, const std::vector<RunResult>& runs,
                     const std::vector<std::string>& class_names);
void write_battery_csv(const std::string& path, const BatteryResult& battery);
void write_loss_curve_csv(const std::string& path, const RunResult& run);
void write_grid_csv(const std::string& path, const std::vector<GridRow>& rows);

} // namespace cop3d::trainer
