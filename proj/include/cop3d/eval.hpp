#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cop3d/geometry.hpp"

namespace cop3d::eval {

/// Pearson correlation coefficient of two paired error series. Throws
/// DegenerateVariance when either series is constant; TooFewSamples for n < 2.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct Detection {
    long scene_id = 0;
    int class_index = 0;
    double score = 0.0;
    geometry::Box3D box;
};

struct GroundTruthObj {
    long scene_id = 0;
    int class_index = 0;
    geometry::Box3D box;
};

struct GreedyMatches {
    std::vector<bool> tp;          // per detection, in input order
    std::vector<int> det_to_gt;    // matched gt index or -1
};

/// Confidence-descending greedy matching within one scene's lists: each
/// detection takes the highest-IoU unmatched same-class gt when the 3D IoU
/// clears the threshold. One-to-one.
GreedyMatches match_detections_greedy(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruthObj>& gts,
                                      double iou_threshold);

/// AP interpolated at the 40 recall points {1/40, ..., 40/40}, in [0, 100].
/// Detections and gts may span multiple scenes (grouped by scene_id); class
/// gating happens inside the matcher, so callers normally pass one class.
/// Throws NoGroundTruth when gts is empty.
double ap40(const std::vector<Detection>& dets,
            const std::vector<GroundTruthObj>& gts, double iou_threshold);

/// One matched prediction/gt pair reduced to attribute errors.
struct AttributeErrors {
    double size_err = 0.0;   // mean |d dims| over (w, h, l), meters
    double angle_err = 0.0;  // |wrapped yaw difference|, radians
    double depth_err = 0.0;  // |d z|, meters
    double gt_depth = 0.0;
};

struct MaeCell {
    double mae = 0.0;
    int count = 0;
};

/// MAE per attribute x depth bin. Bins are [edges[i], edges[i+1]) with the
/// last bin open-ended; empty bins keep count == 0 and are treated as absent.
struct MaeTable {
    std::vector<double> edges{0.0, 30.0, 50.0};
    std::array<std::vector<MaeCell>, 3> cells;  // [size|angle|depth][bin]
};

MaeTable mae_by_range(const std::vector<AttributeErrors>& pairs,
                      const std::vector<double>& edges = {0.0, 30.0, 50.0});

/// Synthetic data carries no occlusion or truncation, so difficulty reduces
/// to 2D box height: Easy >= 40 px, Moderate >= 25 px, Hard below.
enum class Difficulty { Easy, Moderate, Hard };
Difficulty difficulty_of(double box_height_px);
const char* difficulty_name(Difficulty d);

struct SeedStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1)
};

/// Throws TooFewSamples for fewer than 2 values.
SeedStats seed_stats(const std::vector<double>& values);

struct ApRow {
    std::string class_name;
    double iou_threshold = 0.0;
    double ap = 0.0;
    int n_gt = 0;
};

/// Evaluation summary for one trained model on one split.
struct EvalReport {
    std::vector<ApRow> ap_rows;
    MaeTable mae;
    // Pairwise Pearson r over absolute size/angle/depth error series;
    // entries are missing when a series is degenerate.
    std::array<std::array<std::optional<double>, 3>, 3> pearson_r{};
    int n_matched = 0;

    double overall_mae(int attr) const;  // 0 size, 1 angle, 2 depth
};

/// Builds the pairwise error-correlation matrix from matched pairs.
void fill_pearson(EvalReport& report, const std::vector<AttributeErrors>& pairs);

// --- CSV emission (documented headers, deterministic ordering) ---
void write_ap40_csv(const std::string& path, const EvalReport& report);
void write_mae_csv(const std::string& path, const EvalReport& report);
void write_pearson_csv(const std::string& path, const EvalReport& report,
                       const std::string& header_note = "");

} // namespace cop3d::eval
