#pragma once

#include <utility>
#include <vector>

#include "cop3d/cop.hpp"
#include "cop3d/geometry.hpp"
#include "cop3d/micronet.hpp"

namespace cop3d::matching {

/// Cost-matrix term weights for the prediction/ground-truth matching step.
struct CostWeights {
    double cls = 2.0;
    double bbox_l1 = 5.0;
    double giou = 2.0;
    double center3d = 10.0;

    void validate() const;
};

/// Training-loss term weights. The angle weight covers the (sin, cos)
/// orientation term, whose decomposition is this artifact's choice.
struct LossWeights {
    double cls = 2.0;
    double bbox = 5.0;
    double giou = 2.0;
    double center3d = 10.0;
    double dims = 1.0;
    double angle = 1.0;
    double depth = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double smooth_l1_beta = 1.0;

    void validate() const;
};

/// One ground-truth object as the loss sees it.
struct GtObject {
    int class_index = 0;
    geometry::Box2D box2d;  // normalized image units
    double w = 1.0, h = 1.0, l = 1.0;
    double yaw = 0.0;
    double depth = 10.0;
};

/// (prediction_index, gt_index) pairs; unique on both sides.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;
};

/// Globally optimal min-cost assignment of min(K, N) pairs for a K x N cost
/// matrix. Ties break toward the lexicographically smallest pair list
/// (lowest row index first, then lowest column). Throws EmptyMatrix when
/// either side is empty. The tie-break refinement re-solves submatrices, so
/// this is meant for the small K, N of set prediction, not huge inputs.
Assignment hungarian(const micronet::Matrix& cost);

/// Minimum total assignment cost (no tie-break pass).
double hungarian_cost(const micronet::Matrix& cost);

/// entry(k, n) = cls*(1 - p_k[class_n]) + bbox_l1*L1(boxes) + giou*(1 - GIoU)
///            + center3d*L1(box centers). Boxes and centers are normalized;
/// the projected-3D-center term uses the 2D box midpoint on both sides.
micronet::Matrix build_cost_matrix(const std::vector<cop::AttributePrediction>& preds,
                                   const std::vector<GtObject>& gts,
                                   const CostWeights& w);

struct LossBreakdown {
    double cls = 0.0, bbox = 0.0, giou = 0.0, center = 0.0;
    double dims = 0.0, angle = 0.0, depth = 0.0;
    double background = 0.0;
    double total = 0.0;
};

struct LossOutput {
    LossBreakdown terms;
    cop::RawOutputs grad;  // d total / d raw outputs, same shapes as the input
};

/// Overall matched-set loss, normalized by the number of ground-truth
/// objects: focal class + L1 box + GIoU (2D part), smooth-L1 on dims,
/// (sin,cos) and depth plus center L1 (3D part). Unmatched predictions incur
/// a mean background focal term. `mask` (when given) stages terms on/off.
/// Gradients flow through the decode maps into the raw outputs; the
/// assignment itself is treated as a constant.
LossOutput loss_total(const cop::RawOutputs& raw, const cop::DecodeContext& ctx,
                      const std::vector<GtObject>& gts, const Assignment& assignment,
                      const LossWeights& w,
                      const cop::LossTermMask* mask = nullptr);

} // namespace cop3d::matching
