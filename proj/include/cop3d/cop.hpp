#pragma once

#include <array>
#include <string>
#include <vector>

#include "cop3d/geometry.hpp"
#include "cop3d/micronet.hpp"

namespace cop3d::cop {

enum class Attribute { Size = 0, Angle = 1, Depth = 2 };

const char* attribute_name(Attribute a);
char attribute_letter(Attribute a);
Attribute attribute_from_letter(char c);

/// Parses an order string like "S,A,D" (also accepts "SAD").
std::vector<Attribute> parse_order(const std::string& text);
std::string order_to_string(const std::vector<Attribute>& order);

/// Prediction-head wiring strategies.
///  - baseline:   every head reads the query q directly.
///  - parallel:   each chained attribute's head reads its AttributeNet output
///                (plus q when residual is on); no propagation between nets.
///  - cop:        sequential chain with feature propagation, residual
///                aggregation when enabled.
///  - coop_embed: heads read q plus a learnable per-attribute embedding.
///  - htl:        baseline wiring; the trainer stages loss terms instead.
enum class Variant { Baseline, Parallel, Cop, CoopEmbed, Htl };

std::string variant_name(Variant v);
Variant variant_from_string(const std::string& s);

struct ChainConfig {
    std::vector<Attribute> attributes{Attribute::Size, Attribute::Angle,
                                      Attribute::Depth};
    bool residual = true;
    int chain_count = 1;
    Variant variant = Variant::Cop;
    int query_dim = 64;
    int hidden_dim = 64;
    double dropout = 0.1;

    void validate() const;
    /// Position of the attribute in the chain, or -1 when unchained.
    int position_of(Attribute a) const;
};

/// The full predictor: a trunk mapping per-object features to queries, one
/// two-layer AttributeNet per chained attribute (per chain), and five linear
/// heads. The class head has n_classes+1 outputs; the last column is the
/// background/no-object logit.
struct CopModel {
    ChainConfig config;
    int input_dim = 0;
    int n_classes = 0;
    int n_queries = 1;

    micronet::Model trunk;
    std::vector<std::vector<micronet::Model>> chains;   // [chain][position]
    std::vector<micronet::Matrix> coop_embeddings;      // [position], 1 x d
    micronet::Model class_head, box2d_head, size_head, angle_head, depth_head;

    static CopModel make(const ChainConfig& cfg, int input_dim, int n_classes,
                         int n_queries, micronet::Rng& rng);

    /// Stable order: trunk, chains (chain-major, then position, each net
    /// W1[,b1],W2[,b2]), coop embeddings, class/box2d/size/angle/depth heads.
    std::vector<micronet::Matrix*> parameters();
    std::vector<const micronet::Matrix*> parameters() const;

    micronet::Model& head_for(Attribute a);
    const micronet::Model& head_for(Attribute a) const;

    void save(const std::string& path) const;
    void load(const std::string& path);
};

/// A(q) = relu(q W1 [+ b1]) W2 [+ b2]; rows of q are independent queries.
micronet::Matrix attribute_net_forward(const micronet::Model& an,
                                       const micronet::Matrix& q);

/// Raw (pre-decode) head outputs; rows = batch * n_queries.
struct RawOutputs {
    micronet::Matrix class_logits;  // rows x (n_classes + 1)
    micronet::Matrix box2d;         // rows x 4
    micronet::Matrix size;          // rows x 3
    micronet::Matrix angle;         // rows x 2 (sin, cos)
    micronet::Matrix depth;         // rows x 1

    micronet::Matrix& for_attribute(Attribute a);
    const micronet::Matrix& for_attribute(Attribute a) const;
};

struct ForwardTrace {
    micronet::Trace trunk;
    micronet::Matrix q;                                   // rows x d
    std::vector<std::vector<micronet::Trace>> an;         // [chain][position]
    std::vector<std::vector<micronet::Matrix>> f_tilde;   // [chain][position]
    micronet::Trace class_head, box2d_head;
    std::array<std::vector<micronet::Trace>, 3> attr_head; // [attr][chain|0]
    bool train_mode = false;
};

/// Runs the configured variant from a query matrix (rows x d). 2D box and
/// class are always predicted from q; heads of unchained attributes read q.
RawOutputs variant_forward(const CopModel& model, const micronet::Matrix& q,
                           ForwardTrace* trace = nullptr);

/// Cop-variant forward from q, also returning the aggregated per-attribute
/// features f_tilde (chain-major, in chain order).
struct ChainResult {
    RawOutputs raw;
    std::vector<std::vector<micronet::Matrix>> f_tilde;  // [chain][position]
};
ChainResult chain_forward(const CopModel& model, const micronet::Matrix& q);

/// Full forward: trunk (with dropout in train mode) then variant_forward.
/// features is batch x input_dim; queries are rows of the result.
RawOutputs model_forward(const CopModel& model, const micronet::Matrix& features,
                         bool train_mode, micronet::Rng* rng,
                         ForwardTrace* trace = nullptr);

struct CopGradients {
    std::vector<micronet::Matrix> params;  // aligned with parameters()
    micronet::Matrix input;
};

/// Analytic backprop for model_forward given d loss / d raw outputs.
CopGradients model_backward(const CopModel& model, const ForwardTrace& trace,
                            const RawOutputs& grad);

/// Decode configuration: per-class mean dimensions anchoring the exp-offset
/// size decode, and the softplus depth scale.
struct DecodeContext {
    std::vector<std::array<double, 3>> prior_dims;  // per class (w, h, l)
    double depth_scale = 30.0;
};

struct AttributePrediction {
    std::vector<double> class_probs;  // n_classes + 1, sums to 1
    int class_index = 0;              // argmax over real classes
    double score = 0.0;               // probability of class_index
    geometry::Box2D box2d;            // normalized to [0,1] image units
    double w = 0.0, h = 0.0, l = 0.0; // meters
    double yaw = 0.0;
    double depth = 0.0;               // meters
};

/// Decode one output row: softmax class, sigmoid (cu,cv,bw,bh) box, exp-prior
/// dims, atan2(sin,cos) yaw, softplus*scale depth. Dims and depth are
/// positive for every finite raw value.
AttributePrediction decode_prediction(const RawOutputs& raw, int row,
                                      const DecodeContext& ctx);
std::vector<AttributePrediction> decode_predictions(const RawOutputs& raw,
                                                    const DecodeContext& ctx);

/// Back-projects a decoded prediction to a camera-frame 3D box: the 2D box
/// center and decoded depth give the center by inverting the pinhole model.
geometry::Box3D box3d_from_prediction(const AttributePrediction& pred,
                                      const geometry::CameraIntrinsics& cam,
                                      double image_w, double image_h);

/// Per-loss-term on/off weights produced by hierarchical task learning.
struct LossTermMask {
    double cls = 1.0, bbox = 1.0, giou = 1.0, center = 1.0;
    double dims = 1.0, angle = 1.0, depth = 1.0;
};

/// Stage 1 (epoch < boundaries[0]): class + 2D box terms only. Stage 2 adds
/// size and angle. Stage 3 (epoch >= boundaries[1]) enables everything.
LossTermMask htl_stage_mask(int epoch, const std::vector<int>& boundaries);

} // namespace cop3d::cop
