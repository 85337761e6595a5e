#include "cop3d/cop.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cop3d::cop {

using micronet::Matrix;
using micronet::Model;
using micronet::Rng;
using micronet::Trace;

const char* attribute_name(Attribute a) {
    switch (a) {
        case Attribute::Size: return "size";
        case Attribute::Angle: return "angle";
        case Attribute::Depth: return "depth";
    }
    return "?";
}

char attribute_letter(Attribute a) {
    switch (a) {
        case Attribute::Size: return 'S';
        case Attribute::Angle: return 'A';
        case Attribute::Depth: return 'D';
    }
    return '?';
}

Attribute attribute_from_letter(char c) {
    switch (c) {
        case 'S': case 's': return Attribute::Size;
        case 'A': case 'a': return Attribute::Angle;
        case 'D': case 'd': return Attribute::Depth;
    }
    throw InvalidConfig(std::string("unknown attribute letter '") + c + "'");
}

std::vector<Attribute> parse_order(const std::string& text) {
    std::vector<Attribute> out;
    for (char c : text) {
        if (c == ',' || c == ' ' || c == '>') continue;
        out.push_back(attribute_from_letter(c));
    }
    return out;
}

std::string order_to_string(const std::vector<Attribute>& order) {
    std::string s;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) s += ',';
        s += attribute_letter(order[i]);
    }
    return s;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::Parallel: return "parallel";
        case Variant::Cop: return "cop";
        case Variant::CoopEmbed: return "coop_embed";
        case Variant::Htl: return "htl";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::Baseline;
    if (s == "parallel") return Variant::Parallel;
    if (s == "cop") return Variant::Cop;
    if (s == "coop_embed" || s == "coop") return Variant::CoopEmbed;
    if (s == "htl") return Variant::Htl;
    throw InvalidConfig("unknown variant '" + s + "'");
}

void ChainConfig::validate() const {
    if (attributes.empty())
        throw InvalidConfig("chain attribute list must not be empty");
    std::set<Attribute> seen(attributes.begin(), attributes.end());
    if (seen.size() != attributes.size())
        throw InvalidConfig("chain attribute list must be duplicate-free");
    if (chain_count < 1 || chain_count > 3)
        throw InvalidConfig("chain_count must be 1, 2 or 3");
    if (query_dim < 1 || hidden_dim < 1)
        throw InvalidConfig("query_dim and hidden_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw InvalidConfig("dropout must lie in [0, 1)");
}

int ChainConfig::position_of(Attribute a) const {
    for (size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i] == a) return static_cast<int>(i);
    return -1;
}

namespace {

Model make_attribute_net(int d, int hidden, Rng& rng) {
    Model m;
    m.layers.push_back(micronet::make_linear(d, hidden, rng));
    m.layers.push_back(micronet::ReluLayer{});
    m.layers.push_back(micronet::make_linear(hidden, d, rng));
    return m;
}

Model make_head(int d, int out, Rng& rng) {
    Model m;
    m.layers.push_back(micronet::make_linear(d, out, rng));
    return m;
}

int chain_sets_for(const ChainConfig& cfg) {
    switch (cfg.variant) {
        case Variant::Cop: return cfg.chain_count;
        case Variant::Parallel: return 1;
        default: return 0;
    }
}

} // namespace

CopModel CopModel::make(const ChainConfig& cfg, int input_dim, int n_classes,
                        int n_queries, Rng& rng) {
    cfg.validate();
    if (input_dim < 1 || n_classes < 1 || n_queries < 1)
        throw InvalidConfig("input_dim, n_classes and n_queries must be >= 1");

    CopModel m;
    m.config = cfg;
    m.input_dim = input_dim;
    m.n_classes = n_classes;
    m.n_queries = n_queries;

    // The trunk is a linear query embedding; attribute-specific capacity
    // lives in the AttributeNets, mirroring how detector queries feed heads.
    const int d = cfg.query_dim;
    m.trunk.layers.push_back(micronet::make_linear(input_dim, n_queries * d, rng));
    m.trunk.layers.push_back(micronet::DropoutLayer{cfg.dropout});

    const int sets = chain_sets_for(cfg);
    for (int c = 0; c < sets; ++c) {
        std::vector<Model> nets;
        for (size_t p = 0; p < cfg.attributes.size(); ++p)
            nets.push_back(make_attribute_net(d, cfg.hidden_dim, rng));
        m.chains.push_back(std::move(nets));
    }

    if (cfg.variant == Variant::CoopEmbed)
        for (size_t p = 0; p < cfg.attributes.size(); ++p)
            m.coop_embeddings.emplace_back(1, d);  // zero-initialized

    m.class_head = make_head(d, n_classes + 1, rng);
    m.box2d_head = make_head(d, 4, rng);
    m.size_head = make_head(d, 3, rng);
    m.angle_head = make_head(d, 2, rng);
    m.depth_head = make_head(d, 1, rng);
    return m;
}

std::vector<Matrix*> CopModel::parameters() {
    std::vector<Matrix*> out;
    auto append = [&](Model& mod) {
        for (Matrix* p : mod.parameters()) out.push_back(p);
    };
    append(trunk);
    for (auto& chain : chains)
        for (auto& an : chain) append(an);
    for (Matrix& e : coop_embeddings) out.push_back(&e);
    append(class_head);
    append(box2d_head);
    append(size_head);
    append(angle_head);
    append(depth_head);
    return out;
}

std::vector<const Matrix*> CopModel::parameters() const {
    auto* self = const_cast<CopModel*>(this);
    std::vector<const Matrix*> out;
    for (Matrix* p : self->parameters()) out.push_back(p);
    return out;
}

Model& CopModel::head_for(Attribute a) {
    switch (a) {
        case Attribute::Size: return size_head;
        case Attribute::Angle: return angle_head;
        case Attribute::Depth: return depth_head;
    }
    return depth_head;
}

const Model& CopModel::head_for(Attribute a) const {
    return const_cast<CopModel*>(this)->head_for(a);
}

void CopModel::save(const std::string& path) const {
    micronet::save_tensors(path, parameters());
}

void CopModel::load(const std::string& path) {
    std::vector<Matrix> tensors = micronet::load_tensors(path);
    std::vector<Matrix*> params = parameters();
    if (tensors.size() != params.size())
        throw IoError("checkpoint tensor count does not match model");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(tensors[i]))
            throw IoError("checkpoint tensor " + std::to_string(i) +
                          " shape does not match model");
        *params[i] = std::move(tensors[i]);
    }
}

micronet::Matrix attribute_net_forward(const Model& an, const Matrix& q) {
    return micronet::forward(an, q, false, nullptr).output;
}

Matrix& RawOutputs::for_attribute(Attribute a) {
    switch (a) {
        case Attribute::Size: return size;
        case Attribute::Angle: return angle;
        case Attribute::Depth: return depth;
    }
    return depth;
}

const Matrix& RawOutputs::for_attribute(Attribute a) const {
    return const_cast<RawOutputs*>(this)->for_attribute(a);
}

namespace {

void add_into(Matrix& dst, const Matrix& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

void scale(Matrix& m, double s) {
    for (double& v : m.data) v *= s;
}

/// q plus a broadcast row vector.
Matrix add_row(const Matrix& q, const Matrix& row) {
    Matrix out = q;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out.at(r, c) += row.at(0, c);
    return out;
}

} // namespace

RawOutputs variant_forward(const CopModel& model, const Matrix& q,
                           ForwardTrace* trace) {
    const ChainConfig& cfg = model.config;
    cfg.validate();
    if (q.cols != cfg.query_dim)
        throw ShapeMismatch("query width " + std::to_string(q.cols) +
                            " does not match query_dim " +
                            std::to_string(cfg.query_dim));

    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    tr.q = q;

    RawOutputs raw;
    tr.class_head = micronet::forward(model.class_head, q, false, nullptr);
    raw.class_logits = tr.class_head.output;
    tr.box2d_head = micronet::forward(model.box2d_head, q, false, nullptr);
    raw.box2d = tr.box2d_head.output;

    const Variant variant = cfg.variant;

    if (variant == Variant::Cop) {
        // Propagate through each chain, then read every chained head off its
        // aggregated feature; raw outputs average across chains.
        const int n_chains = static_cast<int>(model.chains.size());
        tr.an.assign(n_chains, {});
        tr.f_tilde.assign(n_chains, {});
        for (int c = 0; c < n_chains; ++c) {
            Matrix prev = q;
            for (size_t p = 0; p < cfg.attributes.size(); ++p) {
                Trace an_tr = micronet::forward(model.chains[c][p], prev, false, nullptr);
                Matrix f = an_tr.output;
                if (cfg.residual) add_into(f, prev);
                tr.an[c].push_back(std::move(an_tr));
                tr.f_tilde[c].push_back(f);
                prev = tr.f_tilde[c].back();
            }
        }
        for (Attribute a : {Attribute::Size, Attribute::Angle, Attribute::Depth}) {
            const int pos = cfg.position_of(a);
            const Model& head = model.head_for(a);
            auto& head_traces = tr.attr_head[static_cast<int>(a)];
            if (pos < 0) {
                head_traces.push_back(micronet::forward(head, q, false, nullptr));
                raw.for_attribute(a) = head_traces.back().output;
            } else {
                Matrix acc;
                for (int c = 0; c < n_chains; ++c) {
                    head_traces.push_back(
                        micronet::forward(head, tr.f_tilde[c][pos], false, nullptr));
                    if (c == 0)
                        acc = head_traces.back().output;
                    else
                        add_into(acc, head_traces.back().output);
                }
                scale(acc, 1.0 / n_chains);
                raw.for_attribute(a) = std::move(acc);
            }
        }
        return raw;
    }

    for (Attribute a : {Attribute::Size, Attribute::Angle, Attribute::Depth}) {
        const int pos = cfg.position_of(a);
        const Model& head = model.head_for(a);
        auto& head_traces = tr.attr_head[static_cast<int>(a)];
        Matrix head_input;
        switch (variant) {
            case Variant::Baseline:
            case Variant::Htl:
                head_input = q;
                break;
            case Variant::Parallel:
                if (pos >= 0) {
                    Trace an_tr = micronet::forward(model.chains[0][pos], q, false, nullptr);
                    head_input = an_tr.output;
                    if (cfg.residual) add_into(head_input, q);
                    if (tr.an.empty())
                        tr.an.assign(1, std::vector<Trace>(cfg.attributes.size()));
                    tr.an[0][pos] = std::move(an_tr);
                } else {
                    head_input = q;
                }
                break;
            case Variant::CoopEmbed:
                head_input = pos >= 0 ? add_row(q, model.coop_embeddings[pos]) : q;
                break;
            case Variant::Cop:
                break;  // handled above
        }
        head_traces.push_back(micronet::forward(head, head_input, false, nullptr));
        raw.for_attribute(a) = head_traces.back().output;
    }
    return raw;
}

ChainResult chain_forward(const CopModel& model, const Matrix& q) {
    if (model.config.variant != Variant::Cop)
        throw InvalidConfig("chain_forward requires the cop variant");
    ForwardTrace tr;
    ChainResult result;
    result.raw = variant_forward(model, q, &tr);
    result.f_tilde = tr.f_tilde;
    return result;
}

RawOutputs model_forward(const CopModel& model, const Matrix& features,
                         bool train_mode, Rng* rng, ForwardTrace* trace) {
    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    tr.train_mode = train_mode;
    tr.trunk = micronet::forward(model.trunk, features, train_mode, rng);

    // Reshape batch x (K*d) into (batch*K) x d; rows stay contiguous.
    Matrix q;
    q.rows = tr.trunk.output.rows * model.n_queries;
    q.cols = model.config.query_dim;
    q.data = tr.trunk.output.data;
    return variant_forward(model, q, &tr);
}

CopGradients model_backward(const CopModel& model, const ForwardTrace& trace,
                            const RawOutputs& grad) {
    const ChainConfig& cfg = model.config;
    const int d = cfg.query_dim;
    const int rows = trace.q.rows;

    // Gradient accumulators mirroring each sub-model's parameter list.
    auto zeros_like = [](const Model& m) {
        std::vector<Matrix> out;
        for (const Matrix* p : m.parameters()) out.emplace_back(p->rows, p->cols);
        return out;
    };
    std::vector<Matrix> g_trunk = zeros_like(model.trunk);
    std::vector<std::vector<std::vector<Matrix>>> g_chains;
    for (const auto& chain : model.chains) {
        std::vector<std::vector<Matrix>> per;
        for (const auto& an : chain) per.push_back(zeros_like(an));
        g_chains.push_back(std::move(per));
    }
    std::vector<Matrix> g_embed;
    for (const Matrix& e : model.coop_embeddings) g_embed.emplace_back(e.rows, e.cols);
    std::vector<Matrix> g_class = zeros_like(model.class_head);
    std::vector<Matrix> g_box2d = zeros_like(model.box2d_head);
    std::array<std::vector<Matrix>, 3> g_attr_heads = {
        zeros_like(model.size_head), zeros_like(model.angle_head),
        zeros_like(model.depth_head)};

    Matrix dq(rows, d);

    auto accumulate = [](std::vector<Matrix>& into, const std::vector<Matrix>& from) {
        for (size_t i = 0; i < into.size(); ++i) add_into(into[i], from[i]);
    };

    {
        micronet::Gradients g =
            micronet::backward(model.class_head, trace.class_head, grad.class_logits);
        accumulate(g_class, g.params);
        add_into(dq, g.input);
    }
    {
        micronet::Gradients g =
            micronet::backward(model.box2d_head, trace.box2d_head, grad.box2d);
        accumulate(g_box2d, g.params);
        add_into(dq, g.input);
    }

    // Pending gradients flowing into each chain's aggregated features.
    std::vector<std::vector<Matrix>> d_f_tilde;
    if (cfg.variant == Variant::Cop) {
        d_f_tilde.resize(model.chains.size());
        for (size_t c = 0; c < model.chains.size(); ++c)
            for (size_t p = 0; p < cfg.attributes.size(); ++p)
                d_f_tilde[c].emplace_back(rows, d);
    }

    for (Attribute a : {Attribute::Size, Attribute::Angle, Attribute::Depth}) {
        const int ai = static_cast<int>(a);
        const int pos = cfg.position_of(a);
        const Model& head = model.head_for(a);
        const auto& head_traces = trace.attr_head[ai];
        const Matrix& g_raw = grad.for_attribute(a);

        if (cfg.variant == Variant::Cop && pos >= 0) {
            const int n_chains = static_cast<int>(model.chains.size());
            Matrix upstream = g_raw;
            scale(upstream, 1.0 / n_chains);
            for (int c = 0; c < n_chains; ++c) {
                micronet::Gradients g =
                    micronet::backward(head, head_traces[c], upstream);
                accumulate(g_attr_heads[ai], g.params);
                add_into(d_f_tilde[c][pos], g.input);
            }
            continue;
        }

        micronet::Gradients g = micronet::backward(head, head_traces[0], g_raw);
        accumulate(g_attr_heads[ai], g.params);
        switch (cfg.variant) {
            case Variant::Parallel:
                if (pos >= 0) {
                    micronet::Gradients ag = micronet::backward(
                        model.chains[0][pos], trace.an[0][pos], g.input);
                    accumulate(g_chains[0][pos], ag.params);
                    add_into(dq, ag.input);
                    if (cfg.residual) add_into(dq, g.input);
                } else {
                    add_into(dq, g.input);
                }
                break;
            case Variant::CoopEmbed:
                add_into(dq, g.input);
                if (pos >= 0)
                    for (int r = 0; r < g.input.rows; ++r)
                        for (int c = 0; c < g.input.cols; ++c)
                            g_embed[pos].at(0, c) += g.input.at(r, c);
                break;
            default:
                add_into(dq, g.input);
                break;
        }
    }

    if (cfg.variant == Variant::Cop) {
        for (size_t c = 0; c < model.chains.size(); ++c) {
            for (int p = static_cast<int>(cfg.attributes.size()) - 1; p >= 0; --p) {
                const Matrix& g = d_f_tilde[c][p];
                micronet::Gradients ag =
                    micronet::backward(model.chains[c][p], trace.an[c][p], g);
                accumulate(g_chains[c][p], ag.params);
                Matrix d_prev = ag.input;
                if (cfg.residual) add_into(d_prev, g);
                if (p == 0)
                    add_into(dq, d_prev);
                else
                    add_into(d_f_tilde[c][p - 1], d_prev);
            }
        }
    }

    // Reshape (batch*K) x d back to batch x (K*d) and run the trunk backward.
    Matrix dq_flat;
    dq_flat.rows = rows / model.n_queries;
    dq_flat.cols = model.n_queries * d;
    dq_flat.data = dq.data;
    micronet::Gradients g_tr = micronet::backward(model.trunk, trace.trunk, dq_flat);
    accumulate(g_trunk, g_tr.params);

    CopGradients out;
    for (Matrix& m : g_trunk) out.params.push_back(std::move(m));
    for (auto& chain : g_chains)
        for (auto& an : chain)
            for (Matrix& m : an) out.params.push_back(std::move(m));
    for (Matrix& m : g_embed) out.params.push_back(std::move(m));
    for (Matrix& m : g_class) out.params.push_back(std::move(m));
    for (Matrix& m : g_box2d) out.params.push_back(std::move(m));
    for (auto& head : g_attr_heads)
        for (Matrix& m : head) out.params.push_back(std::move(m));
    // Reorder: attr heads were collected size, angle, depth which matches
    // parameters(); nothing further to do.
    out.input = std::move(g_tr.input);
    return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

constexpr double kSizeRawClamp = 8.0;
constexpr double kDepthRawClamp = 30.0;

} // namespace

AttributePrediction decode_prediction(const RawOutputs& raw, int row,
                                      const DecodeContext& ctx) {
    AttributePrediction pred;
    const int n_logits = raw.class_logits.cols;
    const int n_classes = n_logits - 1;

    // Stable softmax over all logits including background.
    double mx = raw.class_logits.at(row, 0);
    for (int c = 1; c < n_logits; ++c) mx = std::max(mx, raw.class_logits.at(row, c));
    pred.class_probs.resize(n_logits);
    double denom = 0.0;
    for (int c = 0; c < n_logits; ++c) {
        pred.class_probs[c] = std::exp(raw.class_logits.at(row, c) - mx);
        denom += pred.class_probs[c];
    }
    for (double& p : pred.class_probs) p /= denom;
    pred.class_index = 0;
    for (int c = 1; c < n_classes; ++c)
        if (pred.class_probs[c] > pred.class_probs[pred.class_index])
            pred.class_index = c;
    pred.score = pred.class_probs[pred.class_index];

    const double cu = sigmoid(raw.box2d.at(row, 0));
    const double cv = sigmoid(raw.box2d.at(row, 1));
    const double bw = sigmoid(raw.box2d.at(row, 2));
    const double bh = sigmoid(raw.box2d.at(row, 3));
    pred.box2d = {cu - 0.5 * bw, cv - 0.5 * bh, cu + 0.5 * bw, cv + 0.5 * bh};

    const auto& prior = ctx.prior_dims.at(static_cast<size_t>(pred.class_index));
    auto decode_dim = [&](int i, double anchor) {
        const double r = std::clamp(raw.size.at(row, i), -kSizeRawClamp, kSizeRawClamp);
        return anchor * std::exp(r);
    };
    pred.w = decode_dim(0, prior[0]);
    pred.h = decode_dim(1, prior[1]);
    pred.l = decode_dim(2, prior[2]);

    pred.yaw = std::atan2(raw.angle.at(row, 0), raw.angle.at(row, 1));

    const double zr = std::clamp(raw.depth.at(row, 0), -kDepthRawClamp, kDepthRawClamp);
    pred.depth = softplus(zr) * ctx.depth_scale;
    return pred;
}

std::vector<AttributePrediction> decode_predictions(const RawOutputs& raw,
                                                    const DecodeContext& ctx) {
    std::vector<AttributePrediction> out;
    out.reserve(raw.class_logits.rows);
    for (int r = 0; r < raw.class_logits.rows; ++r)
        out.push_back(decode_prediction(raw, r, ctx));
    return out;
}

geometry::Box3D box3d_from_prediction(const AttributePrediction& pred,
                                      const geometry::CameraIntrinsics& cam,
                                      double image_w, double image_h) {
    geometry::Box3D box;
    const double u = pred.box2d.center_u() * image_w;
    const double v = pred.box2d.center_v() * image_h;
    box.center.z = pred.depth;
    box.center.x = (u - cam.cx) * pred.depth / cam.f;
    box.center.y = (v - cam.cy) * pred.depth / cam.f;
    box.w = pred.w;
    box.h = pred.h;
    box.l = pred.l;
    box.yaw = geometry::wrap_angle(pred.yaw);
    return box;
}

LossTermMask htl_stage_mask(int epoch, const std::vector<int>& boundaries) {
    if (boundaries.size() != 2)
        throw InvalidConfig("htl schedule needs exactly two stage boundaries");
    if (boundaries[0] > boundaries[1])
        throw InvalidConfig("htl stage boundaries must be ordered");
    LossTermMask mask;
    mask.dims = mask.angle = epoch >= boundaries[0] ? 1.0 : 0.0;
    mask.depth = epoch >= boundaries[1] ? 1.0 : 0.0;
    return mask;
}

} // namespace cop3d::cop
