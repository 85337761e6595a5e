#include "cop3d/micronet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace cop3d::micronet {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

uint64_t Rng::next() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() { return (next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

double Rng::gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
}

uint64_t Rng::below(uint64_t n) {
    // Rejection sampling keeps the distribution exactly uniform.
    const uint64_t limit = n * (UINT64_MAX / n);
    uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
}

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul: " + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                            "x" + std::to_string(b.cols));
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw ShapeMismatch("matmul_at_b: inner dimensions disagree");
    Matrix out(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw ShapeMismatch("matmul_a_bt: inner dimensions disagree");
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            orow[j] = s;
        }
    }
    return out;
}

int Model::input_dim() const {
    for (const Layer& l : layers)
        if (const auto* lin = std::get_if<LinearLayer>(&l)) return lin->in_dim();
    return -1;
}

int Model::output_dim() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        if (const auto* lin = std::get_if<LinearLayer>(&*it)) return lin->out_dim();
    return -1;
}

std::vector<Matrix*> Model::parameters() {
    std::vector<Matrix*> out;
    for (Layer& l : layers)
        if (auto* lin = std::get_if<LinearLayer>(&l)) {
            out.push_back(&lin->W);
            if (lin->has_bias) out.push_back(&lin->b);
        }
    return out;
}

std::vector<const Matrix*> Model::parameters() const {
    std::vector<const Matrix*> out;
    for (const Layer& l : layers)
        if (const auto* lin = std::get_if<LinearLayer>(&l)) {
            out.push_back(&lin->W);
            if (lin->has_bias) out.push_back(&lin->b);
        }
    return out;
}

LinearLayer make_linear(int in, int out, Rng& rng, bool bias) {
    LinearLayer layer;
    layer.W = Matrix(in, out);
    layer.b = Matrix(1, out);
    layer.has_bias = bias;
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& w : layer.W.data) w = rng.uniform(-bound, bound);
    return layer;
}

Trace forward(const Model& model, const Matrix& x, bool train_mode, Rng* rng) {
    Trace trace;
    trace.train_mode = train_mode;
    trace.inputs.reserve(model.layers.size());
    trace.dropout_masks.resize(model.layers.size());

    Matrix cur = x;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        trace.inputs.push_back(cur);
        const Layer& layer = model.layers[li];
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            if (cur.cols != lin->in_dim())
                throw ShapeMismatch("linear layer expects width " +
                                    std::to_string(lin->in_dim()) + ", got " +
                                    std::to_string(cur.cols));
            Matrix next = matmul(cur, lin->W);
            if (lin->has_bias)
                for (int r = 0; r < next.rows; ++r)
                    for (int c = 0; c < next.cols; ++c)
                        next.at(r, c) += lin->b.at(0, c);
            cur = std::move(next);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
        } else {
            const auto& drop = std::get<DropoutLayer>(layer);
            if (train_mode && drop.prob > 0.0) {
                if (rng == nullptr)
                    throw InvalidConfig("dropout in train mode requires an rng");
                const double keep = 1.0 - drop.prob;
                Matrix mask(cur.rows, cur.cols);
                for (size_t i = 0; i < mask.size(); ++i)
                    mask.data[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
                for (size_t i = 0; i < cur.size(); ++i) cur.data[i] *= mask.data[i];
                trace.dropout_masks[li] = std::move(mask);
            }
        }
    }
    trace.output = std::move(cur);
    return trace;
}

Gradients backward(const Model& model, const Trace& trace, const Matrix& grad_out) {
    if (trace.inputs.size() != model.layers.size())
        throw ShapeMismatch("trace does not match model layer count");
    if (!grad_out.same_shape(trace.output))
        throw ShapeMismatch("grad_out shape does not match forward output");

    Gradients grads;
    Matrix g = grad_out;
    std::vector<Matrix> param_rev;

    for (int li = static_cast<int>(model.layers.size()) - 1; li >= 0; --li) {
        const Layer& layer = model.layers[li];
        const Matrix& input = trace.inputs[li];
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            Matrix dW = matmul_at_b(input, g);
            if (lin->has_bias) {
                Matrix db(1, lin->out_dim());
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) db.at(0, c) += g.at(r, c);
                param_rev.push_back(std::move(db));
            }
            param_rev.push_back(std::move(dW));
            g = matmul_a_bt(g, lin->W);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            for (size_t i = 0; i < g.size(); ++i)
                if (input.data[i] <= 0.0) g.data[i] = 0.0;
        } else {
            const Matrix& mask = trace.dropout_masks[li];
            if (mask.size() == g.size())
                for (size_t i = 0; i < g.size(); ++i) g.data[i] *= mask.data[i];
        }
    }

    grads.params.assign(param_rev.rbegin(), param_rev.rend());
    grads.input = std::move(g);
    return grads;
}

LossResult smooth_l1(const Matrix& pred, const Matrix& target, double beta) {
    if (!pred.same_shape(target))
        throw ShapeMismatch("smooth_l1: pred and target shapes differ");
    LossResult out;
    out.grad = Matrix(pred.rows, pred.cols);
    const double n = static_cast<double>(pred.size());
    double total = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        if (std::fabs(d) < beta) {
            total += 0.5 * d * d / beta;
            out.grad.data[i] = d / beta / n;
        } else {
            total += std::fabs(d) - 0.5 * beta;
            out.grad.data[i] = (d > 0.0 ? 1.0 : -1.0) / n;
        }
    }
    out.loss = total / n;
    return out;
}

ScalarLossResult focal_loss(const std::vector<double>& logits, int class_index,
                            double alpha, double gamma) {
    const int n = static_cast<int>(logits.size());
    if (class_index < 0 || class_index >= n)
        throw IndexOutOfRange("focal_loss: class index " +
                              std::to_string(class_index) + " out of range 0.." +
                              std::to_string(n - 1));

    // Stable softmax.
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(n);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - mx);
        denom += p[i];
    }
    for (double& v : p) v /= denom;

    const double pt = std::max(p[class_index], 1e-300);
    const double one_minus = 1.0 - pt;
    const double log_pt = std::log(pt);
    ScalarLossResult out;
    out.loss = -alpha * std::pow(one_minus, gamma) * log_pt;

    // dL/dp_t, then through softmax: dp_t/dz_j = p_t*(delta_tj - p_j).
    const double dL_dpt =
        -alpha * (-gamma * std::pow(one_minus, gamma - 1.0) * log_pt +
                  std::pow(one_minus, gamma) / pt);
    out.grad.resize(n);
    for (int j = 0; j < n; ++j) {
        const double delta = (j == class_index) ? 1.0 : 0.0;
        out.grad[j] = dL_dpt * pt * (delta - p[j]);
    }
    return out;
}

OptimizerState OptimizerState::init(const std::vector<Matrix*>& params,
                                    AdamWConfig hp) {
    OptimizerState st;
    st.hp = hp;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Matrix* p : params) {
        st.m.emplace_back(p->rows, p->cols);
        st.v.emplace_back(p->rows, p->cols);
    }
    return st;
}

void adamw_step(const std::vector<Matrix*>& params,
                const std::vector<const Matrix*>& grads, OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeMismatch("adamw_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const AdamWConfig& hp = state.hp;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.size(); ++t) {
        Matrix& p = *params[t];
        const Matrix& g = *grads[t];
        if (!p.same_shape(g) || !p.same_shape(state.m[t]))
            throw ShapeMismatch("adamw_step: tensor " + std::to_string(t) +
                                " shape mismatch");
        Matrix& m = state.m[t];
        Matrix& v = state.v[t];
        for (size_t i = 0; i < p.size(); ++i) {
            m.data[i] = hp.beta1 * m.data[i] + (1.0 - hp.beta1) * g.data[i];
            v.data[i] = hp.beta2 * v.data[i] + (1.0 - hp.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) +
                                  hp.weight_decay * p.data[i]);
        }
    }
}

GradCheckResult grad_check(const std::vector<Matrix*>& params,
                           const std::vector<const Matrix*>& analytic,
                           const std::function<double()>& loss_fn, double eps) {
    GradCheckResult result;
    for (size_t t = 0; t < params.size(); ++t) {
        Matrix& p = *params[t];
        const Matrix& a = *analytic[t];
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + eps;
            const double lp = loss_fn();
            p.data[i] = saved - eps;
            const double lm = loss_fn();
            p.data[i] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double denom =
                std::max({std::fabs(a.data[i]), std::fabs(numeric), 1e-3});
            const double rel = std::fabs(a.data[i] - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = static_cast<int>(t);
                result.worst_entry = static_cast<int>(i);
            }
        }
    }
    return result;
}

GradCheckResult grad_check(Model& model, const Matrix& x,
                           const std::function<LossResult(const Matrix&)>& loss_of_output,
                           double eps) {
    Trace trace = forward(model, x, false, nullptr);
    const LossResult at_base = loss_of_output(trace.output);
    Gradients grads = backward(model, trace, at_base.grad);

    auto params = model.parameters();
    std::vector<const Matrix*> analytic;
    analytic.reserve(grads.params.size());
    for (const Matrix& g : grads.params) analytic.push_back(&g);

    auto loss_fn = [&]() {
        Trace t = forward(model, x, false, nullptr);
        return loss_of_output(t.output).loss;
    };
    return grad_check(params, analytic, loss_fn, eps);
}

namespace {

constexpr char kMagic[8] = {'C', 'O', 'P', '3', 'D', 'N', 'E', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::ifstream& f) {
    unsigned char buf[4];
    f.read(reinterpret_cast<char*>(buf), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return v;
}

} // namespace

void save_tensors(const std::string& path, const std::vector<const Matrix*>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u32(f, static_cast<uint32_t>(tensors.size()));
    for (const Matrix* t : tensors) {
        write_u32(f, static_cast<uint32_t>(t->rows));
        write_u32(f, static_cast<uint32_t>(t->cols));
    }
    for (const Matrix* t : tensors) {
        static_assert(sizeof(double) == 8);
        f.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

std::vector<Matrix> load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("bad checkpoint magic in " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = read_u32(f);
    std::vector<std::pair<uint32_t, uint32_t>> shapes(count);
    for (auto& s : shapes) {
        s.first = read_u32(f);
        s.second = read_u32(f);
    }
    std::vector<Matrix> out;
    out.reserve(count);
    for (const auto& s : shapes) {
        Matrix m(static_cast<int>(s.first), static_cast<int>(s.second));
        f.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(m.size() * sizeof(double)));
        out.push_back(std::move(m));
    }
    if (!f) throw IoError("truncated checkpoint: " + path);
    return out;
}

} // namespace cop3d::micronet
