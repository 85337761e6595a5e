#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "cop3d/errors.hpp"

namespace cop3d::micronet {

/// Deterministic xorshift-family generator: xoshiro256** seeded via
/// splitmix64. Identical seeds give identical streams on every platform
/// (the integer stream is exact; gaussian() goes through libm and is exact
/// per-platform).
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next();
    /// Uniform double in [0, 1), 53 mantissa bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller (caches the spare draw).
    double gaussian();
    double gaussian(double mean, double stddev);
    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n);

  private:
    uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Dense row-major matrix of 64-bit floats. Vectors are 1 x n matrices.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

/// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// out = a^T * b
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
/// out = a * b^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

struct LinearLayer {
    Matrix W;       // in x out
    Matrix b;       // 1 x out
    bool has_bias = true;

    int in_dim() const { return W.rows; }
    int out_dim() const { return W.cols; }
};

struct ReluLayer {};

struct DropoutLayer {
    double prob = 0.1;
};

using Layer = std::variant<LinearLayer, ReluLayer, DropoutLayer>;

/// A feed-forward stack of layers applied in order.
struct Model {
    std::vector<Layer> layers;

    int input_dim() const;
    int output_dim() const;
    /// All trainable tensors (W, then b when biased, per linear layer, in order).
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
};

/// Xavier-uniform linear layer: W ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0.
LinearLayer make_linear(int in, int out, Rng& rng, bool bias = true);

/// Forward pass bookkeeping needed by backward(): the input to every layer
/// plus dropout masks (already divided by keep probability).
struct Trace {
    std::vector<Matrix> inputs;     // inputs.size() == layers.size()
    std::vector<Matrix> dropout_masks; // empty matrix for non-dropout layers
    Matrix output;
    bool train_mode = false;
};

/// Runs the stack. In train mode dropout draws masks from rng with inverted
/// scaling; in eval mode dropout is the identity.
Trace forward(const Model& model, const Matrix& x, bool train_mode, Rng* rng);

struct Gradients {
    /// Aligned with Model::parameters() order.
    std::vector<Matrix> params;
    Matrix input;
};

/// Analytic backprop through the stack for the given upstream gradient.
Gradients backward(const Model& model, const Trace& trace, const Matrix& grad_out);

struct LossResult {
    double loss = 0.0;
    Matrix grad;   // d loss / d pred, same shape as pred
};

/// Mean-reduced smooth L1: 0.5*d^2/beta for |d| < beta, else |d| - 0.5*beta.
LossResult smooth_l1(const Matrix& pred, const Matrix& target, double beta = 1.0);

struct ScalarLossResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits
};

/// Softmax focal loss for a single logit row: -alpha*(1-p_t)^gamma*log(p_t).
ScalarLossResult focal_loss(const std::vector<double>& logits, int class_index,
                            double alpha = 0.25, double gamma = 2.0);

struct AdamWConfig {
    double lr = 2e-4;            // documented default; experiments override
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators mirroring the parameter list.
struct OptimizerState {
    AdamWConfig hp;
    std::vector<Matrix> m, v;
    long step = 0;

    static OptimizerState init(const std::vector<Matrix*>& params, AdamWConfig hp);
};

/// One decoupled-weight-decay Adam step over the parameter list.
void adamw_step(const std::vector<Matrix*>& params,
                const std::vector<const Matrix*>& grads, OptimizerState& state);

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_tensor = -1;   // index into the parameter list
    int worst_entry = -1;    // flat index within that tensor
};

/// Central-difference check of d loss / d params against `analytic`, where
/// `loss_fn` re-evaluates the scalar loss from the current parameter values.
/// Relative error uses denominator max(|a|, |n|, 1e-3).
GradCheckResult grad_check(const std::vector<Matrix*>& params,
                           const std::vector<const Matrix*>& analytic,
                           const std::function<double()>& loss_fn,
                           double eps = 1e-5);

/// Convenience wrapper: checks a Model against a loss of its output. The
/// callback returns the loss and its analytic gradient w.r.t. the output.
GradCheckResult grad_check(Model& model, const Matrix& x,
                           const std::function<LossResult(const Matrix&)>& loss_of_output,
                           double eps = 1e-5);

/// Checkpoint: magic "COP3DNET", u32 version, u32 tensor count, u32 rows/cols
/// per tensor, then row-major float64 payloads. All fields little-endian.
void save_tensors(const std::string& path, const std::vector<const Matrix*>& tensors);
std::vector<Matrix> load_tensors(const std::string& path);

} // namespace cop3d::micronet
