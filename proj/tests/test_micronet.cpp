#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cop3d/micronet.hpp"

using namespace cop3d;
using namespace cop3d::micronet;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(-scale, scale);
    return m;
}

Model two_layer_relu(int in, int hidden, int out, Rng& rng) {
    Model m;
    m.layers.push_back(make_linear(in, hidden, rng));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(make_linear(hidden, out, rng));
    return m;
}

LossResult squared_loss(const Matrix& y) {
    LossResult r;
    r.grad = y;
    for (double v : y.data) r.loss += 0.5 * v * v;
    return r;
}

} // namespace

TEST_CASE("rng determinism and stream values") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
    Rng c(1), d(2);
    bool differ = false;
    for (int i = 0; i < 10; ++i)
        if (c.next() != d.next()) differ = true;
    CHECK(differ);

    Rng e(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = e.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("rng gaussian moments") {
    Rng rng(99);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum2 += g * g;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("forward: identity linear, relu, eval-mode dropout") {
    Model m;
    LinearLayer lin;
    lin.W = Matrix(2, 2);
    lin.W.at(0, 0) = 1.0;
    lin.W.at(1, 1) = 1.0;
    lin.b = Matrix(1, 2);
    m.layers.push_back(lin);

    Matrix x(1, 2);
    x.at(0, 0) = 3.0;
    x.at(0, 1) = -2.0;
    const Trace t = forward(m, x, false, nullptr);
    CHECK(t.output.at(0, 0) == 3.0);
    CHECK(t.output.at(0, 1) == -2.0);

    Model relu_only;
    relu_only.layers.push_back(ReluLayer{});
    Matrix y(1, 2);
    y.at(0, 0) = 1.0;
    y.at(0, 1) = -1.0;
    const Trace tr = forward(relu_only, y, false, nullptr);
    CHECK(tr.output.at(0, 0) == 1.0);
    CHECK(tr.output.at(0, 1) == 0.0);

    Model with_drop;
    with_drop.layers.push_back(DropoutLayer{0.5});
    Rng rng(5);
    const Matrix in = random_matrix(3, 4, rng);
    const Trace e1 = forward(with_drop, in, false, nullptr);
    const Trace e2 = forward(with_drop, in, false, nullptr);
    for (size_t i = 0; i < in.size(); ++i) {
        CHECK(e1.output.data[i] == in.data[i]);
        CHECK(e1.output.data[i] == e2.output.data[i]);
    }
}

TEST_CASE("forward shape mismatch") {
    Rng rng(1);
    Model m = two_layer_relu(4, 8, 2, rng);
    CHECK_THROWS_AS(forward(m, Matrix(1, 5), false, nullptr), ShapeMismatch);
}

TEST_CASE("dropout preserves expectation") {
    Model m;
    m.layers.push_back(DropoutLayer{0.3});
    Rng rng(42);
    Matrix x(1, 8);
    x.fill(1.0);
    double total = 0.0;
    const int passes = 100000;
    for (int i = 0; i < passes; ++i) {
        const Trace t = forward(m, x, true, &rng);
        for (double v : t.output.data) total += v;
    }
    const double mean = total / (passes * 8.0);
    CHECK(std::fabs(mean - 1.0) < 0.01);
}

TEST_CASE("backward: gradients match finite differences on a 2-layer net") {
    Rng rng(2024);
    Model m = two_layer_relu(5, 16, 3, rng);
    Matrix x = random_matrix(4, 5, rng);

    // Keep pre-activations away from the ReLU kink.
    const Trace probe = forward(m, x, false, nullptr);
    REQUIRE(probe.inputs.size() == 3);
    for (double v : probe.inputs[1].data) REQUIRE(std::fabs(v) > 1e-3);

    const GradCheckResult r =
        grad_check(m, x, [](const Matrix& y) { return squared_loss(y); });
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("backward: zero upstream and linearity") {
    Rng rng(77);
    Model m = two_layer_relu(3, 8, 2, rng);
    const Matrix x = random_matrix(2, 3, rng);
    const Trace t = forward(m, x, false, nullptr);

    Matrix zero(t.output.rows, t.output.cols);
    const Gradients gz = backward(m, t, zero);
    for (const Matrix& g : gz.params)
        for (double v : g.data) CHECK(v == 0.0);
    for (double v : gz.input.data) CHECK(v == 0.0);

    Matrix g1 = random_matrix(t.output.rows, t.output.cols, rng);
    Matrix g2 = g1;
    for (double& v : g2.data) v *= 2.0;
    const Gradients a = backward(m, t, g1);
    const Gradients b = backward(m, t, g2);
    for (size_t p = 0; p < a.params.size(); ++p)
        for (size_t i = 0; i < a.params[p].size(); ++i)
            CHECK(b.params[p].data[i] ==
                  doctest::Approx(2.0 * a.params[p].data[i]).epsilon(1e-12));
}

TEST_CASE("smooth_l1 hand values") {
    Matrix pred(1, 1), target(1, 1);
    pred.at(0, 0) = 1.0;
    target.at(0, 0) = 1.0;
    CHECK(smooth_l1(pred, target).loss == 0.0);

    pred.at(0, 0) = 0.5;
    target.at(0, 0) = 0.0;
    CHECK(smooth_l1(pred, target).loss == doctest::Approx(0.125));

    pred.at(0, 0) = 2.0;
    CHECK(smooth_l1(pred, target).loss == doctest::Approx(1.5));

    CHECK_THROWS_AS(smooth_l1(Matrix(1, 2), Matrix(2, 1)), ShapeMismatch);
}

TEST_CASE("smooth_l1 gradient finite difference") {
    Rng rng(31);
    Matrix pred = random_matrix(3, 4, rng, 2.0);
    const Matrix target = random_matrix(3, 4, rng, 2.0);
    const LossResult base = smooth_l1(pred, target);
    const double eps = 1e-6;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double saved = pred.data[i];
        pred.data[i] = saved + eps;
        const double lp = smooth_l1(pred, target).loss;
        pred.data[i] = saved - eps;
        const double lm = smooth_l1(pred, target).loss;
        pred.data[i] = saved;
        CHECK(base.grad.data[i] == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-4));
    }
}

TEST_CASE("focal loss values and gradient") {
    // Saturated correct prediction: loss -> 0.
    CHECK(focal_loss({50.0, 0.0, 0.0}, 0).loss < 1e-10);

    // Uniform logits over 3 classes: -alpha * (1 - 1/3)^gamma * ln(1/3).
    const double expected = -0.25 * std::pow(2.0 / 3.0, 2.0) * std::log(1.0 / 3.0);
    CHECK(focal_loss({1.0, 1.0, 1.0}, 1).loss == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(focal_loss({0.0, 0.0}, 2), IndexOutOfRange);
    CHECK_THROWS_AS(focal_loss({0.0, 0.0}, -1), IndexOutOfRange);

    Rng rng(55);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> logits(4);
        for (double& v : logits) v = rng.uniform(-2.0, 2.0);
        const int target = static_cast<int>(rng.below(4));
        const auto base = focal_loss(logits, target);
        const double eps = 1e-6;
        for (size_t j = 0; j < logits.size(); ++j) {
            auto bumped = logits;
            bumped[j] += eps;
            const double lp = focal_loss(bumped, target).loss;
            bumped[j] -= 2 * eps;
            const double lm = focal_loss(bumped, target).loss;
            const double fd = (lp - lm) / (2 * eps);
            CHECK(base.grad[j] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("adamw: fixed point, first-step magnitude, determinism") {
    Rng rng(3);
    Matrix p = random_matrix(4, 4, rng);
    const Matrix p0 = p;
    Matrix g(4, 4);  // zero gradient

    AdamWConfig hp;
    hp.weight_decay = 0.0;
    OptimizerState st = OptimizerState::init({&p}, hp);
    adamw_step({&p}, {&g}, st);
    for (size_t i = 0; i < p.size(); ++i) CHECK(p.data[i] == p0.data[i]);
    CHECK(st.step == 1);

    // One step from zero moments moves each weight by about lr * sign(g).
    Matrix q = random_matrix(3, 3, rng);
    const Matrix q0 = q;
    Matrix gq = random_matrix(3, 3, rng);
    OptimizerState st2 = OptimizerState::init({&q}, hp);
    adamw_step({&q}, {&gq}, st2);
    for (size_t i = 0; i < q.size(); ++i) {
        const double delta = q.data[i] - q0.data[i];
        CHECK(std::fabs(delta) <= hp.lr * (1.0 + 1e-6));
        if (std::fabs(gq.data[i]) > 1e-9)
            CHECK(delta * gq.data[i] < 0.0);  // moves against the gradient
    }

    // Determinism: identical seeds, identical trajectories, bitwise.
    auto run_training = [](uint64_t seed) {
        Rng r(seed);
        Model m = two_layer_relu(4, 8, 2, r);
        auto params = m.parameters();
        OptimizerState st3 = OptimizerState::init(params, AdamWConfig{});
        for (int step = 0; step < 20; ++step) {
            Matrix x = random_matrix(6, 4, r);
            const Trace t = forward(m, x, false, nullptr);
            Matrix grad = t.output;
            const Gradients gr = backward(m, t, grad);
            std::vector<const Matrix*> gp;
            for (const Matrix& gm : gr.params) gp.push_back(&gm);
            adamw_step(params, gp, st3);
        }
        std::vector<double> flat;
        for (const Matrix* pm : params)
            flat.insert(flat.end(), pm->data.begin(), pm->data.end());
        return flat;
    };
    const auto w1 = run_training(777);
    const auto w2 = run_training(777);
    REQUIRE(w1.size() == w2.size());
    for (size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == w2[i]);
}

TEST_CASE("grad_check identity layer with squared loss is near-exact") {
    Model m;
    LinearLayer lin;
    lin.W = Matrix(3, 3);
    for (int i = 0; i < 3; ++i) lin.W.at(i, i) = 1.0;
    lin.b = Matrix(1, 3);
    m.layers.push_back(lin);

    Rng rng(8);
    const Matrix x = random_matrix(2, 3, rng);
    const GradCheckResult r =
        grad_check(m, x, [](const Matrix& y) { return squared_loss(y); });
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check reports the offending parameter") {
    Rng rng(9);
    Model m = two_layer_relu(3, 6, 2, rng);
    auto params = m.parameters();
    const Matrix x = random_matrix(2, 3, rng);

    // Deliberately corrupt the analytic gradient and expect it pinpointed.
    Trace t = forward(m, x, false, nullptr);
    Matrix go = t.output;
    Gradients gr = backward(m, t, go);
    gr.params[2].data[3] += 1.0;
    std::vector<const Matrix*> analytic;
    for (const Matrix& g : gr.params) analytic.push_back(&g);
    auto loss_fn = [&]() {
        return squared_loss(forward(m, x, false, nullptr).output).loss;
    };
    const GradCheckResult r = grad_check(params, analytic, loss_fn);
    CHECK(r.max_rel_error > 0.1);
    CHECK(r.worst_tensor == 2);
    CHECK(r.worst_entry == 3);
}

TEST_CASE("no NaN/Inf from finite inputs") {
    Rng rng(12);
    Model m = two_layer_relu(6, 12, 4, rng);
    Matrix x = random_matrix(8, 6, rng, 50.0);
    Trace t = forward(m, x, true, &rng);
    CHECK(t.output.all_finite());
    const Gradients g = backward(m, t, t.output);
    for (const Matrix& gm : g.params) CHECK(gm.all_finite());
    CHECK(std::isfinite(focal_loss({1e8, -1e8, 0.0}, 1).loss));
}

TEST_CASE("checkpoint round-trip") {
    Rng rng(21);
    Model m = two_layer_relu(4, 8, 2, rng);
    const auto params = m.parameters();
    std::vector<const Matrix*> cparams(params.begin(), params.end());

    const std::string path =
        (std::filesystem::temp_directory_path() / "cop3d_ckpt_test.bin").string();
    save_tensors(path, cparams);
    const std::vector<Matrix> loaded = load_tensors(path);
    REQUIRE(loaded.size() == cparams.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded[i].same_shape(*cparams[i]));
        for (size_t j = 0; j < loaded[i].size(); ++j)
            CHECK(loaded[i].data[j] == cparams[i]->data[j]);
    }
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_tensors("/nonexistent/path/ckpt.bin"), IoError);
}
