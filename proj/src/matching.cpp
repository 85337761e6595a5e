#include "cop3d/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace cop3d::matching {

using micronet::Matrix;

void CostWeights::validate() const {
    if (cls < 0 || bbox_l1 < 0 || giou < 0 || center3d < 0)
        throw InvalidConfig("cost weights must be >= 0");
}

void LossWeights::validate() const {
    if (cls < 0 || bbox < 0 || giou < 0 || center3d < 0 || dims < 0 ||
        angle < 0 || depth < 0)
        throw InvalidConfig("loss weights must be >= 0");
    if (smooth_l1_beta <= 0) throw InvalidConfig("smooth_l1_beta must be > 0");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Shortest-augmenting-path assignment for an n x m matrix with n <= m.
/// Returns per-row column indices and the optimal cost.
double solve_rect(const Matrix& a, std::vector<int>& row_to_col) {
    const int n = a.rows, m = a.cols;
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = -1;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    row_to_col.assign(n, -1);
    double cost = 0.0;
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) {
            row_to_col[p[j] - 1] = j - 1;
            cost += a.at(p[j] - 1, j - 1);
        }
    return cost;
}

double optimal_cost(const Matrix& cost) {
    if (cost.rows <= cost.cols) {
        std::vector<int> tmp;
        return solve_rect(cost, tmp);
    }
    Matrix t(cost.cols, cost.rows);
    for (int i = 0; i < cost.rows; ++i)
        for (int j = 0; j < cost.cols; ++j) t.at(j, i) = cost.at(i, j);
    std::vector<int> tmp;
    return solve_rect(t, tmp);
}

/// Optimal cost of assigning `need` pairs within the active rows/columns.
double optimal_cost_sub(const Matrix& cost, const std::vector<int>& rows,
                        const std::vector<int>& cols) {
    Matrix sub(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols.size(); ++j)
            sub.at(static_cast<int>(i), static_cast<int>(j)) =
                cost.at(rows[i], cols[j]);
    return optimal_cost(sub);
}

} // namespace

double hungarian_cost(const Matrix& cost) {
    if (cost.rows < 1 || cost.cols < 1)
        throw EmptyMatrix("hungarian needs a nonempty cost matrix");
    for (double v : cost.data)
        if (!std::isfinite(v))
            throw InvalidConfig("hungarian needs finite cost entries");
    return optimal_cost(cost);
}

Assignment hungarian(const Matrix& cost) {
    const double best = hungarian_cost(cost);
    const int K = cost.rows, N = cost.cols;
    const int need_total = std::min(K, N);
    const double tol = 1e-9 * (1.0 + std::fabs(best));

    // Fix pairs row by row, lowest column first, keeping the total optimal.
    // Skipping a row is considered only after every column, and only when
    // enough rows remain to complete the assignment.
    Assignment out;
    std::vector<int> cols_active(N);
    for (int j = 0; j < N; ++j) cols_active[j] = j;
    double fixed = 0.0;
    int need = need_total;

    for (int r = 0; r < K && need > 0; ++r) {
        std::vector<int> rows_rest;
        for (int i = r + 1; i < K; ++i) rows_rest.push_back(i);

        bool placed = false;
        for (size_t jc = 0; jc < cols_active.size(); ++jc) {
            const int c = cols_active[jc];
            double candidate = fixed + cost.at(r, c);
            if (need - 1 > 0) {
                if (static_cast<int>(rows_rest.size()) < need - 1) continue;
                std::vector<int> cols_rest;
                for (int cc : cols_active)
                    if (cc != c) cols_rest.push_back(cc);
                candidate += optimal_cost_sub(cost, rows_rest, cols_rest);
            }
            if (std::fabs(candidate - best) <= tol) {
                out.pairs.emplace_back(r, c);
                fixed += cost.at(r, c);
                cols_active.erase(cols_active.begin() + static_cast<long>(jc));
                --need;
                placed = true;
                break;
            }
        }
        if (!placed) {
            // Row r stays unmatched; feasible only when enough rows remain.
            if (static_cast<int>(rows_rest.size()) < need)
                throw InvalidAssignment("hungarian internal: no consistent pair");
        }
    }
    return out;
}

Matrix build_cost_matrix(const std::vector<cop::AttributePrediction>& preds,
                         const std::vector<GtObject>& gts, const CostWeights& w) {
    w.validate();
    if (preds.empty() || gts.empty())
        throw EmptyMatrix("cost matrix needs nonempty prediction and gt lists");
    Matrix cost(static_cast<int>(preds.size()), static_cast<int>(gts.size()));
    for (size_t k = 0; k < preds.size(); ++k) {
        const auto& p = preds[k];
        for (size_t n = 0; n < gts.size(); ++n) {
            const auto& g = gts[n];
            const double p_class =
                g.class_index >= 0 &&
                        g.class_index < static_cast<int>(p.class_probs.size())
                    ? p.class_probs[static_cast<size_t>(g.class_index)]
                    : 0.0;
            double l1 = std::fabs(p.box2d.u_min - g.box2d.u_min) +
                        std::fabs(p.box2d.v_min - g.box2d.v_min) +
                        std::fabs(p.box2d.u_max - g.box2d.u_max) +
                        std::fabs(p.box2d.v_max - g.box2d.v_max);
            double center = std::fabs(p.box2d.center_u() - g.box2d.center_u()) +
                            std::fabs(p.box2d.center_v() - g.box2d.center_v());
            const double giou = geometry::giou2d(p.box2d, g.box2d);
            cost.at(static_cast<int>(k), static_cast<int>(n)) =
                w.cls * (1.0 - p_class) + w.bbox_l1 * l1 + w.giou * (1.0 - giou) +
                w.center3d * center;
        }
    }
    return cost;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SmoothL1Term {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d diff (before mean reduction)
};

SmoothL1Term smooth_l1_elem(double diff, double beta) {
    SmoothL1Term t;
    if (std::fabs(diff) < beta) {
        t.loss = 0.5 * diff * diff / beta;
        t.grad = diff / beta;
    } else {
        t.loss = std::fabs(diff) - 0.5 * beta;
        t.grad = diff > 0.0 ? 1.0 : -1.0;
    }
    return t;
}

/// GIoU between (x0,y0,x1,y1) and a fixed gt box, plus the analytic gradient
/// with respect to the four prediction corners. Piecewise smooth; branch
/// indicators follow the min/max structure.
struct GiouGrad {
    double giou = 0.0;
    std::array<double, 4> d{};  // d giou / d (x0, y0, x1, y1)
};

GiouGrad giou_with_grad(const geometry::Box2D& p, const geometry::Box2D& g) {
    GiouGrad out;
    const double ax = p.u_max - p.u_min, ay = p.v_max - p.v_min;
    const double A = ax * ay;
    const double B = (g.u_max - g.u_min) * (g.v_max - g.v_min);

    const double ix0 = std::max(p.u_min, g.u_min);
    const double iy0 = std::max(p.v_min, g.v_min);
    const double ix1 = std::min(p.u_max, g.u_max);
    const double iy1 = std::min(p.v_max, g.v_max);
    const double iw = ix1 - ix0, ih = iy1 - iy0;
    const bool has_inter = iw > 0.0 && ih > 0.0;
    const double I = has_inter ? iw * ih : 0.0;

    const double hx0 = std::min(p.u_min, g.u_min);
    const double hy0 = std::min(p.v_min, g.v_min);
    const double hx1 = std::max(p.u_max, g.u_max);
    const double hy1 = std::max(p.v_max, g.v_max);
    const double hw = hx1 - hx0, hh = hy1 - hy0;
    const double H = hw * hh;

    const double U = A + B - I;
    out.giou = (U > 0.0 ? I / U : 0.0) - (H > 0.0 ? (H - U) / H : 0.0);

    // dA/d corners
    const double dA[4] = {-ay, -ax, ay, ax};
    // dI/d corners (zero when no positive intersection)
    double dI[4] = {0, 0, 0, 0};
    if (has_inter) {
        dI[0] = (p.u_min > g.u_min) ? -ih : 0.0;
        dI[1] = (p.v_min > g.v_min) ? -iw : 0.0;
        dI[2] = (p.u_max < g.u_max) ? ih : 0.0;
        dI[3] = (p.v_max < g.v_max) ? iw : 0.0;
    }
    // dH/d corners
    const double dH[4] = {(p.u_min < g.u_min) ? -hh : 0.0,
                          (p.v_min < g.v_min) ? -hw : 0.0,
                          (p.u_max > g.u_max) ? hh : 0.0,
                          (p.v_max > g.v_max) ? hw : 0.0};

    for (int i = 0; i < 4; ++i) {
        const double dU = dA[i] - dI[i];
        double d = 0.0;
        if (U > 0.0) d += (dI[i] * U - I * dU) / (U * U);
        // (H - U)/H = 1 - U/H, so d term = -(dU*H - U*dH)/H^2
        if (H > 0.0) d += (dU * H - U * dH[i]) / (H * H);
        out.d[i] = d;
    }
    return out;
}

} // namespace

LossOutput loss_total(const cop::RawOutputs& raw, const cop::DecodeContext& ctx,
                      const std::vector<GtObject>& gts, const Assignment& assignment,
                      const LossWeights& w, const cop::LossTermMask* mask) {
    w.validate();
    const int K = raw.class_logits.rows;
    const int n_logits = raw.class_logits.cols;
    const int background = n_logits - 1;
    const int N_gt = static_cast<int>(gts.size());
    if (N_gt == 0) throw InvalidAssignment("loss_total needs at least one gt");

    std::set<int> used_preds, used_gts;
    for (const auto& [k, n] : assignment.pairs) {
        if (k < 0 || k >= K || n < 0 || n >= N_gt)
            throw InvalidAssignment("assignment index out of range");
        if (!used_preds.insert(k).second || !used_gts.insert(n).second)
            throw InvalidAssignment("assignment indices must be unique");
    }

    cop::LossTermMask m;
    if (mask) m = *mask;

    LossOutput out;
    out.grad.class_logits = Matrix(K, n_logits);
    out.grad.box2d = Matrix(K, 4);
    out.grad.size = Matrix(K, 3);
    out.grad.angle = Matrix(K, 2);
    out.grad.depth = Matrix(K, 1);

    const double inv_ngt = 1.0 / static_cast<double>(N_gt);

    for (const auto& [k, n] : assignment.pairs) {
        const GtObject& g = gts[static_cast<size_t>(n)];

        // --- class focal ---
        {
            std::vector<double> logits(n_logits);
            for (int c = 0; c < n_logits; ++c) logits[c] = raw.class_logits.at(k, c);
            auto fl = micronet::focal_loss(logits, g.class_index, w.focal_alpha,
                                           w.focal_gamma);
            const double scale = w.cls * m.cls * inv_ngt;
            out.terms.cls += scale * fl.loss;
            for (int c = 0; c < n_logits; ++c)
                out.grad.class_logits.at(k, c) += scale * fl.grad[c];
        }

        // --- decode the 2D box (shared by bbox / giou / center terms) ---
        const double s[4] = {sigmoid(raw.box2d.at(k, 0)), sigmoid(raw.box2d.at(k, 1)),
                             sigmoid(raw.box2d.at(k, 2)), sigmoid(raw.box2d.at(k, 3))};
        const double ds[4] = {s[0] * (1 - s[0]), s[1] * (1 - s[1]),
                              s[2] * (1 - s[2]), s[3] * (1 - s[3])};
        const geometry::Box2D pbox{s[0] - 0.5 * s[2], s[1] - 0.5 * s[3],
                                   s[0] + 0.5 * s[2], s[1] + 0.5 * s[3]};
        // corner derivatives wrt (cu, cv, bw, bh)
        // x0 = cu - bw/2; y0 = cv - bh/2; x1 = cu + bw/2; y1 = cv + bh/2
        auto corner_to_raw = [&](const std::array<double, 4>& dcorner) {
            // returns d/d raw box outputs
            std::array<double, 4> draw{};
            draw[0] = (dcorner[0] + dcorner[2]) * ds[0];
            draw[1] = (dcorner[1] + dcorner[3]) * ds[1];
            draw[2] = 0.5 * (dcorner[2] - dcorner[0]) * ds[2];
            draw[3] = 0.5 * (dcorner[3] - dcorner[1]) * ds[3];
            return draw;
        };

        {
            // --- bbox L1 on corners ---
            const double gc[4] = {g.box2d.u_min, g.box2d.v_min, g.box2d.u_max,
                                  g.box2d.v_max};
            const double pc[4] = {pbox.u_min, pbox.v_min, pbox.u_max, pbox.v_max};
            std::array<double, 4> dcorner{};
            double l1 = 0.0;
            for (int i = 0; i < 4; ++i) {
                const double diff = pc[i] - gc[i];
                l1 += std::fabs(diff);
                dcorner[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            }
            const double scale = w.bbox * m.bbox * inv_ngt;
            out.terms.bbox += scale * l1;
            const auto draw = corner_to_raw(dcorner);
            for (int i = 0; i < 4; ++i) out.grad.box2d.at(k, i) += scale * draw[i];
        }

        {
            // --- GIoU ---
            const GiouGrad gg = giou_with_grad(pbox, g.box2d);
            const double scale = w.giou * m.giou * inv_ngt;
            out.terms.giou += scale * (1.0 - gg.giou);
            std::array<double, 4> dcorner{-gg.d[0], -gg.d[1], -gg.d[2], -gg.d[3]};
            const auto draw = corner_to_raw(dcorner);
            for (int i = 0; i < 4; ++i) out.grad.box2d.at(k, i) += scale * draw[i];
        }

        {
            // --- projected-center L1 (box midpoints on both sides) ---
            const double du = s[0] - g.box2d.center_u();
            const double dv = s[1] - g.box2d.center_v();
            const double scale = w.center3d * m.center * inv_ngt;
            out.terms.center += scale * (std::fabs(du) + std::fabs(dv));
            out.grad.box2d.at(k, 0) +=
                scale * (du > 0 ? 1.0 : (du < 0 ? -1.0 : 0.0)) * ds[0];
            out.grad.box2d.at(k, 1) +=
                scale * (dv > 0 ? 1.0 : (dv < 0 ? -1.0 : 0.0)) * ds[1];
        }

        {
            // --- dims smooth L1 on decoded meters ---
            const auto& prior = ctx.prior_dims.at(static_cast<size_t>(g.class_index));
            const double gt_dims[3] = {g.w, g.h, g.l};
            const double scale = w.dims * m.dims * inv_ngt / 3.0;
            for (int i = 0; i < 3; ++i) {
                const double r = std::clamp(raw.size.at(k, i), -8.0, 8.0);
                const double dim = prior[static_cast<size_t>(i)] * std::exp(r);
                const auto t = smooth_l1_elem(dim - gt_dims[i], w.smooth_l1_beta);
                out.terms.dims += scale * t.loss;
                const bool clamped = raw.size.at(k, i) < -8.0 || raw.size.at(k, i) > 8.0;
                if (!clamped) out.grad.size.at(k, i) += scale * t.grad * dim;
            }
        }

        {
            // --- angle smooth L1 on the (sin, cos) pair ---
            const double target[2] = {std::sin(g.yaw), std::cos(g.yaw)};
            const double scale = w.angle * m.angle * inv_ngt / 2.0;
            for (int i = 0; i < 2; ++i) {
                const auto t =
                    smooth_l1_elem(raw.angle.at(k, i) - target[i], w.smooth_l1_beta);
                out.terms.angle += scale * t.loss;
                out.grad.angle.at(k, i) += scale * t.grad;
            }
        }

        {
            // --- depth smooth L1 on decoded meters ---
            const double r = std::clamp(raw.depth.at(k, 0), -30.0, 30.0);
            const double sp = r > 30.0 ? r : std::log1p(std::exp(r));
            const double z = sp * ctx.depth_scale;
            const auto t = smooth_l1_elem(z - g.depth, w.smooth_l1_beta);
            const double scale = w.depth * m.depth * inv_ngt;
            out.terms.depth += scale * t.loss;
            const bool clamped = raw.depth.at(k, 0) < -30.0 || raw.depth.at(k, 0) > 30.0;
            if (!clamped)
                out.grad.depth.at(k, 0) +=
                    scale * t.grad * ctx.depth_scale * sigmoid(r);
        }
    }

    // Unmatched predictions: mean background focal, so duplicating matched
    // pairs leaves this term unchanged.
    std::vector<int> unmatched;
    for (int k = 0; k < K; ++k)
        if (!used_preds.count(k)) unmatched.push_back(k);
    if (!unmatched.empty()) {
        const double scale =
            w.cls * m.cls / static_cast<double>(unmatched.size());
        for (int k : unmatched) {
            std::vector<double> logits(n_logits);
            for (int c = 0; c < n_logits; ++c) logits[c] = raw.class_logits.at(k, c);
            auto fl = micronet::focal_loss(logits, background, w.focal_alpha,
                                           w.focal_gamma);
            out.terms.background += scale * fl.loss;
            for (int c = 0; c < n_logits; ++c)
                out.grad.class_logits.at(k, c) += scale * fl.grad[c];
        }
    }

    out.terms.total = out.terms.cls + out.terms.bbox + out.terms.giou +
                      out.terms.center + out.terms.dims + out.terms.angle +
                      out.terms.depth + out.terms.background;
    return out;
}

} // namespace cop3d::matching
