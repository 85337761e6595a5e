#include "cop3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "cop3d/errors.hpp"

namespace cop3d::eval {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ShapeMismatch("pearson: series lengths differ");
    const size_t n = a.size();
    if (n < 2) throw TooFewSamples("pearson needs at least 2 samples");

    double mean_a = 0.0, mean_b = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);

    double num = 0.0, den_a = 0.0, den_b = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        num += da * db;
        den_a += da * da;
        den_b += db * db;
    }
    // A constant series can pick up roundoff of order ulp(mean) when the mean
    // is subtracted; treat spread below 1e-12 of the mean scale as zero.
    auto is_constant = [&](double den, double mean) {
        const double tol = 1e-12 * std::fabs(mean);
        return den <= static_cast<double>(n) * tol * tol;
    };
    if (is_constant(den_a, mean_a) || is_constant(den_b, mean_b))
        throw DegenerateVariance("pearson: a series has zero variance");
    return num / (std::sqrt(den_a) * std::sqrt(den_b));
}

GreedyMatches match_detections_greedy(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruthObj>& gts,
                                      double iou_threshold) {
    GreedyMatches out;
    out.tp.assign(dets.size(), false);
    out.det_to_gt.assign(dets.size(), -1);

    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return dets[i].score > dets[j].score;
    });

    std::vector<bool> gt_used(gts.size(), false);
    for (size_t oi : order) {
        const Detection& det = dets[oi];
        int best_gt = -1;
        double best_iou = iou_threshold;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g] || gts[g].class_index != det.class_index) continue;
            const double iou = geometry::iou3d(det.box, gts[g].box);
            if (iou >= best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            gt_used[static_cast<size_t>(best_gt)] = true;
            out.tp[oi] = true;
            out.det_to_gt[oi] = best_gt;
        }
    }
    return out;
}

double ap40(const std::vector<Detection>& dets,
            const std::vector<GroundTruthObj>& gts, double iou_threshold) {
    if (gts.empty()) throw NoGroundTruth("ap40 needs at least one ground truth");

    // Greedy matching per scene, then one global confidence-ordered curve.
    std::map<long, std::vector<Detection>> dets_by_scene;
    std::map<long, std::vector<GroundTruthObj>> gts_by_scene;
    for (const auto& d : dets) dets_by_scene[d.scene_id].push_back(d);
    for (const auto& g : gts) gts_by_scene[g.scene_id].push_back(g);

    std::vector<std::pair<double, bool>> scored;  // (score, is_tp)
    scored.reserve(dets.size());
    for (auto& [scene, sd] : dets_by_scene) {
        auto it = gts_by_scene.find(scene);
        static const std::vector<GroundTruthObj> kNone;
        const auto& sg = it == gts_by_scene.end() ? kNone : it->second;
        const GreedyMatches m = match_detections_greedy(sd, sg, iou_threshold);
        for (size_t i = 0; i < sd.size(); ++i)
            scored.emplace_back(sd[i].score, m.tp[i]);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const double n_gt = static_cast<double>(gts.size());
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& [score, is_tp] : scored) {
        (void)score;
        if (is_tp) ++tp; else ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }

    // Interpolated precision: max precision at any operating point with
    // recall >= r, evaluated at the 40 points {1/40, ..., 40/40}.
    double ap = 0.0;
    for (int k = 1; k <= 40; ++k) {
        const double r = static_cast<double>(k) / 40.0;
        double best = 0.0;
        for (size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= r) best = std::max(best, precision[i]);
        ap += best;
    }
    return 100.0 * ap / 40.0;
}

MaeTable mae_by_range(const std::vector<AttributeErrors>& pairs,
                      const std::vector<double>& edges) {
    if (edges.empty()) throw InvalidConfig("mae_by_range needs bin edges");
    for (size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1])
            throw InvalidConfig("mae_by_range edges must be increasing");

    MaeTable table;
    table.edges = edges;
    const size_t n_bins = edges.size();
    for (auto& attr : table.cells) attr.assign(n_bins, MaeCell{});

    std::array<std::vector<double>, 3> sums;
    for (auto& s : sums) s.assign(n_bins, 0.0);

    for (const auto& p : pairs) {
        size_t bin = 0;
        for (size_t i = 0; i < n_bins; ++i)
            if (p.gt_depth >= edges[i]) bin = i;
        if (p.gt_depth < edges[0]) continue;  // below the first edge: unbinned
        const double errs[3] = {p.size_err, p.angle_err, p.depth_err};
        for (int a = 0; a < 3; ++a) {
            sums[static_cast<size_t>(a)][bin] += errs[a];
            table.cells[static_cast<size_t>(a)][bin].count += 1;
        }
    }
    for (int a = 0; a < 3; ++a)
        for (size_t b = 0; b < n_bins; ++b)
            if (table.cells[static_cast<size_t>(a)][b].count > 0)
                table.cells[static_cast<size_t>(a)][b].mae =
                    sums[static_cast<size_t>(a)][b] /
                    table.cells[static_cast<size_t>(a)][b].count;
    return table;
}

Difficulty difficulty_of(double box_height_px) {
    if (box_height_px >= 40.0) return Difficulty::Easy;
    if (box_height_px >= 25.0) return Difficulty::Moderate;
    return Difficulty::Hard;
}

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return "easy";
        case Difficulty::Moderate: return "moderate";
        case Difficulty::Hard: return "hard";
    }
    return "?";
}

SeedStats seed_stats(const std::vector<double>& values) {
    if (values.size() < 2)
        throw TooFewSamples("seed_stats needs at least 2 values");
    SeedStats s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return s;
}

double EvalReport::overall_mae(int attr) const {
    double sum = 0.0;
    int count = 0;
    for (const MaeCell& c : mae.cells[static_cast<size_t>(attr)]) {
        sum += c.mae * c.count;
        count += c.count;
    }
    return count > 0 ? sum / count : 0.0;
}

void fill_pearson(EvalReport& report, const std::vector<AttributeErrors>& pairs) {
    std::array<std::vector<double>, 3> series;
    for (const auto& p : pairs) {
        series[0].push_back(p.size_err);
        series[1].push_back(p.angle_err);
        series[2].push_back(p.depth_err);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            try {
                report.pearson_r[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    pearson(series[static_cast<size_t>(i)],
                            series[static_cast<size_t>(j)]);
            } catch (const Error&) {
                report.pearson_r[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    std::nullopt;
            }
        }
}

namespace {

const char* kAttrNames[3] = {"size", "angle", "depth"};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

} // namespace

void write_ap40_csv(const std::string& path, const EvalReport& report) {
    auto f = open_out(path);
    f << "class,iou_threshold,ap40,n_gt\n";
    for (const ApRow& row : report.ap_rows)
        f << row.class_name << ',' << fmt(row.iou_threshold) << ',' << fmt(row.ap)
          << ',' << row.n_gt << '\n';
}

void write_mae_csv(const std::string& path, const EvalReport& report) {
    auto f = open_out(path);
    f << "attribute,bin_lo,bin_hi,mae,count\n";
    const auto& edges = report.mae.edges;
    for (int a = 0; a < 3; ++a) {
        for (size_t b = 0; b < edges.size(); ++b) {
            const MaeCell& c = report.mae.cells[static_cast<size_t>(a)][b];
            if (c.count == 0) continue;  // absent, not zero
            const std::string hi =
                b + 1 < edges.size() ? fmt(edges[b + 1]) : std::string("inf");
            f << kAttrNames[a] << ',' << fmt(edges[b]) << ',' << hi << ','
              << fmt(c.mae) << ',' << c.count << '\n';
        }
    }
}

void write_pearson_csv(const std::string& path, const EvalReport& report,
                       const std::string& header_note) {
    auto f = open_out(path);
    if (!header_note.empty()) f << "# " << header_note << '\n';
    f << "pair,r,n\n";
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const auto& r =
                report.pearson_r[static_cast<size_t>(i)][static_cast<size_t>(j)];
            f << kAttrNames[i] << '-' << kAttrNames[j] << ','
              << (r ? fmt(*r) : std::string("nan")) << ',' << report.n_matched
              << '\n';
        }
}

} // namespace cop3d::eval
