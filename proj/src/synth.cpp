#include "cop3d/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cop3d/eval.hpp"

namespace cop3d::synth {

using micronet::Rng;

void ClassPrior::validate() const {
    if (name.empty()) throw InvalidConfig("class prior needs a name");
    if (std_w < 0 || std_h < 0 || std_l < 0)
        throw InvalidConfig("size std devs must be >= 0");
    if (!(mean_w > 3 * std_w && mean_h > 3 * std_h && mean_l > 3 * std_l))
        throw InvalidConfig("size means must exceed 3 sigma (class " + name + ")");
    if (!(z_min > 0 && z_max > z_min))
        throw InvalidConfig("depth range must satisfy 0 < z_min < z_max");
}

std::vector<ClassPrior> default_priors() {
    // Spreads chosen wide enough that 2D height alone under-determines depth.
    return {
        {"Car", 1.70, 1.60, 4.20, 0.30, 0.40, 0.90, 8.0, 70.0},
        {"Pedestrian", 0.65, 1.75, 0.85, 0.12, 0.40, 0.18, 8.0, 60.0},
        {"Cyclist", 0.60, 1.70, 1.80, 0.12, 0.40, 0.40, 8.0, 65.0},
    };
}

void SceneConfig::validate() const {
    if (objects_min < 1 || objects_max < objects_min)
        throw InvalidConfig("objects per scene range is empty");
    if (x_max < x_min || y_max < y_min)
        throw InvalidConfig("lateral/vertical sample ranges are empty");
    if (sigma_px < 0 || sigma_app < 0)
        throw InvalidConfig("noise sigmas must be >= 0");
    if (image_w <= 0 || image_h <= 0)
        throw InvalidConfig("image size must be positive");
    camera.validate();
}

std::vector<double> ObservationSample::features(int n_classes) const {
    std::vector<double> f;
    f.reserve(4 + static_cast<size_t>(n_classes) + 2);
    for (double v : obs_box) f.push_back(v);
    for (int c = 0; c < n_classes; ++c)
        f.push_back(c == class_index ? 1.0 : 0.0);
    f.push_back(cue[0]);
    f.push_back(cue[1]);
    return f;
}

namespace {

bool box_on_image(const geometry::Box2D& b, const SceneConfig& cfg) {
    return b.u_min >= 0.0 && b.v_min >= 0.0 && b.u_max <= cfg.image_w &&
           b.v_max <= cfg.image_h;
}

} // namespace

Scene sample_scene(const SceneConfig& cfg, const std::vector<ClassPrior>& priors,
                   long scene_id, Rng& rng) {
    cfg.validate();
    if (priors.empty()) throw InvalidConfig("need at least one class prior");
    for (const auto& p : priors) p.validate();

    Scene scene;
    scene.id = scene_id;
    const int count =
        cfg.objects_min +
        static_cast<int>(rng.below(static_cast<uint64_t>(cfg.objects_max - cfg.objects_min + 1)));

    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            SceneObject obj;
            obj.class_index = static_cast<int>(rng.below(priors.size()));
            const ClassPrior& prior = priors[static_cast<size_t>(obj.class_index)];
            obj.box.w = std::max(rng.gaussian(prior.mean_w, prior.std_w), 0.01);
            obj.box.h = std::max(rng.gaussian(prior.mean_h, prior.std_h), 0.01);
            obj.box.l = std::max(rng.gaussian(prior.mean_l, prior.std_l), 0.01);
            obj.box.center.z = rng.uniform(prior.z_min, prior.z_max);
            obj.box.center.x = rng.uniform(cfg.x_min, cfg.x_max);
            obj.box.center.y = rng.uniform(cfg.y_min, cfg.y_max);
            obj.box.yaw = geometry::wrap_angle(rng.uniform(-geometry::kPi, geometry::kPi));
            try {
                const geometry::Box2D b = geometry::project_box2d(cfg.camera, obj.box);
                if (box_on_image(b, cfg)) {
                    scene.objects.push_back(obj);
                    placed = true;
                }
            } catch (const NonPositiveDepth&) {
                // corner behind the camera: resample
            }
        }
        if (!placed)
            throw GenerationExhausted("could not place object after 1000 retries");
    }
    return scene;
}

std::vector<ObservationSample> render_observation(const Scene& scene,
                                                  const SceneConfig& cfg,
                                                  const std::vector<ClassPrior>& priors,
                                                  Rng& rng) {
    std::vector<ObservationSample> out;
    out.reserve(scene.objects.size());
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const SceneObject& obj = scene.objects[i];
        const geometry::Box2D exact = geometry::project_box2d(cfg.camera, obj.box);

        double u0 = exact.u_min + cfg.sigma_px * rng.gaussian();
        double v0 = exact.v_min + cfg.sigma_px * rng.gaussian();
        double u1 = exact.u_max + cfg.sigma_px * rng.gaussian();
        double v1 = exact.v_max + cfg.sigma_px * rng.gaussian();
        if (u0 > u1) std::swap(u0, u1);
        if (v0 > v1) std::swap(v0, v1);

        const ClassPrior& prior = priors.at(static_cast<size_t>(obj.class_index));

        ObservationSample s;
        s.scene_id = scene.id;
        s.object_id = static_cast<int>(i);
        s.class_index = obj.class_index;
        s.obs_box = {u0 / cfg.image_w, v0 / cfg.image_h, u1 / cfg.image_w,
                     v1 / cfg.image_h};
        s.cue = {obj.box.l / prior.mean_l + cfg.sigma_app * rng.gaussian(),
                 obj.box.w / prior.mean_w + cfg.sigma_app * rng.gaussian()};
        s.gt_box = {exact.u_min / cfg.image_w, exact.v_min / cfg.image_h,
                    exact.u_max / cfg.image_w, exact.v_max / cfg.image_h};
        s.gt_box3d = obj.box;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

uint64_t mix_hash(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

} // namespace

Dataset make_dataset(const SceneConfig& cfg, const std::vector<ClassPrior>& priors,
                     int n_scenes, uint64_t seed) {
    if (n_scenes < 2) throw InvalidConfig("make_dataset needs n_scenes >= 2");

    Rng rng(seed);
    std::vector<std::vector<ObservationSample>> per_scene;
    per_scene.reserve(static_cast<size_t>(n_scenes));
    for (long id = 0; id < n_scenes; ++id) {
        Scene scene = sample_scene(cfg, priors, id, rng);
        per_scene.push_back(render_observation(scene, cfg, priors, rng));
    }

    // 80/20 split by hash order over scene ids; sizes exact to +-1 scene.
    std::vector<long> ids(static_cast<size_t>(n_scenes));
    std::iota(ids.begin(), ids.end(), 0L);
    std::sort(ids.begin(), ids.end(), [&](long a, long b) {
        const uint64_t ha = mix_hash(seed, static_cast<uint64_t>(a));
        const uint64_t hb = mix_hash(seed, static_cast<uint64_t>(b));
        if (ha != hb) return ha < hb;
        return a < b;
    });
    long n_train = std::lround(0.8 * n_scenes);
    n_train = std::clamp(n_train, 1L, static_cast<long>(n_scenes) - 1L);

    Dataset ds;
    for (size_t i = 0; i < ids.size(); ++i) {
        auto& bucket = (static_cast<long>(i) < n_train) ? ds.train : ds.val;
        for (const auto& s : per_scene[static_cast<size_t>(ids[i])])
            bucket.push_back(s);
    }
    auto by_scene = [](const ObservationSample& a, const ObservationSample& b) {
        if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
        return a.object_id < b.object_id;
    };
    std::sort(ds.train.begin(), ds.train.end(), by_scene);
    std::sort(ds.val.begin(), ds.val.end(), by_scene);
    return ds;
}

AmbiguityReport ambiguity_report(const std::vector<ObservationSample>& samples) {
    if (samples.empty()) throw InvalidConfig("ambiguity_report needs samples");
    std::vector<double> h2d, inv_z, cue_l, true_l;
    h2d.reserve(samples.size());
    for (const auto& s : samples) {
        h2d.push_back(s.obs_box[3] - s.obs_box[1]);
        inv_z.push_back(1.0 / s.gt_box3d.center.z);
        cue_l.push_back(s.cue[0]);
        true_l.push_back(s.gt_box3d.l);
    }

    // Center cue and length within each class so the statistic measures how
    // much size information the cue carries, not class-scale separation.
    {
        std::map<int, std::pair<double, int>> cue_mean, len_mean;
        for (const auto& s : samples) {
            auto& cm = cue_mean[s.class_index];
            cm.first += s.cue[0];
            cm.second += 1;
            auto& lm = len_mean[s.class_index];
            lm.first += s.gt_box3d.l;
            lm.second += 1;
        }
        for (size_t i = 0; i < samples.size(); ++i) {
            const int c = samples[i].class_index;
            cue_l[i] -= cue_mean[c].first / cue_mean[c].second;
            true_l[i] -= len_mean[c].first / len_mean[c].second;
        }
    }
    AmbiguityReport rep;
    rep.n = static_cast<int>(samples.size());
    rep.r_height_inv_depth = eval::pearson(h2d, inv_z);
    try {
        rep.r_cue_length = eval::pearson(cue_l, true_l);
    } catch (const DegenerateVariance&) {
        // Zero-spread priors with a noiseless cue: nothing to correlate.
        rep.r_cue_length = std::numeric_limits<double>::quiet_NaN();
    }
    rep.ambiguous = rep.r_height_inv_depth < 0.95;
    return rep;
}

namespace {

constexpr const char* kHeaderCells[] = {
    "cop3d-dataset-v1", "scene_id", "object_id", "class",
    "obs_u0", "obs_v0", "obs_u1", "obs_v1",
    "cue_l",  "cue_w",
    "gt_u0",  "gt_v0",  "gt_u1",  "gt_v1",
    "x_c",    "y_c",    "z_c",    "w", "h", "l", "yaw"};
constexpr int kColumns = 21;  // header marker + 20 data columns

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void save_dataset(const std::string& path, const std::vector<ObservationSample>& samples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open dataset file for writing: " + path);
    for (int i = 0; i < kColumns; ++i) {
        if (i) f << '\t';
        f << kHeaderCells[i];
    }
    f << '\n';
    for (const auto& s : samples) {
        f << s.scene_id << '\t' << s.object_id << '\t' << s.class_index;
        auto put = [&](double v) { f << '\t' << format_g17(v); };
        for (double v : s.obs_box) put(v);
        for (double v : s.cue) put(v);
        for (double v : s.gt_box) put(v);
        put(s.gt_box3d.center.x);
        put(s.gt_box3d.center.y);
        put(s.gt_box3d.center.z);
        put(s.gt_box3d.w);
        put(s.gt_box3d.h);
        put(s.gt_box3d.l);
        put(s.gt_box3d.yaw);
        f << '\n';
    }
    if (!f) throw IoError("failed writing dataset file: " + path);
}

std::vector<ObservationSample> load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty dataset file: " + path);
    if (line.rfind(kHeaderCells[0], 0) != 0)
        throw IoError("unrecognized dataset header in " + path);

    std::vector<ObservationSample> out;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        if (cells.size() != kColumns - 1)
            throw FieldCountError("dataset line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(kColumns - 1) +
                                  " columns, got " + std::to_string(cells.size()));
        auto num = [&](size_t i) {
            try {
                size_t used = 0;
                const double v = std::stod(cells[i], &used);
                if (used != cells[i].size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw NumericParseError("dataset line " + std::to_string(line_no) +
                                        ", column " + std::to_string(i + 1));
            }
        };
        ObservationSample s;
        s.scene_id = static_cast<long>(num(0));
        s.object_id = static_cast<int>(num(1));
        s.class_index = static_cast<int>(num(2));
        for (int i = 0; i < 4; ++i) s.obs_box[static_cast<size_t>(i)] = num(3 + i);
        s.cue[0] = num(7);
        s.cue[1] = num(8);
        for (int i = 0; i < 4; ++i) s.gt_box[static_cast<size_t>(i)] = num(9 + i);
        s.gt_box3d.center.x = num(13);
        s.gt_box3d.center.y = num(14);
        s.gt_box3d.center.z = num(15);
        s.gt_box3d.w = num(16);
        s.gt_box3d.h = num(17);
        s.gt_box3d.l = num(18);
        s.gt_box3d.yaw = num(19);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace cop3d::synth
