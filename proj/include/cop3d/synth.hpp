#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cop3d/geometry.hpp"
#include "cop3d/micronet.hpp"

namespace cop3d::synth {

/// Per-class size prior and depth range. Wide, mutually overlapping size
/// spreads are what make 2D box size under-determine depth.
struct ClassPrior {
    std::string name;
    double mean_w = 1.0, mean_h = 1.0, mean_l = 1.0;
    double std_w = 0.0, std_h = 0.0, std_l = 0.0;
    double z_min = 8.0, z_max = 70.0;

    void validate() const;
};

/// Car / Pedestrian / Cyclist with deliberately wide size spreads.
std::vector<ClassPrior> default_priors();

struct SceneConfig {
    int objects_min = 1;
    int objects_max = 5;
    double x_min = -18.0, x_max = 18.0;
    double y_min = 0.5, y_max = 1.0;
    double sigma_px = 1.0;    // observation noise on 2D box corners, pixels
    double sigma_app = 0.05;  // appearance-cue noise
    geometry::CameraIntrinsics camera{700.0, 621.0, 187.5};
    double image_w = 1242.0, image_h = 375.0;

    void validate() const;
};

struct SceneObject {
    geometry::Box3D box;
    int class_index = 0;
};

struct Scene {
    long id = 0;
    std::vector<SceneObject> objects;
};

/// One per-object training/eval record. Inputs are the noisy normalized 2D
/// box, the class one-hot and the appearance cue (length/width ratios against
/// the class prior); targets carry the exact projection and the full 3D box.
struct ObservationSample {
    long scene_id = 0;
    int object_id = 0;
    int class_index = 0;
    std::array<double, 4> obs_box{};  // normalized, noisy
    std::array<double, 2> cue{};      // (l / prior_l, w / prior_w) + noise
    std::array<double, 4> gt_box{};   // normalized, exact projection
    geometry::Box3D gt_box3d;

    /// Input feature vector: obs_box (4) + one-hot class (n_classes) + cue (2).
    std::vector<double> features(int n_classes) const;
};

/// Draws one scene; objects are regenerated (up to 1000 attempts each) until
/// their projected 2D boxes lie fully inside the image.
Scene sample_scene(const SceneConfig& cfg, const std::vector<ClassPrior>& priors,
                   long scene_id, micronet::Rng& rng);

/// Projects every object and applies pixel / appearance noise.
std::vector<ObservationSample> render_observation(const Scene& scene,
                                                  const SceneConfig& cfg,
                                                  const std::vector<ClassPrior>& priors,
                                                  micronet::Rng& rng);

struct Dataset {
    std::vector<ObservationSample> train, val;
};

/// Deterministic dataset: scenes 0..n_scenes-1 generated from a single
/// seeded stream, then split 80/20 by a scene-id hash ordering.
Dataset make_dataset(const SceneConfig& cfg, const std::vector<ClassPrior>& priors,
                     int n_scenes, uint64_t seed);

struct AmbiguityReport {
    double r_height_inv_depth = 0.0;  // observed 2D height vs 1/depth
    // Length cue vs true length, centered within each class; NaN when the
    // cue is constant (zero-spread priors with a noiseless cue).
    double r_cue_length = 0.0;
    bool ambiguous = false;           // r_height_inv_depth < 0.95
    int n = 0;
};

/// Correlation diagnostics; throws DegenerateVariance when a series is
/// constant (e.g. every object at the same depth).
AmbiguityReport ambiguity_report(const std::vector<ObservationSample>& samples);

/// Line-oriented UTF-8, tab separated, one sample per line; the header line
/// carries the schema version and column names.
void save_dataset(const std::string& path, const std::vector<ObservationSample>& samples);
std::vector<ObservationSample> load_dataset(const std::string& path);

} // namespace cop3d::synth
