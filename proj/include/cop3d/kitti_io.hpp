#pragma once

#include <array>
#include <string>
#include <vector>

#include "cop3d/geometry.hpp"
#include "cop3d/synth.hpp"

namespace cop3d::kitti {

/// One row of a KITTI object label file, devkit field order.
struct KittiLabel {
    std::string type;
    double truncated = 0.0;
    int occluded = 0;
    double alpha = 0.0;
    geometry::Box2D bbox;          // pixels
    double h = 0.0, w = 0.0, l = 0.0;
    double x = 0.0, y = 0.0, z = 0.0;  // location, bottom-center, camera frame
    double rotation_y = 0.0;
    bool has_score = false;
    double score = 0.0;
};

struct KittiCalib {
    std::array<double, 12> p2{};  // row-major 3x4
};

/// Parses one label line: type then 14 (gt) or 15 (detection) numerics.
/// Throws FieldCountError / NumericParseError (with the column index).
KittiLabel parse_label_line(const std::string& line);

/// Fixed-precision devkit formatting, single spaces, no trailing whitespace.
/// DontCare rows emit the devkit sentinels (-1 / -10 / -1000) for unknown
/// numeric fields.
std::string format_label_line(const KittiLabel& label, int precision = 2);

struct CalibResult {
    KittiCalib calib;
    geometry::CameraIntrinsics intrinsics;  // f = P2[0][0], cx = P2[0][2], cy = P2[1][2]
};

/// Extracts the P2 line from calib-file text. Throws MissingP2.
CalibResult parse_calib(const std::string& text);

/// Calib text for a synthetic pinhole camera (P2 only).
std::string format_calib(const geometry::CameraIntrinsics& cam);

/// Writes label_2/NNNNNN.txt and calib/NNNNNN.txt per scene. Yaw maps to
/// rotation_y directly, location takes the box center with y bottom-anchored,
/// and alpha = rotation_y - atan2(x, z).
void export_dataset_kitti(const std::vector<synth::ObservationSample>& samples,
                          const std::vector<synth::ClassPrior>& priors,
                          const synth::SceneConfig& cfg, const std::string& out_dir,
                          int precision = 2);

/// Reads a directory written by export_dataset_kitti back into samples with
/// zero observation noise. Unknown types and DontCare rows are skipped.
std::vector<synth::ObservationSample> import_dataset_kitti(
    const std::string& dir, const std::vector<synth::ClassPrior>& priors,
    const synth::SceneConfig& cfg);

} // namespace cop3d::kitti
