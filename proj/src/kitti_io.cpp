#include "cop3d/kitti_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace cop3d::kitti {

namespace fs = std::filesystem;

KittiLabel parse_label_line(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string tok;
    while (ss >> tok) fields.push_back(tok);
    if (fields.size() != 15 && fields.size() != 16)
        throw FieldCountError("label line has " + std::to_string(fields.size()) +
                              " fields, expected 15 or 16");

    auto num = [&](size_t i) {
        try {
            size_t used = 0;
            const double v = std::stod(fields[i], &used);
            if (used != fields[i].size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw NumericParseError("label column " + std::to_string(i + 1) +
                                    ": cannot parse '" + fields[i] + "'");
        }
    };

    KittiLabel label;
    label.type = fields[0];
    label.truncated = num(1);
    label.occluded = static_cast<int>(num(2));
    label.alpha = num(3);
    label.bbox = {num(4), num(5), num(6), num(7)};
    label.h = num(8);
    label.w = num(9);
    label.l = num(10);
    label.x = num(11);
    label.y = num(12);
    label.z = num(13);
    label.rotation_y = num(14);
    if (fields.size() == 16) {
        label.has_score = true;
        label.score = num(15);
    }
    return label;
}

std::string format_label_line(const KittiLabel& label, int precision) {
    const bool dont_care = label.type == "DontCare";
    if (!dont_care && !(label.h > 0.0 && label.w > 0.0 && label.l > 0.0))
        throw InvalidConfig("non-DontCare label needs positive dimensions");

    char buf[64];
    std::string out = label.type;
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), " %.*f", precision, v);
        out += buf;
    };
    auto put_int = [&](int v) {
        std::snprintf(buf, sizeof(buf), " %d", v);
        out += buf;
    };

    put(dont_care ? -1.0 : label.truncated);
    put_int(dont_care ? -1 : label.occluded);
    put(dont_care ? -10.0 : label.alpha);
    put(label.bbox.u_min);
    put(label.bbox.v_min);
    put(label.bbox.u_max);
    put(label.bbox.v_max);
    if (dont_care) {
        put(-1.0); put(-1.0); put(-1.0);
        put(-1000.0); put(-1000.0); put(-1000.0);
        put(-10.0);
    } else {
        put(label.h); put(label.w); put(label.l);
        put(label.x); put(label.y); put(label.z);
        put(label.rotation_y);
    }
    if (label.has_score) put(label.score);
    return out;
}

CalibResult parse_calib(const std::string& text) {
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.rfind("P2:", 0) != 0) continue;
        std::istringstream ls(line.substr(3));
        CalibResult result;
        for (int i = 0; i < 12; ++i) {
            if (!(ls >> result.calib.p2[static_cast<size_t>(i)]))
                throw NumericParseError("P2 line needs 12 numbers (failed at " +
                                        std::to_string(i + 1) + ")");
        }
        result.intrinsics.f = result.calib.p2[0];
        result.intrinsics.cx = result.calib.p2[2];
        result.intrinsics.cy = result.calib.p2[6];
        if (!(result.calib.p2[0] > 0.0) || !(result.calib.p2[5] > 0.0))
            throw NumericParseError("P2 focal lengths must be positive");
        return result;
    }
    throw MissingP2("calib text has no P2 line");
}

std::string format_calib(const geometry::CameraIntrinsics& cam) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "P2: %.12g 0 %.12g 0 0 %.12g %.12g 0 0 0 1 0\n", cam.f, cam.cx,
                  cam.f, cam.cy);
    return buf;
}

namespace {

std::string scene_file_name(long scene_id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06ld.txt", scene_id);
    return buf;
}

} // namespace

void export_dataset_kitti(const std::vector<synth::ObservationSample>& samples,
                          const std::vector<synth::ClassPrior>& priors,
                          const synth::SceneConfig& cfg, const std::string& out_dir,
                          int precision) {
    std::map<long, std::vector<const synth::ObservationSample*>> by_scene;
    for (const auto& s : samples) by_scene[s.scene_id].push_back(&s);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "label_2", ec);
    fs::create_directories(fs::path(out_dir) / "calib", ec);
    if (ec) throw IoError("cannot create KITTI export directories in " + out_dir);

    const std::string calib_text = format_calib(cfg.camera);
    for (const auto& [scene_id, objs] : by_scene) {
        const std::string name = scene_file_name(scene_id);
        std::ofstream lf(fs::path(out_dir) / "label_2" / name, std::ios::binary);
        if (!lf) throw IoError("cannot write label file for scene " +
                               std::to_string(scene_id));
        for (const synth::ObservationSample* s : objs) {
            KittiLabel label;
            label.type = priors.at(static_cast<size_t>(s->class_index)).name;
            label.truncated = 0.0;
            label.occluded = 0;
            const auto& b = s->gt_box3d;
            label.rotation_y = b.yaw;
            label.alpha =
                geometry::wrap_angle(b.yaw - std::atan2(b.center.x, b.center.z));
            label.bbox = {s->gt_box[0] * cfg.image_w, s->gt_box[1] * cfg.image_h,
                          s->gt_box[2] * cfg.image_w, s->gt_box[3] * cfg.image_h};
            label.h = b.h;
            label.w = b.w;
            label.l = b.l;
            label.x = b.center.x;
            label.y = b.center.y;   // bottom-anchored location
            label.z = b.center.z;
            lf << format_label_line(label, precision) << '\n';
        }
        std::ofstream cf(fs::path(out_dir) / "calib" / name, std::ios::binary);
        if (!cf) throw IoError("cannot write calib file for scene " +
                               std::to_string(scene_id));
        cf << calib_text;
    }
}

std::vector<synth::ObservationSample> import_dataset_kitti(
    const std::string& dir, const std::vector<synth::ClassPrior>& priors,
    const synth::SceneConfig& cfg) {
    const fs::path label_dir = fs::path(dir) / "label_2";
    if (!fs::exists(label_dir))
        throw IoError("no label_2 directory under " + dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(label_dir))
        if (entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::vector<synth::ObservationSample> out;
    for (const fs::path& file : files) {
        const long scene_id = std::stol(file.stem().string());

        const fs::path calib_path = fs::path(dir) / "calib" / file.filename();
        geometry::CameraIntrinsics cam = cfg.camera;
        if (fs::exists(calib_path)) {
            std::ifstream cf(calib_path, std::ios::binary);
            std::stringstream buffer;
            buffer << cf.rdbuf();
            cam = parse_calib(buffer.str()).intrinsics;
        }

        std::ifstream lf(file, std::ios::binary);
        if (!lf) throw IoError("cannot read " + file.string());
        std::string line;
        int object_id = 0;
        while (std::getline(lf, line)) {
            if (line.empty()) continue;
            const KittiLabel label = parse_label_line(line);
            if (label.type == "DontCare") continue;
            int class_index = -1;
            for (size_t c = 0; c < priors.size(); ++c)
                if (priors[c].name == label.type) class_index = static_cast<int>(c);
            if (class_index < 0) continue;  // unknown type

            synth::ObservationSample s;
            s.scene_id = scene_id;
            s.object_id = object_id++;
            s.class_index = class_index;
            s.gt_box3d.center = {label.x, label.y, label.z};
            s.gt_box3d.w = label.w;
            s.gt_box3d.h = label.h;
            s.gt_box3d.l = label.l;
            s.gt_box3d.yaw = geometry::wrap_angle(label.rotation_y);
            const geometry::Box2D proj = geometry::project_box2d(cam, s.gt_box3d);
            s.gt_box = {proj.u_min / cfg.image_w, proj.v_min / cfg.image_h,
                        proj.u_max / cfg.image_w, proj.v_max / cfg.image_h};
            s.obs_box = s.gt_box;  // zero observation noise on import
            const auto& prior = priors[static_cast<size_t>(class_index)];
            s.cue = {s.gt_box3d.l / prior.mean_l, s.gt_box3d.w / prior.mean_w};
            out.push_back(std::move(s));
        }
    }
    return out;
}

} // namespace cop3d::kitti
