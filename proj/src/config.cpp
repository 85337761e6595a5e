#include "cop3d/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cop3d::config {

using trainer::ExperimentConfig;

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

struct Entry {
    std::string section, key, value;
};

std::vector<Entry> tokenize(const std::string& text) {
    std::vector<Entry> out;
    std::istringstream ss(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        if (section.empty())
            throw ConfigError("line " + std::to_string(line_no) +
                              ": key outside any [section]");
        out.push_back({section, trim(t.substr(0, eq)), trim(t.substr(eq + 1))});
    }
    return out;
}

double parse_double(const Entry& e) {
    try {
        size_t used = 0;
        const double v = std::stod(e.value, &used);
        if (used != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + e.section + "." + e.key +
                          ": '" + e.value + "'");
    }
}

int parse_int(const Entry& e) {
    const double v = parse_double(e);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw ConfigError(e.section + "." + e.key + " must be an integer");
    return i;
}

uint64_t parse_u64(const Entry& e) {
    try {
        size_t used = 0;
        const uint64_t v = std::stoull(e.value, &used);
        if (used != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned value for " + e.section + "." + e.key);
    }
}

bool parse_bool(const Entry& e) {
    const std::string v = lower(e.value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(e.section + "." + e.key + " must be a boolean");
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::vector<double> parse_doubles(const Entry& e, size_t expect = 0) {
    std::vector<double> out;
    for (const std::string& tok : split_ws(e.value)) {
        Entry sub = e;
        sub.value = tok;
        out.push_back(parse_double(sub));
    }
    if (expect != 0 && out.size() != expect)
        throw ConfigError(e.section + "." + e.key + " needs " +
                          std::to_string(expect) + " values");
    return out;
}

std::vector<int> parse_ints(const Entry& e) {
    std::vector<int> out;
    for (const std::string& tok : split_ws(e.value)) {
        Entry sub = e;
        sub.value = tok;
        out.push_back(parse_int(sub));
    }
    return out;
}

std::vector<uint64_t> parse_u64s(const Entry& e) {
    std::vector<uint64_t> out;
    // Accept both space- and comma-separated seed lists.
    std::string v = e.value;
    std::replace(v.begin(), v.end(), ',', ' ');
    for (const std::string& tok : split_ws(v)) {
        Entry sub = e;
        sub.value = tok;
        out.push_back(parse_u64(sub));
    }
    return out;
}

void apply_entry(ExperimentConfig& cfg, const Entry& e) {
    const std::string& s = e.section;
    const std::string& k = e.key;

    if (s == "dataset") {
        if (k == "n_scenes") cfg.n_scenes = parse_int(e);
        else if (k == "seed") cfg.dataset_seed = parse_u64(e);
        else if (k == "objects_min") cfg.scene.objects_min = parse_int(e);
        else if (k == "objects_max") cfg.scene.objects_max = parse_int(e);
        else if (k == "x_range") {
            const auto v = parse_doubles(e, 2);
            cfg.scene.x_min = v[0];
            cfg.scene.x_max = v[1];
        } else if (k == "y_range") {
            const auto v = parse_doubles(e, 2);
            cfg.scene.y_min = v[0];
            cfg.scene.y_max = v[1];
        } else if (k == "sigma_px") cfg.scene.sigma_px = parse_double(e);
        else if (k == "sigma_app") cfg.scene.sigma_app = parse_double(e);
        else if (k == "image_size") {
            const auto v = parse_doubles(e, 2);
            cfg.scene.image_w = v[0];
            cfg.scene.image_h = v[1];
        } else if (k == "focal") cfg.scene.camera.f = parse_double(e);
        else if (k == "principal_point") {
            const auto v = parse_doubles(e, 2);
            cfg.scene.camera.cx = v[0];
            cfg.scene.camera.cy = v[1];
        } else throw ConfigError("unknown key dataset." + k);
        return;
    }

    if (s == "priors") {
        if (k == "classes") {
            const auto names = split_ws(e.value);
            if (names.size() != cfg.priors.size())
                throw ConfigError("priors.classes must list " +
                                  std::to_string(cfg.priors.size()) + " names");
            for (size_t i = 0; i < names.size(); ++i) cfg.priors[i].name = names[i];
            return;
        }
        for (auto& prior : cfg.priors) {
            const std::string base = lower(prior.name);
            if (k == base + "_mean_whl") {
                const auto v = parse_doubles(e, 3);
                prior.mean_w = v[0];
                prior.mean_h = v[1];
                prior.mean_l = v[2];
                return;
            }
            if (k == base + "_std_whl") {
                const auto v = parse_doubles(e, 3);
                prior.std_w = v[0];
                prior.std_h = v[1];
                prior.std_l = v[2];
                return;
            }
            if (k == base + "_depth_range") {
                const auto v = parse_doubles(e, 2);
                prior.z_min = v[0];
                prior.z_max = v[1];
                return;
            }
        }
        throw ConfigError("unknown key priors." + k);
    }

    if (s == "chain") {
        if (k == "variant") cfg.chain.variant = cop::variant_from_string(e.value);
        else if (k == "order") cfg.chain.attributes = cop::parse_order(e.value);
        else if (k == "residual") cfg.chain.residual = parse_bool(e);
        else if (k == "chains") cfg.chain.chain_count = parse_int(e);
        else if (k == "query_dim") cfg.chain.query_dim = parse_int(e);
        else if (k == "hidden_dim") cfg.chain.hidden_dim = parse_int(e);
        else if (k == "dropout") cfg.chain.dropout = parse_double(e);
        else throw ConfigError("unknown key chain." + k);
        return;
    }

    if (s == "loss") {
        if (k == "class_loss_weight") cfg.loss_w.cls = parse_double(e);
        else if (k == "bbox_loss_weight") cfg.loss_w.bbox = parse_double(e);
        else if (k == "giou_loss_weight") cfg.loss_w.giou = parse_double(e);
        else if (k == "center3d_loss_weight") cfg.loss_w.center3d = parse_double(e);
        else if (k == "dim_loss_weight") cfg.loss_w.dims = parse_double(e);
        else if (k == "angle_loss_weight") cfg.loss_w.angle = parse_double(e);
        else if (k == "depth_loss_weight") cfg.loss_w.depth = parse_double(e);
        else if (k == "focal_alpha") cfg.loss_w.focal_alpha = parse_double(e);
        else if (k == "focal_gamma") cfg.loss_w.focal_gamma = parse_double(e);
        else if (k == "smooth_l1_beta") cfg.loss_w.smooth_l1_beta = parse_double(e);
        else throw ConfigError("unknown key loss." + k);
        return;
    }

    if (s == "cost") {
        if (k == "class_cost_weight") cfg.cost_w.cls = parse_double(e);
        else if (k == "bbox_cost_weight") cfg.cost_w.bbox_l1 = parse_double(e);
        else if (k == "giou_cost_weight") cfg.cost_w.giou = parse_double(e);
        else if (k == "center3d_cost_weight") cfg.cost_w.center3d = parse_double(e);
        else throw ConfigError("unknown key cost." + k);
        return;
    }

    if (s == "trainer") {
        if (k == "epochs") cfg.train.epochs = parse_int(e);
        else if (k == "batch_size") cfg.train.batch_size = parse_int(e);
        else if (k == "lr") cfg.train.lr = parse_double(e);
        else if (k == "weight_decay") cfg.train.weight_decay = parse_double(e);
        else if (k == "lr_decay_rate") cfg.train.lr_decay_rate = parse_double(e);
        else if (k == "lr_decay_epochs") cfg.train.lr_decay_epochs = parse_ints(e);
        else if (k == "seeds") cfg.train.seeds = parse_u64s(e);
        else if (k == "mode") cfg.train.mode = e.value;
        else if (k == "queries") cfg.train.n_queries = parse_int(e);
        else if (k == "htl_boundaries") cfg.train.htl_boundaries = parse_ints(e);
        else if (k == "depth_scale") cfg.train.depth_scale = parse_double(e);
        else throw ConfigError("unknown key trainer." + k);
        return;
    }

    if (s == "eval") {
        if (k == "iou_thresholds") cfg.iou_thresholds = parse_doubles(e);
        else if (k == "distance_bins") cfg.distance_edges = parse_doubles(e);
        else throw ConfigError("unknown key eval." + k);
        return;
    }

    throw ConfigError("unknown section [" + s + "]");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

ExperimentConfig parse(const std::string& text) {
    ExperimentConfig cfg;
    // `priors.classes` renames classes and changes the expected per-class key
    // names, so apply it before everything else.
    const auto entries = tokenize(text);
    for (const Entry& e : entries)
        if (e.section == "priors" && e.key == "classes") apply_entry(cfg, e);
    for (const Entry& e : entries) {
        if (e.section == "priors" && e.key == "classes") continue;
        apply_entry(cfg, e);
    }
    return cfg;
}

ExperimentConfig load(const std::string& path,
                      const std::vector<std::string>& overrides) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << f.rdbuf();
    ExperimentConfig cfg = parse(buffer.str());
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        const size_t dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override must look like section.key=value: " + ov);
        Entry e{trim(ov.substr(0, dot)), trim(ov.substr(dot + 1, eq - dot - 1)),
                trim(ov.substr(eq + 1))};
        apply_entry(cfg, e);
    }
    return cfg;
}

std::string serialize(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[dataset]\n";
    out << "n_scenes = " << cfg.n_scenes << '\n';
    out << "seed = " << cfg.dataset_seed << '\n';
    out << "objects_min = " << cfg.scene.objects_min << '\n';
    out << "objects_max = " << cfg.scene.objects_max << '\n';
    out << "x_range = " << fmt(cfg.scene.x_min) << ' ' << fmt(cfg.scene.x_max) << '\n';
    out << "y_range = " << fmt(cfg.scene.y_min) << ' ' << fmt(cfg.scene.y_max) << '\n';
    out << "sigma_px = " << fmt(cfg.scene.sigma_px) << '\n';
    out << "sigma_app = " << fmt(cfg.scene.sigma_app) << '\n';
    out << "image_size = " << fmt(cfg.scene.image_w) << ' ' << fmt(cfg.scene.image_h)
        << '\n';
    out << "focal = " << fmt(cfg.scene.camera.f) << '\n';
    out << "principal_point = " << fmt(cfg.scene.camera.cx) << ' '
        << fmt(cfg.scene.camera.cy) << '\n';

    out << "\n[priors]\n";
    out << "classes =";
    for (const auto& p : cfg.priors) out << ' ' << p.name;
    out << '\n';
    for (const auto& p : cfg.priors) {
        const std::string base = lower(p.name);
        out << base << "_mean_whl = " << fmt(p.mean_w) << ' ' << fmt(p.mean_h) << ' '
            << fmt(p.mean_l) << '\n';
        out << base << "_std_whl = " << fmt(p.std_w) << ' ' << fmt(p.std_h) << ' '
            << fmt(p.std_l) << '\n';
        out << base << "_depth_range = " << fmt(p.z_min) << ' ' << fmt(p.z_max) << '\n';
    }

    out << "\n[chain]\n";
    out << "variant = " << cop::variant_name(cfg.chain.variant) << '\n';
    out << "order = " << cop::order_to_string(cfg.chain.attributes) << '\n';
    out << "residual = " << (cfg.chain.residual ? "true" : "false") << '\n';
    out << "chains = " << cfg.chain.chain_count << '\n';
    out << "query_dim = " << cfg.chain.query_dim << '\n';
    out << "hidden_dim = " << cfg.chain.hidden_dim << '\n';
    out << "dropout = " << fmt(cfg.chain.dropout) << '\n';

    out << "\n[loss]\n";
    out << "class_loss_weight = " << fmt(cfg.loss_w.cls) << '\n';
    out << "bbox_loss_weight = " << fmt(cfg.loss_w.bbox) << '\n';
    out << "giou_loss_weight = " << fmt(cfg.loss_w.giou) << '\n';
    out << "center3d_loss_weight = " << fmt(cfg.loss_w.center3d) << '\n';
    out << "dim_loss_weight = " << fmt(cfg.loss_w.dims) << '\n';
    out << "angle_loss_weight = " << fmt(cfg.loss_w.angle) << '\n';
    out << "depth_loss_weight = " << fmt(cfg.loss_w.depth) << '\n';
    out << "focal_alpha = " << fmt(cfg.loss_w.focal_alpha) << '\n';
    out << "focal_gamma = " << fmt(cfg.loss_w.focal_gamma) << '\n';
    out << "smooth_l1_beta = " << fmt(cfg.loss_w.smooth_l1_beta) << '\n';

    out << "\n[cost]\n";
    out << "class_cost_weight = " << fmt(cfg.cost_w.cls) << '\n';
    out << "bbox_cost_weight = " << fmt(cfg.cost_w.bbox_l1) << '\n';
    out << "giou_cost_weight = " << fmt(cfg.cost_w.giou) << '\n';
    out << "center3d_cost_weight = " << fmt(cfg.cost_w.center3d) << '\n';

    out << "\n[trainer]\n";
    out << "epochs = " << cfg.train.epochs << '\n';
    out << "batch_size = " << cfg.train.batch_size << '\n';
    out << "lr = " << fmt(cfg.train.lr) << '\n';
    out << "weight_decay = " << fmt(cfg.train.weight_decay) << '\n';
    out << "lr_decay_rate = " << fmt(cfg.train.lr_decay_rate) << '\n';
    out << "lr_decay_epochs =";
    for (int v : cfg.train.lr_decay_epochs) out << ' ' << v;
    out << '\n';
    out << "seeds =";
    for (uint64_t v : cfg.train.seeds) out << ' ' << v;
    out << '\n';
    out << "mode = " << cfg.train.mode << '\n';
    out << "queries = " << cfg.train.n_queries << '\n';
    out << "htl_boundaries =";
    for (int v : cfg.train.htl_boundaries) out << ' ' << v;
    out << '\n';
    out << "depth_scale = " << fmt(cfg.train.depth_scale) << '\n';

    out << "\n[eval]\n";
    out << "iou_thresholds =";
    for (double v : cfg.iou_thresholds) out << ' ' << fmt(v);
    out << '\n';
    out << "distance_bins =";
    for (double v : cfg.distance_edges) out << ' ' << fmt(v);
    out << '\n';
    return out.str();
}

} // namespace cop3d::config
