#pragma once

// Run configuration: flat key = value text with [section] headers. Every
// field except the seed has a documented default; unknown keys are
// rejected. The parsed config echoes back to canonical text so a run
// directory carries its full provenance in one copyable file.

#include <map>
#include <sstream>
#include <string>

#include "rscn/synthbench.hpp"
#include "rscn/trainer.hpp"

namespace rscn {

struct RunConfig {
    uint64_t seed = 0;
    SceneSpec data;
    SplitSizes sizes{64, 64, 32};
    TrainConfig train;

    void validate() const {
        data.validate();
        train.validate();
        if (sizes.source_train < 1 || sizes.target_train < 1 || sizes.target_val < 1)
            throw usage_error("config: split sizes must be >= 1");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw usage_error("config: bad number '" + v + "' for " + key);
    }
}

inline uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw usage_error("config: bad integer '" + v + "' for " + key);
    }
}

// one value broadcast over channels, or exactly one value per channel
inline std::vector<double> parse_channel_vector(const std::string& v, const std::string& key,
                                                size_t channels) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(parse_double(trim(part), key));
    if (out.size() == 1) out.assign(channels, out[0]);
    if (out.size() != channels)
        throw usage_error("config: " + key + " needs 1 or " + std::to_string(channels) +
                          " comma-separated values, got " + std::to_string(out.size()));
    return out;
}

inline std::string join_channel_vector(const std::vector<double>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << ordered_json(v[i]).dump();
    }
    return os.str();
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    bool seed_seen = false;
    std::string section;
    // channel-shaped values are resolved after the scalar pass so they can
    // follow or precede the channel count
    std::map<std::string, std::string> deferred;

    std::istringstream in(text);
    std::string raw;
    size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw usage_error("config line " + std::to_string(line_no) +
                                  ": malformed section header '" + raw + "'");
            section = line.substr(1, line.size() - 2);
            if (section != "data" && section != "train" && section != "weights" &&
                section != "eval")
                throw usage_error("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw usage_error("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw usage_error("config line " + std::to_string(line_no) + ": empty key or value");

        auto num = [&] { return detail::parse_double(value, section + "." + key); };
        auto integer = [&] { return detail::parse_u64(value, section + "." + key); };

        if (section.empty()) {
            if (key == "seed") {
                cfg.seed = integer();
                seed_seen = true;
            } else {
                throw usage_error("config: unknown top-level key '" + key + "'");
            }
        } else if (section == "data") {
            auto& d = cfg.data;
            if (key == "height") d.height = static_cast<uint16_t>(integer());
            else if (key == "width") d.width = static_cast<uint16_t>(integer());
            else if (key == "channels") d.channels = static_cast<uint16_t>(integer());
            else if (key == "classes") d.classes = static_cast<uint16_t>(integer());
            else if (key == "objects_min") d.objects_min = static_cast<uint16_t>(integer());
            else if (key == "objects_max") d.objects_max = static_cast<uint16_t>(integer());
            else if (key == "object_size_min") d.object_size_min = static_cast<uint16_t>(integer());
            else if (key == "object_size_max") d.object_size_max = static_cast<uint16_t>(integer());
            else if (key == "color_jitter") d.color_jitter = num();
            else if (key == "source_bg_noise") d.source_texture.bg_noise = num();
            else if (key == "target_bg_noise") d.target_texture.bg_noise = num();
            else if (key == "source_bg_mean_jitter") d.source_texture.bg_mean_jitter = num();
            else if (key == "target_bg_mean_jitter") d.target_texture.bg_mean_jitter = num();
            else if (key == "source_bg_smooth_passes")
                d.source_texture.bg_smooth_passes = static_cast<uint16_t>(integer());
            else if (key == "target_bg_smooth_passes")
                d.target_texture.bg_smooth_passes = static_cast<uint16_t>(integer());
            else if (key == "shift_noise") d.shift_noise = num();
            else if (key == "n_source") cfg.sizes.source_train = static_cast<uint32_t>(integer());
            else if (key == "n_target") cfg.sizes.target_train = static_cast<uint32_t>(integer());
            else if (key == "n_val") cfg.sizes.target_val = static_cast<uint32_t>(integer());
            else if (key == "source_bg_mean" || key == "target_bg_mean" ||
                     key == "shift_scale" || key == "shift_offset")
                deferred[key] = value;
            else
                throw usage_error("config: unknown key '" + key + "' in section [data]");
        } else if (section == "train") {
            auto& t = cfg.train;
            if (key == "lr") t.lr = num();
            else if (key == "momentum") t.momentum = num();
            else if (key == "batch_source") t.batch_source = static_cast<uint32_t>(integer());
            else if (key == "batch_target") t.batch_target = static_cast<uint32_t>(integer());
            else if (key == "iterations") t.iterations = static_cast<uint32_t>(integer());
            else if (key == "eval_interval") t.eval_interval = static_cast<uint32_t>(integer());
            else if (key == "n_bg") t.n_bg = static_cast<int>(integer());
            else if (key == "jitter") t.jitter = static_cast<int>(integer());
            else if (key == "disc_hidden") t.disc_hidden = static_cast<uint16_t>(integer());
            else if (key == "patch") t.patch = static_cast<uint16_t>(integer());
            else if (key == "feat_dim") t.feat_dim = static_cast<uint16_t>(integer());
            else if (key == "hidden") t.hidden = static_cast<uint16_t>(integer());
            else
                throw usage_error("config: unknown key '" + key + "' in section [train]");
        } else if (section == "weights") {
            auto& w = cfg.train.weights;
            if (key == "det") w.det = num();
            else if (key == "bpa") w.bpa = num();
            else if (key == "rsh") w.rsh = num();
            else if (key == "ssp") w.ssp = num();
            else if (key == "grl_lambda") w.grl_lambda = num();
            else
                throw usage_error("config: unknown key '" + key + "' in section [weights]");
        } else {  // eval
            if (key == "score_thresh") cfg.train.score_thresh = num();
            else if (key == "nms_iou") cfg.train.nms_iou = num();
            else
                throw usage_error("config: unknown key '" + key + "' in section [eval]");
        }
    }

    if (!seed_seen) throw usage_error("seed required");
    cfg.train.seed = cfg.seed;

    const size_t c = cfg.data.channels;
    auto resolve = [&](const char* key, std::vector<double>& field,
                       std::vector<double> default3) {
        if (auto it = deferred.find(key); it != deferred.end()) {
            field = detail::parse_channel_vector(it->second, key, c);
        } else if (c == 3) {
            field = std::move(default3);
        } else {
            field.resize(c);
            for (size_t i = 0; i < c; ++i) field[i] = default3[i % 3];
        }
    };
    resolve("source_bg_mean", cfg.data.source_texture.bg_mean, {0.40, 0.44, 0.40});
    resolve("target_bg_mean", cfg.data.target_texture.bg_mean, {0.40, 0.44, 0.40});
    resolve("shift_scale", cfg.data.shift_scale, {0.5, 0.5, 0.5});
    resolve("shift_offset", cfg.data.shift_offset, {0.3, 0.3, 0.3});

    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw usage_error("config file not found: " + path.string());
    return parse_run_config(read_file(path));
}

// Canonical text with every field materialized; parses back to the same
// configuration.
inline std::string echo_config(const RunConfig& cfg) {
    std::ostringstream os;
    auto n = [](double v) { return ordered_json(v).dump(); };
    os << "seed = " << cfg.seed << "\n\n";
    os << "[data]\n";
    os << "height = " << cfg.data.height << "\n";
    os << "width = " << cfg.data.width << "\n";
    os << "channels = " << cfg.data.channels << "\n";
    os << "classes = " << cfg.data.classes << "\n";
    os << "objects_min = " << cfg.data.objects_min << "\n";
    os << "objects_max = " << cfg.data.objects_max << "\n";
    os << "object_size_min = " << cfg.data.object_size_min << "\n";
    os << "object_size_max = " << cfg.data.object_size_max << "\n";
    os << "color_jitter = " << n(cfg.data.color_jitter) << "\n";
    os << "source_bg_mean = " << detail::join_channel_vector(cfg.data.source_texture.bg_mean)
       << "\n";
    os << "source_bg_mean_jitter = " << n(cfg.data.source_texture.bg_mean_jitter) << "\n";
    os << "source_bg_noise = " << n(cfg.data.source_texture.bg_noise) << "\n";
    os << "source_bg_smooth_passes = " << cfg.data.source_texture.bg_smooth_passes << "\n";
    os << "target_bg_mean = " << detail::join_channel_vector(cfg.data.target_texture.bg_mean)
       << "\n";
    os << "target_bg_mean_jitter = " << n(cfg.data.target_texture.bg_mean_jitter) << "\n";
    os << "target_bg_noise = " << n(cfg.data.target_texture.bg_noise) << "\n";
    os << "target_bg_smooth_passes = " << cfg.data.target_texture.bg_smooth_passes << "\n";
    os << "shift_scale = " << detail::join_channel_vector(cfg.data.shift_scale) << "\n";
    os << "shift_offset = " << detail::join_channel_vector(cfg.data.shift_offset) << "\n";
    os << "shift_noise = " << n(cfg.data.shift_noise) << "\n";
    os << "n_source = " << cfg.sizes.source_train << "\n";
    os << "n_target = " << cfg.sizes.target_train << "\n";
    os << "n_val = " << cfg.sizes.target_val << "\n\n";
    os << "[train]\n";
    os << "lr = " << n(cfg.train.lr) << "\n";
    os << "momentum = " << n(cfg.train.momentum) << "\n";
    os << "batch_source = " << cfg.train.batch_source << "\n";
    os << "batch_target = " << cfg.train.batch_target << "\n";
    os << "iterations = " << cfg.train.iterations << "\n";
    os << "eval_interval = " << cfg.train.eval_interval << "\n";
    os << "n_bg = " << cfg.train.n_bg << "\n";
    os << "jitter = " << cfg.train.jitter << "\n";
    os << "disc_hidden = " << cfg.train.disc_hidden << "\n";
    os << "patch = " << cfg.train.patch << "\n";
    os << "feat_dim = " << cfg.train.feat_dim << "\n";
    os << "hidden = " << cfg.train.hidden << "\n\n";
    os << "[weights]\n";
    os << "det = " << n(cfg.train.weights.det) << "\n";
    os << "bpa = " << n(cfg.train.weights.bpa) << "\n";
    os << "rsh = " << n(cfg.train.weights.rsh) << "\n";
    os << "ssp = " << n(cfg.train.weights.ssp) << "\n";
    os << "grl_lambda = " << n(cfg.train.weights.grl_lambda) << "\n\n";
    os << "[eval]\n";
    os << "score_thresh = " << n(cfg.train.score_thresh) << "\n";
    os << "nms_iou = " << n(cfg.train.nms_iou) << "\n";
    return os.str();
}

}  // namespace rscn
