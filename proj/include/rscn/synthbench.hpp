#pragma once

// Procedural benchmark generator. Source scenes carry class-colored
// rectangles over smoothed noise; target scenes are the same rendering
// procedure passed through a per-channel affine style shift plus additive
// noise. Target training scenes contain no objects at all. Each scene is
// rendered from its own random stream keyed on (seed, "data", scene id),
// so generation order never changes content.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rscn/rng.hpp"
#include "rscn/scene.hpp"

namespace rscn {

using ordered_json = nlohmann::ordered_json;

struct DomainTexture {
    std::vector<double> bg_mean;  // per channel
    double bg_mean_jitter = 0.2;  // per-scene uniform offset of the base color
    double bg_noise = 0.08;
    uint16_t bg_smooth_passes = 1;
};

struct SceneSpec {
    uint16_t height = 32, width = 32, channels = 3;
    uint16_t classes = 3;  // K
    uint16_t objects_min = 1, objects_max = 3;
    uint16_t object_size_min = 8, object_size_max = 14;
    double color_jitter = 0.04;
    DomainTexture source_texture;
    DomainTexture target_texture;
    std::vector<double> shift_scale;   // a, per channel
    std::vector<double> shift_offset;  // b, per channel
    double shift_noise = 0.05;         // sigma

    SceneSpec() {
        source_texture.bg_mean = {0.40, 0.44, 0.40};
        target_texture = source_texture;
        shift_scale = {0.5, 0.5, 0.5};
        shift_offset = {0.3, 0.3, 0.3};
    }

    void validate() const {
        if (height < 8 || width < 8)
            throw usage_error("scene spec: grid must be at least 8x8, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        if (channels < 1) throw usage_error("scene spec: channels must be >= 1");
        if (classes < 1) throw usage_error("scene spec: class count must be >= 1");
        if (objects_min < 1 || objects_min > objects_max)
            throw usage_error("scene spec: bad object count range");
        if (object_size_min < 1 || object_size_min > object_size_max)
            throw usage_error("scene spec: bad object size range");
        if (object_size_max > std::min(height, width))
            throw usage_error("scene spec: objects of size " + std::to_string(object_size_max) +
                              " cannot fit a " + std::to_string(height) + "x" +
                              std::to_string(width) + " grid");
        if (color_jitter < 0) throw usage_error("scene spec: color_jitter must be >= 0");
        for (const auto* tex : {&source_texture, &target_texture}) {
            if (tex->bg_mean.size() != channels)
                throw usage_error("scene spec: bg_mean needs one entry per channel");
            if (tex->bg_noise < 0) throw usage_error("scene spec: bg_noise must be >= 0");
            if (tex->bg_mean_jitter < 0)
                throw usage_error("scene spec: bg_mean_jitter must be >= 0");
        }
        if (shift_scale.size() != channels || shift_offset.size() != channels)
            throw usage_error("scene spec: shift needs one scale and offset per channel");
        if (shift_noise < 0) throw usage_error("scene spec: shift_noise must be >= 0");
    }
};

inline ordered_json texture_to_json(const DomainTexture& t) {
    return ordered_json{{"bg_mean", t.bg_mean},
                        {"bg_mean_jitter", t.bg_mean_jitter},
                        {"bg_noise", t.bg_noise},
                        {"bg_smooth_passes", t.bg_smooth_passes}};
}

inline DomainTexture texture_from_json(const ordered_json& j) {
    DomainTexture t;
    t.bg_mean = j.at("bg_mean").get<std::vector<double>>();
    t.bg_mean_jitter = j.at("bg_mean_jitter").get<double>();
    t.bg_noise = j.at("bg_noise").get<double>();
    t.bg_smooth_passes = j.at("bg_smooth_passes").get<uint16_t>();
    return t;
}

inline ordered_json spec_to_json(const SceneSpec& s) {
    return ordered_json{{"height", s.height},
                        {"width", s.width},
                        {"channels", s.channels},
                        {"classes", s.classes},
                        {"objects_min", s.objects_min},
                        {"objects_max", s.objects_max},
                        {"object_size_min", s.object_size_min},
                        {"object_size_max", s.object_size_max},
                        {"color_jitter", s.color_jitter},
                        {"source_texture", texture_to_json(s.source_texture)},
                        {"target_texture", texture_to_json(s.target_texture)},
                        {"shift_scale", s.shift_scale},
                        {"shift_offset", s.shift_offset},
                        {"shift_noise", s.shift_noise}};
}

inline SceneSpec spec_from_json(const ordered_json& j) {
    SceneSpec s;
    s.height = j.at("height").get<uint16_t>();
    s.width = j.at("width").get<uint16_t>();
    s.channels = j.at("channels").get<uint16_t>();
    s.classes = j.at("classes").get<uint16_t>();
    s.objects_min = j.at("objects_min").get<uint16_t>();
    s.objects_max = j.at("objects_max").get<uint16_t>();
    s.object_size_min = j.at("object_size_min").get<uint16_t>();
    s.object_size_max = j.at("object_size_max").get<uint16_t>();
    s.color_jitter = j.at("color_jitter").get<double>();
    s.source_texture = texture_from_json(j.at("source_texture"));
    s.target_texture = texture_from_json(j.at("target_texture"));
    s.shift_scale = j.at("shift_scale").get<std::vector<double>>();
    s.shift_offset = j.at("shift_offset").get<std::vector<double>>();
    s.shift_noise = j.at("shift_noise").get<double>();
    return s;
}

inline uint64_t spec_hash(const SceneSpec& s) { return fnv1a(spec_to_json(s).dump()); }

// Class base colors on an HSV hue wheel (s=0.7, v=0.8); channel ch beyond
// the first three repeats the RGB pattern.
inline std::array<double, 3> class_rgb(uint16_t cls, uint16_t num_classes) {
    const double h6 = 6.0 * static_cast<double>(cls) / static_cast<double>(num_classes);
    const int i = static_cast<int>(h6) % 6;
    const double f = h6 - static_cast<double>(static_cast<int>(h6));
    const double v = 0.8, s = 0.7;
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

namespace detail {

inline void box_blur_3x3(std::vector<double>& buf, uint16_t h, uint16_t w, uint16_t c) {
    std::vector<double> out(buf.size());
    auto idx = [&](int y, int x, int ch) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return (static_cast<size_t>(y) * w + static_cast<size_t>(x)) * c +
               static_cast<size_t>(ch);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += buf[idx(y + dy, x + dx, ch)];
                out[idx(y, x, ch)] = acc / 9.0;
            }
    buf = std::move(out);
}

}  // namespace detail

// Renders one scene. Draw order within the per-scene stream: per-scene
// background base color, background noise in scan order, then per-object
// parameters, then shift noise in scan order. apply_shift defaults to the
// domain rule; passing false yields the pre-shift rendering of the same
// stream.
inline Scene render_scene(const SceneSpec& spec, uint64_t seed, uint32_t id, Domain domain,
                          bool with_objects, bool apply_shift) {
    RandomStream rng(seed, "data", id);
    const uint16_t h = spec.height, w = spec.width, c = spec.channels;
    const DomainTexture& tex =
        domain == Domain::source ? spec.source_texture : spec.target_texture;

    std::vector<double> base(c);
    for (int ch = 0; ch < c; ++ch)
        base[ch] = tex.bg_mean[ch] + rng.uniform(-tex.bg_mean_jitter, tex.bg_mean_jitter);

    std::vector<double> buf(static_cast<size_t>(h) * w * c);
    for (size_t i = 0; i < buf.size(); ++i)
        buf[i] = base[i % c] + tex.bg_noise * rng.normal();
    for (int pass = 0; pass < tex.bg_smooth_passes; ++pass) detail::box_blur_3x3(buf, h, w, c);

    Scene scene;
    scene.id = id;
    scene.domain = domain;
    scene.height = h;
    scene.width = w;
    scene.channels = c;

    if (with_objects) {
        const int count = static_cast<int>(rng.uniform_int(spec.objects_min, spec.objects_max));
        for (int k = 0; k < count; ++k) {
            const int cls = static_cast<int>(rng.uniform_int(0, spec.classes - 1));
            const int bw =
                static_cast<int>(rng.uniform_int(spec.object_size_min, spec.object_size_max));
            const int bh =
                static_cast<int>(rng.uniform_int(spec.object_size_min, spec.object_size_max));
            Box box;
            for (int attempt = 0; attempt < 10; ++attempt) {
                const int x1 = static_cast<int>(rng.uniform_int(0, w - bw));
                const int y1 = static_cast<int>(rng.uniform_int(0, h - bh));
                box = Box{static_cast<double>(x1), static_cast<double>(y1),
                          static_cast<double>(x1 + bw), static_cast<double>(y1 + bh)};
                double worst = 0.0;
                for (const auto& gt : scene.gts) worst = std::max(worst, iou(box, gt.box));
                if (worst <= 0.3) break;  // crowding cap; last attempt is kept as-is
            }
            const auto rgb = class_rgb(static_cast<uint16_t>(cls), spec.classes);
            std::vector<double> color(c);
            for (int ch = 0; ch < c; ++ch)
                color[ch] = rgb[ch % 3] + rng.uniform(-spec.color_jitter, spec.color_jitter);
            for (int y = static_cast<int>(box.y1); y < static_cast<int>(box.y2); ++y)
                for (int x = static_cast<int>(box.x1); x < static_cast<int>(box.x2); ++x)
                    for (int ch = 0; ch < c; ++ch)
                        buf[(static_cast<size_t>(y) * w + x) * c + ch] = color[ch];
            scene.gts.push_back({cls, box});
        }
    }

    if (apply_shift) {
        for (size_t i = 0; i < buf.size(); ++i) {
            buf[i] = spec.shift_scale[i % c] * buf[i] + spec.shift_offset[i % c];
            buf[i] += spec.shift_noise * rng.normal();
        }
    }

    scene.pixels.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i)
        scene.pixels[i] = static_cast<float>(std::clamp(buf[i], 0.0, 1.0));
    return scene;
}

inline Scene render_scene(const SceneSpec& spec, uint64_t seed, uint32_t id, Domain domain,
                          bool with_objects) {
    return render_scene(spec, seed, id, domain, with_objects, domain == Domain::target);
}

// ---------------------------------------------------------------------------
// Manifest and dataset IO

enum class Split { source_train, target_train, target_val };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::source_train: return "source_train";
        case Split::target_train: return "target_train";
        default: return "target_val";
    }
}

inline Split split_from_name(const std::string& name) {
    if (name == "source_train") return Split::source_train;
    if (name == "target_train") return Split::target_train;
    if (name == "target_val") return Split::target_val;
    throw usage_error("unknown split '" + name + "'");
}

struct SplitStats {
    uint32_t offset = 0;  // first scene id of the split
    uint32_t count = 0;
    std::vector<uint64_t> object_counts;  // per class
};

struct SceneRef {
    uint32_t id = 0;
    std::string file;
    uint64_t checksum = 0;
};

struct DatasetManifest {
    uint64_t seed = 0;
    SceneSpec spec;
    SplitStats splits[3];  // indexed by Split
    std::vector<SceneRef> scenes;

    const SplitStats& split(Split s) const { return splits[static_cast<int>(s)]; }
    SplitStats& split(Split s) { return splits[static_cast<int>(s)]; }

    Split split_of(uint32_t id) const {
        for (Split s : {Split::target_val, Split::target_train, Split::source_train}) {
            const auto& st = split(s);
            if (id >= st.offset && id < st.offset + st.count) return s;
        }
        throw integrity_error("scene id " + std::to_string(id) + " outside every split");
    }
};

inline ordered_json manifest_to_json(const DatasetManifest& m) {
    ordered_json splits;
    for (Split s : {Split::source_train, Split::target_train, Split::target_val}) {
        const auto& st = m.split(s);
        splits[split_name(s)] = ordered_json{
            {"offset", st.offset}, {"count", st.count}, {"object_counts", st.object_counts}};
    }
    ordered_json scenes = ordered_json::array();
    for (const auto& ref : m.scenes)
        scenes.push_back(ordered_json{
            {"id", ref.id}, {"file", ref.file}, {"checksum", to_hex(ref.checksum)}});
    return ordered_json{{"seed", m.seed},
                        {"spec_hash", to_hex(spec_hash(m.spec))},
                        {"spec", spec_to_json(m.spec)},
                        {"splits", splits},
                        {"scenes", scenes}};
}

inline DatasetManifest manifest_from_json(const ordered_json& j) {
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.spec = spec_from_json(j.at("spec"));
    if (to_hex(spec_hash(m.spec)) != j.at("spec_hash").get<std::string>())
        throw integrity_error("manifest: spec hash mismatch");
    for (Split s : {Split::source_train, Split::target_train, Split::target_val}) {
        const auto& js = j.at("splits").at(split_name(s));
        auto& st = m.split(s);
        st.offset = js.at("offset").get<uint32_t>();
        st.count = js.at("count").get<uint32_t>();
        st.object_counts = js.at("object_counts").get<std::vector<uint64_t>>();
    }
    for (const auto& je : j.at("scenes")) {
        SceneRef ref;
        ref.id = je.at("id").get<uint32_t>();
        ref.file = je.at("file").get<std::string>();
        ref.checksum = from_hex(je.at("checksum").get<std::string>());
        m.scenes.push_back(std::move(ref));
    }
    return m;
}

struct SplitSizes {
    uint32_t source_train = 0;
    uint32_t target_train = 0;
    uint32_t target_val = 0;
};

inline DatasetManifest generate_dataset(const SceneSpec& spec, SplitSizes sizes, uint64_t seed,
                                        const std::filesystem::path& out_dir) {
    spec.validate();
    if (sizes.source_train < 1 || sizes.target_train < 1 || sizes.target_val < 1)
        throw usage_error("generate_dataset: every split needs at least one scene");
    const uint64_t total =
        static_cast<uint64_t>(sizes.source_train) + sizes.target_train + sizes.target_val;
    if (total > 999999) throw usage_error("generate_dataset: too many scenes");

    std::filesystem::create_directories(out_dir / "scenes");

    DatasetManifest m;
    m.seed = seed;
    m.spec = spec;
    m.split(Split::source_train) = {0, sizes.source_train, {}};
    m.split(Split::target_train) = {sizes.source_train, sizes.target_train, {}};
    m.split(Split::target_val) = {sizes.source_train + sizes.target_train, sizes.target_val, {}};

    for (Split s : {Split::source_train, Split::target_train, Split::target_val}) {
        auto& st = m.split(s);
        st.object_counts.assign(spec.classes, 0);
        const Domain domain = s == Split::source_train ? Domain::source : Domain::target;
        const bool with_objects = s != Split::target_train;
        for (uint32_t i = 0; i < st.count; ++i) {
            const uint32_t id = st.offset + i;
            Scene scene = render_scene(spec, seed, id, domain, with_objects);
            for (const auto& gt : scene.gts) st.object_counts[gt.cls] += 1;
            const std::string bytes = encode_scene(scene);
            const std::string file = scene_filename(id);
            write_file(out_dir / "scenes" / file, bytes);
            m.scenes.push_back({id, file, fnv1a(bytes.data(), bytes.size())});
        }
    }

    write_file(out_dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
    return m;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<Scene> scenes;  // manifest order

    std::vector<const Scene*> split(Split s) const {
        std::vector<const Scene*> out;
        const auto& st = manifest.split(s);
        out.reserve(st.count);
        for (const auto& scene : scenes)
            if (scene.id >= st.offset && scene.id < st.offset + st.count) out.push_back(&scene);
        return out;
    }

    const Scene& by_id(uint32_t id) const {
        for (const auto& s : scenes)
            if (s.id == id) return s;
        throw integrity_error("scene id " + std::to_string(id) + " not in dataset");
    }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw usage_error("no manifest.json under " + dir.string());
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw integrity_error("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    ds.scenes.reserve(ds.manifest.scenes.size());
    for (const auto& ref : ds.manifest.scenes) {
        const auto path = dir / "scenes" / ref.file;
        if (!std::filesystem::exists(path))
            throw integrity_error("scene " + std::to_string(ref.id) + ": missing file " +
                                  path.string());
        const std::string bytes = read_file(path);
        if (fnv1a(bytes.data(), bytes.size()) != ref.checksum)
            throw integrity_error("scene " + std::to_string(ref.id) + ": checksum mismatch in " +
                                  path.string());
        Scene scene = decode_scene(bytes, ref.id, "scene " + std::to_string(ref.id));
        scene.domain = ds.manifest.split_of(ref.id) == Split::source_train ? Domain::source
                                                                           : Domain::target;
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Oracle proposals: three jittered copies of every ground-truth box plus
// n_bg uniformly placed boxes in the configured size range. Offsets are
// drawn per corner coordinate, clamped to the grid.

inline std::vector<Box> generate_proposals(const Scene& scene, int n_bg, int jitter,
                                           uint64_t seed, int size_min, int size_max) {
    RandomStream rng(seed, "proposals", scene.id);
    std::vector<Box> out;
    out.reserve(scene.gts.size() * 3 + static_cast<size_t>(n_bg));
    const int w = scene.width, h = scene.height;
    for (const auto& gt : scene.gts) {
        for (int k = 0; k < 3; ++k) {
            int x1 = static_cast<int>(gt.box.x1) + static_cast<int>(rng.uniform_int(-jitter, jitter));
            int y1 = static_cast<int>(gt.box.y1) + static_cast<int>(rng.uniform_int(-jitter, jitter));
            int x2 = static_cast<int>(gt.box.x2) + static_cast<int>(rng.uniform_int(-jitter, jitter));
            int y2 = static_cast<int>(gt.box.y2) + static_cast<int>(rng.uniform_int(-jitter, jitter));
            x1 = std::clamp(x1, 0, w - 1);
            y1 = std::clamp(y1, 0, h - 1);
            x2 = std::clamp(x2, x1 + 1, w);
            y2 = std::clamp(y2, y1 + 1, h);
            out.push_back(Box{static_cast<double>(x1), static_cast<double>(y1),
                              static_cast<double>(x2), static_cast<double>(y2)});
        }
    }
    for (int k = 0; k < n_bg; ++k) {
        const int bw = static_cast<int>(rng.uniform_int(size_min, std::min(size_max, w)));
        const int bh = static_cast<int>(rng.uniform_int(size_min, std::min(size_max, h)));
        const int x1 = static_cast<int>(rng.uniform_int(0, w - bw));
        const int y1 = static_cast<int>(rng.uniform_int(0, h - bh));
        out.push_back(Box{static_cast<double>(x1), static_cast<double>(y1),
                          static_cast<double>(x1 + bw), static_cast<double>(y1 + bh)});
    }
    return out;
}

}  // namespace rscn
