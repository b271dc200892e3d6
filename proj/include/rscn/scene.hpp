#pragma once

// Scene: one synthetic image plus its ground-truth boxes, and the IFDS
// on-disk format.
//
// IFDS scene file layout (all integers little-endian):
//   magic "IFDS" (4 bytes)
//   version  u16  (currently 1)
//   height   u16
//   width    u16
//   channels u16
//   gt_count u16
//   reserved u32  (zero)
//   pixels   height*width*channels f32, row-major [y][x][channel]
//   gt records, gt_count times: class u16, x1 u16, y1 u16, x2 u16, y2 u16
//
// The domain tag is not stored in the file; it is implied by the manifest
// split the scene belongs to.

#include <cstdint>
#include <string>
#include <vector>

#include "rscn/box.hpp"
#include "rscn/errors.hpp"
#include "rscn/io.hpp"

namespace rscn {

inline constexpr char kSceneMagic[4] = {'I', 'F', 'D', 'S'};
inline constexpr uint16_t kSceneVersion = 1;

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

struct GroundTruth {
    int cls = 0;
    Box box;

    bool operator==(const GroundTruth&) const = default;
};

struct Scene {
    uint32_t id = 0;
    Domain domain = Domain::source;
    uint16_t height = 0, width = 0, channels = 0;
    std::vector<float> pixels;  // [y][x][channel]
    std::vector<GroundTruth> gts;

    float at(size_t y, size_t x, size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }

    bool same_content(const Scene& other) const {
        return height == other.height && width == other.width && channels == other.channels &&
               pixels == other.pixels && gts == other.gts;
    }
};

inline std::string encode_scene(const Scene& s) {
    std::string buf;
    buf.reserve(18 + s.pixels.size() * 4 + s.gts.size() * 10);
    buf.append(kSceneMagic, 4);
    put_u16(buf, kSceneVersion);
    put_u16(buf, s.height);
    put_u16(buf, s.width);
    put_u16(buf, s.channels);
    put_u16(buf, static_cast<uint16_t>(s.gts.size()));
    put_u32(buf, 0);
    for (float p : s.pixels) put_f32(buf, p);
    for (const auto& gt : s.gts) {
        put_u16(buf, static_cast<uint16_t>(gt.cls));
        put_u16(buf, static_cast<uint16_t>(gt.box.x1));
        put_u16(buf, static_cast<uint16_t>(gt.box.y1));
        put_u16(buf, static_cast<uint16_t>(gt.box.x2));
        put_u16(buf, static_cast<uint16_t>(gt.box.y2));
    }
    return buf;
}

inline Scene decode_scene(const std::string& data, uint32_t id, const std::string& context) {
    ByteReader r(data, context);
    if (r.get_bytes(4) != std::string(kSceneMagic, 4))
        throw integrity_error(context + ": bad magic, not an IFDS scene file");
    const uint16_t version = r.get_u16();
    if (version != kSceneVersion)
        throw integrity_error(context + ": unsupported version " + std::to_string(version));
    Scene s;
    s.id = id;
    s.height = r.get_u16();
    s.width = r.get_u16();
    s.channels = r.get_u16();
    const uint16_t gt_count = r.get_u16();
    r.get_u32();  // reserved
    const size_t n = static_cast<size_t>(s.height) * s.width * s.channels;
    s.pixels.resize(n);
    for (size_t i = 0; i < n; ++i) s.pixels[i] = r.get_f32();
    s.gts.resize(gt_count);
    for (auto& gt : s.gts) {
        gt.cls = r.get_u16();
        gt.box.x1 = r.get_u16();
        gt.box.y1 = r.get_u16();
        gt.box.x2 = r.get_u16();
        gt.box.y2 = r.get_u16();
        if (!gt.box.valid() || gt.box.x2 > s.width || gt.box.y2 > s.height)
            throw integrity_error(context + ": ground-truth box out of bounds " +
                                  box_str(gt.box));
    }
    r.expect_end();
    return s;
}

// Scene files are named by zero-padded id, six digits.
inline std::string scene_filename(uint32_t id) {
    std::string s = std::to_string(id);
    return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

}  // namespace rscn
