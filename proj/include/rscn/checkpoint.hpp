#pragma once

// RSCK checkpoint format (all integers little-endian):
//   magic "RSCK" (4 bytes)
//   version  u16 (currently 1)
//   feat_dim u16   (d)
//   hidden   u16   (h)
//   patch    u16   (P)
//   classes  u16   (K)
//   tensor_count u32
//   tensor records, sorted by name:
//     name_len u16, name bytes, rank u16, extents u32 each, values f64
//   content_hash u64 over every preceding byte
//
// Tensors are stored under their parameter names ("g.extractor.0.weight",
// "g.head.bias", "d_bg.1.weight", ...); the discriminator block is present
// only in checkpoints of adapted detectors.

#include <map>
#include <string>
#include <vector>

#include "rscn/detector.hpp"
#include "rscn/io.hpp"

namespace rscn {

inline constexpr char kCheckpointMagic[4] = {'R', 'S', 'C', 'K'};
inline constexpr uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    uint16_t feat_dim = 0, hidden = 0, patch = 0, classes = 0;
    std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
    uint64_t content_hash = 0;  // filled on encode/decode
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    put_u16(buf, kCheckpointVersion);
    put_u16(buf, ck.feat_dim);
    put_u16(buf, ck.hidden);
    put_u16(buf, ck.patch);
    put_u16(buf, ck.classes);
    put_u32(buf, static_cast<uint32_t>(ck.tensors.size()));
    for (const auto& [name, entry] : ck.tensors) {
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        put_u16(buf, static_cast<uint16_t>(entry.first.size()));
        for (size_t ext : entry.first) put_u32(buf, static_cast<uint32_t>(ext));
        for (double v : entry.second) put_f64(buf, v);
    }
    put_u64(buf, fnv1a(buf.data(), buf.size()));
    return buf;
}

inline Checkpoint decode_checkpoint(const std::string& data, const std::string& context) {
    if (data.size() < 8 + 14) throw integrity_error(context + ": truncated checkpoint");
    const uint64_t stored_hash =
        ByteReader(data.substr(data.size() - 8), context).get_u64();
    if (fnv1a(data.data(), data.size() - 8) != stored_hash)
        throw integrity_error(context + ": content hash mismatch");

    ByteReader r(data, context);
    if (r.get_bytes(4) != std::string(kCheckpointMagic, 4))
        throw integrity_error(context + ": bad magic, not an RSCK checkpoint");
    const uint16_t version = r.get_u16();
    if (version != kCheckpointVersion)
        throw integrity_error(context + ": unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.feat_dim = r.get_u16();
    ck.hidden = r.get_u16();
    ck.patch = r.get_u16();
    ck.classes = r.get_u16();
    const uint32_t count = r.get_u32();
    for (uint32_t t = 0; t < count; ++t) {
        const uint16_t name_len = r.get_u16();
        const std::string name = r.get_bytes(name_len);
        const uint16_t rank = r.get_u16();
        Shape shape(rank);
        for (auto& ext : shape) ext = r.get_u32();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.get_f64();
        ck.tensors[name] = {std::move(shape), std::move(values)};
    }
    ck.content_hash = stored_hash;
    if (r.remaining() != 8) throw integrity_error(context + ": trailing bytes");
    return ck;
}

inline void add_named_tensors(Checkpoint& ck, const std::vector<Tensor>& params) {
    for (const auto& t : params) {
        if (t.name().empty())
            throw std::invalid_argument("checkpoint: unnamed parameter tensor");
        ck.tensors[t.name()] = {t.shape(), t.values()};
    }
}

inline Checkpoint make_checkpoint(const DetectorParams& detector,
                                  const Discriminator* disc = nullptr) {
    Checkpoint ck;
    ck.feat_dim = detector.cfg.feat_dim;
    ck.hidden = detector.cfg.hidden;
    ck.patch = detector.cfg.patch;
    ck.classes = detector.cfg.classes;
    add_named_tensors(ck, detector.parameters());
    if (disc) add_named_tensors(ck, disc->parameters());
    return ck;
}

// Writes the checkpoint and returns its content hash.
inline uint64_t save_checkpoint(const std::filesystem::path& path,
                                const DetectorParams& detector,
                                const Discriminator* disc = nullptr) {
    const std::string bytes = encode_checkpoint(make_checkpoint(detector, disc));
    write_file(path, bytes);
    ByteReader r(bytes.substr(bytes.size() - 8), path.string());
    return r.get_u64();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw usage_error("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path), path.string());
}

namespace detail {

inline Tensor tensor_from_checkpoint(const Checkpoint& ck, const std::string& name,
                                     bool requires_grad) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end())
        throw integrity_error("checkpoint: missing tensor '" + name + "'");
    return Tensor::leaf(it->second.first, it->second.second, requires_grad, name);
}

}  // namespace detail

// Rebuilds the detector from its named tensors. channels is recovered from
// the first extractor layer's input width.
inline DetectorParams detector_from_checkpoint(const Checkpoint& ck,
                                               const std::string& prefix = "g",
                                               bool requires_grad = true) {
    DetectorParams p;
    p.cfg.feat_dim = ck.feat_dim;
    p.cfg.hidden = ck.hidden;
    p.cfg.patch = ck.patch;
    p.cfg.classes = ck.classes;
    for (int i = 0; i < 3; ++i) {
        const std::string base = prefix + ".extractor." + std::to_string(i);
        LinearLayer l;
        l.weight = detail::tensor_from_checkpoint(ck, base + ".weight", requires_grad);
        l.bias = detail::tensor_from_checkpoint(ck, base + ".bias", requires_grad);
        p.extractor.push_back(std::move(l));
    }
    p.head.weight = detail::tensor_from_checkpoint(ck, prefix + ".head.weight", requires_grad);
    p.head.bias = detail::tensor_from_checkpoint(ck, prefix + ".head.bias", requires_grad);
    const size_t in_dim = p.extractor[0].weight.shape()[0];
    const size_t ppc = static_cast<size_t>(ck.patch) * ck.patch;
    if (in_dim % ppc != 0)
        throw integrity_error("checkpoint: extractor input " + std::to_string(in_dim) +
                              " is not a multiple of patch area " + std::to_string(ppc));
    p.cfg.channels = static_cast<uint16_t>(in_dim / ppc);
    if (p.head.weight.shape()[0] != ck.feat_dim ||
        p.head.weight.shape()[1] != static_cast<size_t>(ck.classes) + 1)
        throw integrity_error("checkpoint: classifier head shape disagrees with header");
    return p;
}

inline Discriminator discriminator_from_checkpoint(const Checkpoint& ck,
                                                   const std::string& prefix = "d_bg",
                                                   bool requires_grad = true) {
    Discriminator d;
    for (int i = 0; i < 3; ++i) {
        const std::string base = prefix + "." + std::to_string(i);
        LinearLayer l;
        l.weight = detail::tensor_from_checkpoint(ck, base + ".weight", requires_grad);
        l.bias = detail::tensor_from_checkpoint(ck, base + ".bias", requires_grad);
        d.layers.push_back(std::move(l));
    }
    return d;
}

}  // namespace rscn
