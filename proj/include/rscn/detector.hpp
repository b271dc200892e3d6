#pragma once

// The toy detector: proposal boxes are cropped from the scene, resized to a
// fixed patch with bilinear sampling, flattened and pushed through a
// three-layer extractor MLP; a linear head scores K foreground classes plus
// background. Proposals double as output boxes; there is no box
// regression.

#include <string>
#include <vector>

#include "rscn/nn.hpp"
#include "rscn/scene.hpp"

namespace rscn {

struct DetectorConfig {
    uint16_t patch = 8;      // P
    uint16_t feat_dim = 64;  // d
    uint16_t hidden = 128;   // h
    uint16_t classes = 3;    // K foreground classes
    uint16_t channels = 3;

    size_t input_dim() const {
        return static_cast<size_t>(patch) * patch * channels;
    }
};

struct DetectorParams {
    DetectorConfig cfg;
    std::vector<LinearLayer> extractor;  // P*P*C -> h -> h -> d
    LinearLayer head;                    // d -> K+1
    bool frozen = false;

    static DetectorParams init(const DetectorConfig& cfg, uint64_t seed,
                               const std::string& prefix = "g") {
        DetectorParams p;
        p.cfg = cfg;
        p.extractor.push_back(make_linear(cfg.input_dim(), cfg.hidden, seed, prefix + ".extractor.0"));
        p.extractor.push_back(make_linear(cfg.hidden, cfg.hidden, seed, prefix + ".extractor.1"));
        p.extractor.push_back(make_linear(cfg.hidden, cfg.feat_dim, seed, prefix + ".extractor.2"));
        p.head = make_linear(cfg.feat_dim, static_cast<size_t>(cfg.classes) + 1, seed,
                             prefix + ".head");
        return p;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        for (const auto& l : extractor) {
            ps.push_back(l.weight);
            ps.push_back(l.bias);
        }
        ps.push_back(head.weight);
        ps.push_back(head.bias);
        return ps;
    }

    std::vector<Tensor> extractor_parameters() const {
        std::vector<Tensor> ps;
        for (const auto& l : extractor) {
            ps.push_back(l.weight);
            ps.push_back(l.bias);
        }
        return ps;
    }

    void freeze() {
        frozen = true;
        for (auto& t : parameters()) t.set_requires_grad(false);
    }
};

// Bilinear sample of one box resized to patch x patch, flattened
// [i][j][channel]. Sampling grid: output cell (i, j) reads the continuous
// point (x1 + (j+0.5)*bw/P, y1 + (i+0.5)*bh/P) where pixel (r, c) covers
// [c, c+1) x [r, r+1) with center (c+0.5, r+0.5). The four neighbors are
// weighted (1-fx)(1-fy), fx(1-fy), (1-fx)fy, fx*fy with fx, fy the
// fractional offsets of the sample from the upper-left pixel center;
// neighbor indices are clamped to the grid.
inline std::vector<double> bilinear_crop(const Scene& scene, const Box& box, uint16_t patch) {
    if (!box.valid())
        throw std::invalid_argument("bilinear_crop: degenerate box " + box_str(box));
    const int hh = scene.height, ww = scene.width, cc = scene.channels;
    std::vector<double> out(static_cast<size_t>(patch) * patch * cc);
    const double sx = box.width() / patch, sy = box.height() / patch;
    size_t o = 0;
    for (int i = 0; i < patch; ++i) {
        const double v = box.y1 + (i + 0.5) * sy - 0.5;
        int r0 = static_cast<int>(std::floor(v));
        const double fy = v - r0;
        int r1 = std::clamp(r0 + 1, 0, hh - 1);
        r0 = std::clamp(r0, 0, hh - 1);
        for (int j = 0; j < patch; ++j) {
            const double u = box.x1 + (j + 0.5) * sx - 0.5;
            int c0 = static_cast<int>(std::floor(u));
            const double fx = u - c0;
            int c1 = std::clamp(c0 + 1, 0, ww - 1);
            c0 = std::clamp(c0, 0, ww - 1);
            for (int ch = 0; ch < cc; ++ch) {
                const double p00 = scene.at(r0, c0, ch), p01 = scene.at(r0, c1, ch);
                const double p10 = scene.at(r1, c0, ch), p11 = scene.at(r1, c1, ch);
                out[o++] = (1 - fy) * ((1 - fx) * p00 + fx * p01) +
                           fy * ((1 - fx) * p10 + fx * p11);
            }
        }
    }
    return out;
}

// Crops every box, stacks the flattened patches as a constant leaf and runs
// the extractor; row i of the result corresponds to boxes[i].
inline Tensor extract_proposal_features(const DetectorParams& params, const Scene& scene,
                                        const std::vector<Box>& boxes) {
    const size_t in_dim = params.cfg.input_dim();
    std::vector<double> rows;
    rows.reserve(boxes.size() * in_dim);
    for (const auto& box : boxes) {
        auto patch = bilinear_crop(scene, box, params.cfg.patch);
        rows.insert(rows.end(), patch.begin(), patch.end());
    }
    Tensor input = Tensor::leaf({boxes.size(), in_dim}, std::move(rows));
    return mlp_forward(params.extractor, input);
}

// Raw logits [n, K+1]; softmax is applied by consumers.
inline Tensor classify_proposals(const DetectorParams& params, const Tensor& features) {
    if (features.shape().size() != 2 || features.shape()[1] != params.cfg.feat_dim)
        throw std::invalid_argument("classify_proposals: expected [n," +
                                    std::to_string(params.cfg.feat_dim) + "] features, got " +
                                    shape_str(features.shape()));
    return add_bias(matmul(features, params.head.weight), params.head.bias);
}

struct Detection {
    Box box;
    int cls = 0;
    double score = 0.0;

    bool operator==(const Detection&) const = default;
};

// Greedy class-wise suppression, descending score, insertion order breaking
// ties.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
    if (!(iou_thresh > 0.0 && iou_thresh <= 1.0))
        throw std::invalid_argument("nms: iou threshold must be in (0,1], got " +
                                    std::to_string(iou_thresh));
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    std::vector<Detection> kept;
    for (size_t idx : order) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.cls == dets[idx].cls && iou(k.box, dets[idx].box) >= iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(dets[idx]);
    }
    return kept;
}

// Full inference for one scene over the given proposals: per proposal the
// argmax class wins; foreground proposals above the score threshold become
// detections scored by their softmax probability, then class-wise NMS.
inline std::vector<Detection> detect(const DetectorParams& params, const Scene& scene,
                                     const std::vector<Box>& proposals, double score_thresh,
                                     double iou_thresh) {
    if (proposals.empty()) return {};
    Tensor features = extract_proposal_features(params, scene, proposals);
    Tensor logits = classify_proposals(params, features);
    const size_t k1 = params.cfg.classes + 1u;
    std::vector<Detection> raw;
    for (size_t i = 0; i < proposals.size(); ++i) {
        const double* z = logits.values().data() + i * k1;
        double zmax = z[0];
        size_t arg = 0;
        for (size_t c = 1; c < k1; ++c)
            if (z[c] > zmax) {
                zmax = z[c];
                arg = c;
            }
        if (arg == k1 - 1) continue;  // background
        double denom = 0.0;
        for (size_t c = 0; c < k1; ++c) denom += std::exp(z[c] - zmax);
        const double prob = 1.0 / denom;  // exp(zmax - zmax) / denom
        if (prob >= score_thresh)
            raw.push_back({proposals[i], static_cast<int>(arg), prob});
    }
    return nms(raw, iou_thresh);
}

}  // namespace rscn
