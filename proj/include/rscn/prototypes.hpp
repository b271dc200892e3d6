#pragma once

// Per-image prototypes: proposals are labeled against the ground truth by
// IoU, class-wise means of the labeled feature rows form the foreground
// prototypes, background rows form the background prototype. Target images
// carry no ground truth, so their prototype is the mean of all rows.

#include <map>
#include <vector>

#include "rscn/box.hpp"
#include "rscn/scene.hpp"
#include "rscn/tensor.hpp"

namespace rscn {

inline constexpr int kLabelBackground = -1;
inline constexpr int kLabelIgnore = -2;

// Max-IoU assignment: class of the best ground truth when IoU >= fg_iou,
// background when the best IoU < bg_iou, ignored in between. No ground
// truth at all means everything is background.
inline std::vector<int> assign_proposal_labels(const std::vector<Box>& boxes,
                                               const std::vector<GroundTruth>& gts,
                                               double fg_iou = 0.5, double bg_iou = 0.3) {
    if (!(0.0 <= bg_iou && bg_iou <= fg_iou && fg_iou <= 1.0))
        throw std::invalid_argument("assign_proposal_labels: need 0 <= bg_iou <= fg_iou <= 1");
    std::vector<int> labels(boxes.size(), kLabelBackground);
    if (gts.empty()) return labels;
    for (size_t i = 0; i < boxes.size(); ++i) {
        double best = 0.0;
        int best_cls = kLabelBackground;
        for (const auto& gt : gts) {
            const double v = iou(boxes[i], gt.box);
            if (v > best) {
                best = v;
                best_cls = gt.cls;
            }
        }
        if (best >= fg_iou)
            labels[i] = best_cls;
        else if (best < bg_iou)
            labels[i] = kLabelBackground;
        else
            labels[i] = kLabelIgnore;
    }
    return labels;
}

struct PrototypeSet {
    uint32_t image_id = 0;
    std::vector<int> classes;          // present classes, ascending
    std::vector<Tensor> class_protos;  // aligned with classes
    Tensor bg_proto;

    const Tensor& proto_for(int cls) const {
        for (size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == cls) return class_protos[i];
        throw std::invalid_argument("prototype set: class " + std::to_string(cls) +
                                    " not present");
    }
};

// Class-wise means over labeled rows; ignore rows excluded. The means are
// graph nodes, so gradients reach each contributing row with weight
// 1/count.
inline PrototypeSet build_source_prototypes(const Tensor& features,
                                            const std::vector<int>& labels,
                                            uint32_t image_id = 0) {
    if (features.shape().size() != 2 || features.shape()[0] == 0)
        throw std::invalid_argument("build_source_prototypes: expected nonempty [n,d] features");
    if (labels.size() != features.shape()[0])
        throw std::invalid_argument("build_source_prototypes: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(features.shape()[0]) +
                                    " rows");
    std::map<int, std::vector<size_t>> rows_by_class;
    std::vector<size_t> bg_rows;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kLabelIgnore) continue;
        if (labels[i] == kLabelBackground)
            bg_rows.push_back(i);
        else
            rows_by_class[labels[i]].push_back(i);
    }
    if (bg_rows.empty())
        throw std::invalid_argument("build_source_prototypes: no background proposals");
    PrototypeSet ps;
    ps.image_id = image_id;
    for (const auto& [cls, rows] : rows_by_class) {
        ps.classes.push_back(cls);
        ps.class_protos.push_back(rows_mean(features, rows));
    }
    ps.bg_proto = rows_mean(features, bg_rows);
    return ps;
}

// Instance-free images: the background prototype is the mean of all rows.
inline Tensor build_target_bg_prototype(const Tensor& features) {
    if (features.shape().size() != 2 || features.shape()[0] == 0)
        throw std::invalid_argument("build_target_bg_prototype: expected nonempty [n,d] features");
    std::vector<size_t> all(features.shape()[0]);
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    return rows_mean(features, all);
}

// Pairwise cosine similarities over the ordered prototype list: present
// classes ascending, background last. The fixed ordering keeps matrices
// from different detectors positionally aligned.
struct SimilarityMatrix {
    std::vector<int> classes;     // ascending, then kLabelBackground
    std::vector<Tensor> entries;  // row-major scalars, size m*m

    size_t size() const { return classes.size(); }
    const Tensor& at(size_t i, size_t j) const { return entries[i * size() + j]; }
};

inline SimilarityMatrix cosine_matrix(const PrototypeSet& ps) {
    if (ps.classes.empty() && !ps.bg_proto.defined())
        throw std::invalid_argument("cosine_matrix: empty prototype set");
    SimilarityMatrix m;
    std::vector<Tensor> protos;
    for (size_t i = 0; i < ps.classes.size(); ++i) {
        m.classes.push_back(ps.classes[i]);
        protos.push_back(ps.class_protos[i]);
    }
    m.classes.push_back(kLabelBackground);
    protos.push_back(ps.bg_proto);
    const size_t n = protos.size();
    m.entries.reserve(n * n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) m.entries.push_back(cosine_similarity(protos[i], protos[j]));
    return m;
}

}  // namespace rscn
