#pragma once

// Detection quality and mechanism metrics: VOC-style AP@50 with all-points
// interpolation, cross-domain intra-class similarity and inter-class
// discriminability. Everything here is plain double math over values; no
// graphs are built.

#include <map>
#include <optional>

#include "json.hpp"
#include "rscn/detector.hpp"
#include "rscn/prototypes.hpp"
#include "rscn/synthbench.hpp"

namespace rscn {

struct ImageEval {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
};

// Average precision for one class at the given IoU threshold. Detections
// are ranked by descending score with ties broken by image index then
// insertion order; each is greedily matched to the unmatched ground truth
// of highest IoU >= the threshold. Returns nothing when the class has no
// ground truth.
inline std::optional<double> ap50(const std::vector<ImageEval>& images, int cls,
                                  double iou_thresh = 0.5) {
    struct Ranked {
        double score;
        size_t image;
        size_t order;
    };
    std::vector<Ranked> ranked;
    size_t num_gt = 0;
    for (size_t im = 0; im < images.size(); ++im) {
        for (size_t i = 0; i < images[im].dets.size(); ++i)
            if (images[im].dets[i].cls == cls)
                ranked.push_back({images[im].dets[i].score, im, i});
        for (const auto& gt : images[im].gts)
            if (gt.cls == cls) ++num_gt;
    }
    if (num_gt == 0) return std::nullopt;
    if (ranked.empty()) return 0.0;

    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.order < b.order;
    });

    std::vector<std::vector<bool>> gt_used(images.size());
    for (size_t im = 0; im < images.size(); ++im)
        gt_used[im].assign(images[im].gts.size(), false);

    std::vector<bool> is_tp(ranked.size(), false);
    for (size_t r = 0; r < ranked.size(); ++r) {
        const auto& det = images[ranked[r].image].dets[ranked[r].order];
        const auto& gts = images[ranked[r].image].gts;
        double best = 0.0;
        size_t best_gt = gts.size();
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].cls != cls || gt_used[ranked[r].image][g]) continue;
            const double v = iou(det.box, gts[g].box);
            if (v >= iou_thresh && v > best) {
                best = v;
                best_gt = g;
            }
        }
        if (best_gt < gts.size()) {
            gt_used[ranked[r].image][best_gt] = true;
            is_tp[r] = true;
        }
    }

    // all-points interpolation: area under the running precision envelope
    std::vector<double> precision(ranked.size()), recall(ranked.size());
    size_t tp = 0;
    for (size_t r = 0; r < ranked.size(); ++r) {
        if (is_tp[r]) ++tp;
        precision[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
        recall[r] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    for (size_t r = ranked.size(); r-- > 1;)
        precision[r - 1] = std::max(precision[r - 1], precision[r]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t r = 0; r < ranked.size(); ++r) {
        if (recall[r] > prev_recall) {
            ap += (recall[r] - prev_recall) * precision[r];
            prev_recall = recall[r];
        }
    }
    return ap;
}

// Mean over the per-class APs that are defined (>= 1 ground truth).
inline double map50(const std::map<int, double>& per_class_ap) {
    if (per_class_ap.empty())
        throw std::invalid_argument("map50: no class has ground truth");
    double acc = 0.0;
    for (const auto& [cls, ap] : per_class_ap) acc += ap;
    return acc / static_cast<double>(per_class_ap.size());
}

// ---------------------------------------------------------------------------
// Mechanism metrics over plain feature vectors

namespace detail {

inline double value_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        sa += a[i] * a[i];
        sb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(sa), kNormEps) * std::max(std::sqrt(sb), kNormEps));
}

inline std::vector<double> normalized(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = std::max(std::sqrt(s), kNormEps);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

}  // namespace detail

using FeaturesByClass = std::map<int, std::vector<std::vector<double>>>;

// Mean cosine similarity over all cross-domain pairs of same-class
// features. The all-pairs mean reduces to a dot product of summed unit
// vectors. Classes missing on either side are absent from the result.
inline std::map<int, double> cross_domain_intra_class_similarity(
    const FeaturesByClass& source, const FeaturesByClass& target) {
    std::map<int, double> out;
    for (const auto& [cls, src_feats] : source) {
        auto it = target.find(cls);
        if (it == target.end() || src_feats.empty() || it->second.empty()) continue;
        const size_t d = src_feats[0].size();
        std::vector<double> ssum(d, 0.0), tsum(d, 0.0);
        for (const auto& f : src_feats) {
            auto n = detail::normalized(f);
            for (size_t i = 0; i < d; ++i) ssum[i] += n[i];
        }
        for (const auto& f : it->second) {
            auto n = detail::normalized(f);
            for (size_t i = 0; i < d; ++i) tsum[i] += n[i];
        }
        double dot = 0.0;
        for (size_t i = 0; i < d; ++i) dot += ssum[i] * tsum[i];
        out[cls] = dot / (static_cast<double>(src_feats.size()) *
                          static_cast<double>(it->second.size()));
    }
    return out;
}

// 1 - mean pairwise cosine over ordered pairs i != j of the class
// prototypes; larger is more separable.
inline double inter_class_discriminability(const std::vector<std::vector<double>>& prototypes) {
    const size_t n = prototypes.size();
    if (n < 2)
        throw std::invalid_argument("inter_class_discriminability: need at least 2 prototypes");
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            acc += detail::value_cosine(prototypes[i], prototypes[j]);
        }
    return 1.0 - acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------
// Full split evaluation

struct EvalSettings {
    double score_thresh = 0.05;
    double nms_iou = 0.5;
    int n_bg = 6;
    int jitter = 1;
    uint64_t seed = 0;  // keys the per-scene proposal streams
};

struct EvalReport {
    std::string split;
    std::string checkpoint_hash;  // hex
    std::map<int, double> per_class_ap;
    double map50 = 0.0;
    uint64_t total_dets = 0, total_gts = 0;
    std::map<int, double> intra_class_sim;
    std::optional<double> intra_class_sim_mean;
    std::optional<double> inter_class_disc;
};

// Proposal features of correctly-labeled foreground proposals (IoU >= 0.5
// with a ground truth of that class), grouped by class.
inline FeaturesByClass collect_fg_features(const DetectorParams& detector,
                                           const std::vector<const Scene*>& scenes,
                                           const EvalSettings& s, int size_min, int size_max) {
    FeaturesByClass out;
    for (const Scene* scene : scenes) {
        auto props = generate_proposals(*scene, s.n_bg, s.jitter, s.seed, size_min, size_max);
        if (props.empty()) continue;
        auto labels = assign_proposal_labels(props, scene->gts);
        Tensor features = extract_proposal_features(detector, *scene, props);
        const size_t d = features.shape()[1];
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0) continue;
            const double* row = features.values().data() + i * d;
            out[labels[i]].emplace_back(row, row + d);
        }
    }
    return out;
}

// Per-class mean feature vectors over a split; prototype population for the
// discriminability metric.
inline std::vector<std::vector<double>> class_mean_prototypes(const FeaturesByClass& feats) {
    std::vector<std::vector<double>> protos;
    for (const auto& [cls, rows] : feats) {
        if (rows.empty()) continue;
        std::vector<double> mean(rows[0].size(), 0.0);
        for (const auto& r : rows)
            for (size_t i = 0; i < r.size(); ++i) mean[i] += r[i];
        for (auto& v : mean) v /= static_cast<double>(rows.size());
        protos.push_back(std::move(mean));
    }
    return protos;
}

// Detection metrics on `split`; mechanism metrics always measure the source
// structure (discriminability over source_train prototypes) and the
// similarity between source_train features and the evaluated split.
inline EvalReport evaluate_detector(const DetectorParams& detector, const Dataset& dataset,
                                    Split split, const EvalSettings& settings) {
    const auto& spec = dataset.manifest.spec;
    EvalReport report;
    report.split = split_name(split);

    std::vector<ImageEval> images;
    for (const Scene* scene : dataset.split(split)) {
        auto props = generate_proposals(*scene, settings.n_bg, settings.jitter, settings.seed,
                                        spec.object_size_min, spec.object_size_max);
        ImageEval ie;
        ie.dets = detect(detector, *scene, props, settings.score_thresh, settings.nms_iou);
        ie.gts = scene->gts;
        report.total_dets += ie.dets.size();
        report.total_gts += ie.gts.size();
        images.push_back(std::move(ie));
    }
    for (int cls = 0; cls < spec.classes; ++cls)
        if (auto ap = ap50(images, cls)) report.per_class_ap[cls] = *ap;
    if (!report.per_class_ap.empty()) report.map50 = map50(report.per_class_ap);

    auto src_feats = collect_fg_features(detector, dataset.split(Split::source_train), settings,
                                         spec.object_size_min, spec.object_size_max);
    auto split_feats = collect_fg_features(detector, dataset.split(split), settings,
                                           spec.object_size_min, spec.object_size_max);
    report.intra_class_sim = cross_domain_intra_class_similarity(src_feats, split_feats);
    if (!report.intra_class_sim.empty()) {
        double acc = 0.0;
        for (const auto& [cls, v] : report.intra_class_sim) acc += v;
        report.intra_class_sim_mean = acc / static_cast<double>(report.intra_class_sim.size());
    }
    auto protos = class_mean_prototypes(src_feats);
    if (protos.size() >= 2) report.inter_class_disc = inter_class_discriminability(protos);
    return report;
}

inline ordered_json report_to_json(const EvalReport& r) {
    ordered_json per_class = ordered_json::object();
    for (const auto& [cls, ap] : r.per_class_ap) per_class[std::to_string(cls)] = ap;
    ordered_json intra = ordered_json::object();
    for (const auto& [cls, v] : r.intra_class_sim) intra[std::to_string(cls)] = v;
    ordered_json j{{"split", r.split},
                   {"checkpoint_hash", r.checkpoint_hash},
                   {"per_class_ap", per_class},
                   {"map50", r.map50},
                   {"total_dets", r.total_dets},
                   {"total_gts", r.total_gts},
                   {"intra_class_sim", intra}};
    j["intra_class_sim_mean"] =
        r.intra_class_sim_mean ? ordered_json(*r.intra_class_sim_mean) : ordered_json(nullptr);
    j["inter_class_disc"] =
        r.inter_class_disc ? ordered_json(*r.inter_class_disc) : ordered_json(nullptr);
    return j;
}

}  // namespace rscn
