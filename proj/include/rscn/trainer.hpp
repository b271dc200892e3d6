#pragma once

// Training loops. Source-only training fits a detector on the labeled
// source split alone; the adaptation loop adds the constraint losses over
// instance-free target batches against a frozen reference's cached
// prototypes. Every random draw is keyed on (seed, stream, qualifiers), so
// the source batch schedule is identical across modes and reruns are
// byte-identical.
//
// RSPC prototype cache format (all integers little-endian):
//   magic "RSPC" (4 bytes)
//   version  u16 (currently 1)
//   feat_dim u16 (d)
//   count    u32 (number of image records)
//   ref_hash u64 (content hash of the producing checkpoint)
//   image records, ascending id:
//     id u32, class_count u16, class ids u16 each,
//     (class_count + 1) vectors of d f64: class prototypes in listed
//     order, background prototype last

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rscn/checkpoint.hpp"
#include "rscn/eval.hpp"
#include "rscn/losses.hpp"
#include "rscn/synthbench.hpp"

namespace rscn {

struct TrainConfig {
    double lr = 5e-4;
    double momentum = 0.0;
    uint32_t batch_source = 2;
    uint32_t batch_target = 2;
    uint32_t iterations = 2500;
    uint64_t seed = 0;
    LossWeights weights;
    int n_bg = 6;
    int jitter = 1;
    uint32_t eval_interval = 500;
    uint16_t disc_hidden = 64;
    uint16_t patch = 8;
    uint16_t feat_dim = 64;
    uint16_t hidden = 128;
    double score_thresh = 0.05;
    double nms_iou = 0.5;

    // two plateaus: base rate, then base*0.1 over the final fifth
    uint32_t decay_boundary() const {
        return iterations - std::max<uint32_t>(1, iterations / 5);
    }
    double lr_at(uint32_t step) const { return step < decay_boundary() ? lr : lr * 0.1; }

    void validate() const {
        if (iterations < 1) throw usage_error("train config: iterations must be >= 1");
        if (!(lr >= 0)) throw usage_error("train config: lr must be nonnegative");
        if (momentum < 0 || momentum >= 1) throw usage_error("train config: momentum in [0,1)");
        if (batch_source < 1 || batch_target < 1)
            throw usage_error("train config: batch sizes must be >= 1");
        if (n_bg < 1) throw usage_error("train config: n_bg must be >= 1");
        if (jitter < 0) throw usage_error("train config: jitter must be >= 0");
        weights.validate();
        if (decay_boundary() >= iterations)
            throw usage_error("train config: decay boundary must precede the end of training");
    }

    EvalSettings eval_settings() const {
        EvalSettings s;
        s.score_thresh = score_thresh;
        s.nms_iou = nms_iou;
        s.n_bg = n_bg;
        s.jitter = jitter;
        s.seed = seed;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Optimizer

struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

// p <- p - lr * g (plain) or with classical momentum v <- mu*v + g,
// p <- p - lr*v. Frozen tensors and tensors without accumulated gradients
// are untouched.
inline void sgd_step(const std::vector<Tensor>& params, double lr, double momentum = 0.0,
                     SgdState* state = nullptr) {
    for (Tensor t : params) {
        if (!t.requires_grad() || !t.has_grad()) continue;
        const auto& g = t.grad();
        for (double v : g)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite gradient in tensor '" + t.name() + "'");
        auto& values = t.values_mut();
        if (momentum > 0.0) {
            if (!state) throw std::invalid_argument("sgd_step: momentum needs optimizer state");
            auto& vel = state->velocity[t.name()];
            if (vel.size() != g.size()) vel.assign(g.size(), 0.0);
            for (size_t i = 0; i < values.size(); ++i) {
                vel[i] = momentum * vel[i] + g[i];
                values[i] -= lr * vel[i];
            }
        } else {
            for (size_t i = 0; i < values.size(); ++i) values[i] -= lr * g[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics log: one JSON object per line, flushed per record.

class MetricsLogger {
  public:
    explicit MetricsLogger(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw usage_error("cannot open metrics log for writing: " + path.string());
    }

    void log(const ordered_json& record) {
        out_ << record.dump() << "\n";
        out_.flush();
        if (!out_) throw std::runtime_error("metrics log write failed");
    }

  private:
    std::ofstream out_;
};

inline ordered_json eval_block(const EvalReport& r) {
    ordered_json per_class = ordered_json::object();
    for (const auto& [cls, ap] : r.per_class_ap) per_class[std::to_string(cls)] = ap;
    ordered_json j{{"map50", r.map50}, {"per_class_ap", per_class}};
    j["intra_class_sim"] =
        r.intra_class_sim_mean ? ordered_json(*r.intra_class_sim_mean) : ordered_json(nullptr);
    j["inter_class_disc"] =
        r.inter_class_disc ? ordered_json(*r.inter_class_disc) : ordered_json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Prototype cache (RSPC)

inline constexpr char kCacheMagic[4] = {'R', 'S', 'P', 'C'};
inline constexpr uint16_t kCacheVersion = 1;

struct CachedPrototypes {
    std::vector<int> classes;                       // ascending
    std::vector<std::vector<double>> class_protos;  // aligned with classes
    std::vector<double> bg_proto;
};

struct PrototypeCache {
    uint16_t feat_dim = 0;
    uint64_t ref_hash = 0;
    std::map<uint32_t, CachedPrototypes> by_id;
};

inline std::string encode_prototype_cache(const PrototypeCache& cache) {
    std::string buf;
    buf.append(kCacheMagic, 4);
    put_u16(buf, kCacheVersion);
    put_u16(buf, cache.feat_dim);
    put_u32(buf, static_cast<uint32_t>(cache.by_id.size()));
    put_u64(buf, cache.ref_hash);
    for (const auto& [id, rec] : cache.by_id) {
        put_u32(buf, id);
        put_u16(buf, static_cast<uint16_t>(rec.classes.size()));
        for (int cls : rec.classes) put_u16(buf, static_cast<uint16_t>(cls));
        for (const auto& proto : rec.class_protos)
            for (double v : proto) put_f64(buf, v);
        for (double v : rec.bg_proto) put_f64(buf, v);
    }
    return buf;
}

inline PrototypeCache decode_prototype_cache(const std::string& data,
                                             const std::string& context) {
    ByteReader r(data, context);
    if (r.get_bytes(4) != std::string(kCacheMagic, 4))
        throw integrity_error(context + ": bad magic, not an RSPC prototype cache");
    const uint16_t version = r.get_u16();
    if (version != kCacheVersion)
        throw integrity_error(context + ": unsupported version " + std::to_string(version));
    PrototypeCache cache;
    cache.feat_dim = r.get_u16();
    const uint32_t count = r.get_u32();
    cache.ref_hash = r.get_u64();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t id = r.get_u32();
        CachedPrototypes rec;
        const uint16_t n_classes = r.get_u16();
        rec.classes.resize(n_classes);
        for (auto& c : rec.classes) c = r.get_u16();
        rec.class_protos.assign(n_classes, std::vector<double>(cache.feat_dim));
        for (auto& proto : rec.class_protos)
            for (auto& v : proto) v = r.get_f64();
        rec.bg_proto.resize(cache.feat_dim);
        for (auto& v : rec.bg_proto) v = r.get_f64();
        cache.by_id[id] = std::move(rec);
    }
    r.expect_end();
    return cache;
}

inline PrototypeCache load_prototype_cache(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw usage_error("prototype cache not found: " + path.string());
    return decode_prototype_cache(read_file(path), path.string());
}

// Runs the frozen reference detector over every source image with a fixed
// cache stream keyed on the dataset seed and stores the prototype vectors.
inline PrototypeCache cache_reference_prototypes(const std::filesystem::path& checkpoint_path,
                                                 const Dataset& dataset,
                                                 const std::filesystem::path& out_path,
                                                 int n_bg = 6, int jitter = 1) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    DetectorParams ref = detector_from_checkpoint(ck, "g", /*requires_grad=*/false);
    ref.frozen = true;

    const auto& spec = dataset.manifest.spec;
    const uint64_t proposal_seed = stream_key(dataset.manifest.seed, "cache");

    PrototypeCache cache;
    cache.feat_dim = ref.cfg.feat_dim;
    cache.ref_hash = ck.content_hash;
    for (const Scene* scene : dataset.split(Split::source_train)) {
        auto props = generate_proposals(*scene, n_bg, jitter, proposal_seed,
                                        spec.object_size_min, spec.object_size_max);
        auto labels = assign_proposal_labels(props, scene->gts);
        if (std::find(labels.begin(), labels.end(), kLabelBackground) == labels.end()) {
            // every random box happened to overlap an object; relabel the
            // least-overlapping proposal so the record keeps a background
            // prototype
            size_t best = 0;
            double best_iou = 2.0;
            for (size_t i = 0; i < props.size(); ++i) {
                double worst = 0.0;
                for (const auto& gt : scene->gts) worst = std::max(worst, iou(props[i], gt.box));
                if (worst < best_iou) {
                    best_iou = worst;
                    best = i;
                }
            }
            labels[best] = kLabelBackground;
        }
        Tensor features = extract_proposal_features(ref, *scene, props);
        auto ps = build_source_prototypes(features, labels, scene->id);
        CachedPrototypes rec;
        rec.classes = ps.classes;
        for (const auto& proto : ps.class_protos) rec.class_protos.push_back(proto.values());
        rec.bg_proto = ps.bg_proto.values();
        cache.by_id[scene->id] = std::move(rec);
    }
    write_file(out_path, encode_prototype_cache(cache));
    return cache;
}

// ---------------------------------------------------------------------------
// Shared loop pieces

namespace detail {

inline std::vector<const Scene*> sample_batch(const std::vector<const Scene*>& pool,
                                              uint32_t count, uint64_t seed, const char* stream,
                                              uint32_t step) {
    RandomStream rs(seed, stream, step);
    std::vector<const Scene*> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i)
        out.push_back(pool[static_cast<size_t>(
            rs.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
    return out;
}

struct SourceForward {
    Tensor logits;
    std::vector<int> labels;
    std::optional<PrototypeSet> protos;
};

}  // namespace detail

struct TrainResult {
    std::filesystem::path checkpoint_path;
    uint64_t checkpoint_hash = 0;
    std::optional<EvalReport> final_eval;
};

// ---------------------------------------------------------------------------
// Source-only training: detection loss alone.

inline TrainResult train_source_only(const TrainConfig& cfg, const Dataset& dataset,
                                     const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    MetricsLogger logger(out_dir / "metrics.jsonl");

    const auto& spec = dataset.manifest.spec;
    DetectorConfig dc{cfg.patch, cfg.feat_dim, cfg.hidden, spec.classes, spec.channels};
    DetectorParams detector = DetectorParams::init(dc, cfg.seed, "g");
    auto params = detector.parameters();
    SgdState opt;

    const auto source = dataset.split(Split::source_train);
    if (source.empty()) throw usage_error("train: dataset has no source_train scenes");

    TrainResult result;
    for (uint32_t step = 0; step < cfg.iterations; ++step) {
        const double lr = cfg.lr_at(step);
        const uint64_t prop_seed = stream_key(cfg.seed, "train-proposals", step);
        auto batch = detail::sample_batch(source, cfg.batch_source, cfg.seed, "batch-source", step);

        Tensor pooled_logits;
        std::vector<int> pooled_labels;
        for (const Scene* scene : batch) {
            auto props = generate_proposals(*scene, cfg.n_bg, cfg.jitter, prop_seed,
                                            spec.object_size_min, spec.object_size_max);
            auto labels = assign_proposal_labels(props, scene->gts);
            Tensor features = extract_proposal_features(detector, *scene, props);
            Tensor logits = classify_proposals(detector, features);
            pooled_logits = pooled_logits.defined() ? concat(pooled_logits, logits) : logits;
            pooled_labels.insert(pooled_labels.end(), labels.begin(), labels.end());
        }
        Tensor loss = total_loss_gr(loss_detection(pooled_logits, pooled_labels));
        loss.backward();
        sgd_step(params, lr, cfg.momentum, &opt);
        for (auto& t : params) t.zero_grad();

        ordered_json rec{{"step", step},
                         {"lr", lr},
                         {"loss_det", loss.value()},
                         {"loss_bpa", 0.0},
                         {"loss_rsh", 0.0},
                         {"loss_ssp", 0.0},
                         {"loss_total", loss.value()}};
        const bool last = step + 1 == cfg.iterations;
        if (last || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0)) {
            EvalReport er =
                evaluate_detector(detector, dataset, Split::target_val, cfg.eval_settings());
            rec["eval"] = eval_block(er);
            if (last) result.final_eval = er;
        }
        logger.log(rec);
    }

    result.checkpoint_path = out_dir / "checkpoint.rsck";
    result.checkpoint_hash = save_checkpoint(result.checkpoint_path, detector);
    return result;
}

// ---------------------------------------------------------------------------
// Adaptation training: detection loss plus the three constraints, the
// reference supplied entirely by the prototype cache.

inline TrainResult train_rscn(const TrainConfig& cfg, const Dataset& dataset,
                              const PrototypeCache& cache,
                              const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    MetricsLogger logger(out_dir / "metrics.jsonl");

    const auto& spec = dataset.manifest.spec;
    const auto source = dataset.split(Split::source_train);
    const auto target = dataset.split(Split::target_train);
    if (source.empty()) throw usage_error("train: dataset has no source_train scenes");
    if (target.empty()) throw usage_error("train: dataset has no target_train scenes");

    const LossWeights& w = cfg.weights;
    const bool need_protos = w.bpa > 0 || w.rsh > 0 || w.ssp > 0;
    const bool need_target = w.bpa > 0 || w.rsh > 0;

    if (w.ssp > 0)
        for (const Scene* scene : source)
            if (!cache.by_id.count(scene->id))
                throw integrity_error("prototype cache is missing source image " +
                                      std::to_string(scene->id));
    if (need_protos && cache.feat_dim != cfg.feat_dim)
        throw integrity_error("prototype cache dimension " + std::to_string(cache.feat_dim) +
                              " does not match feat_dim " + std::to_string(cfg.feat_dim));

    DetectorConfig dc{cfg.patch, cfg.feat_dim, cfg.hidden, spec.classes, spec.channels};
    DetectorParams detector = DetectorParams::init(dc, cfg.seed, "g");
    Discriminator disc = Discriminator::init(cfg.feat_dim, cfg.disc_hidden, cfg.seed, "d_bg");
    std::vector<Tensor> params = detector.parameters();
    for (auto& t : disc.parameters()) params.push_back(t);
    SgdState opt;

    TrainResult result;
    for (uint32_t step = 0; step < cfg.iterations; ++step) {
        const double lr = cfg.lr_at(step);
        const uint64_t prop_seed = stream_key(cfg.seed, "train-proposals", step);
        std::vector<std::string> skipped;

        // source path
        auto src_batch =
            detail::sample_batch(source, cfg.batch_source, cfg.seed, "batch-source", step);
        Tensor pooled_logits;
        std::vector<int> pooled_labels;
        std::vector<detail::SourceForward> forwards;
        for (const Scene* scene : src_batch) {
            auto props = generate_proposals(*scene, cfg.n_bg, cfg.jitter, prop_seed,
                                            spec.object_size_min, spec.object_size_max);
            auto labels = assign_proposal_labels(props, scene->gts);
            Tensor features = extract_proposal_features(detector, *scene, props);
            detail::SourceForward fw;
            fw.logits = classify_proposals(detector, features);
            fw.labels = labels;
            if (need_protos) {
                if (std::find(labels.begin(), labels.end(), kLabelBackground) != labels.end())
                    fw.protos = build_source_prototypes(features, labels, scene->id);
                else
                    skipped.push_back("source_no_bg:" + std::to_string(scene->id));
            }
            pooled_logits =
                pooled_logits.defined() ? concat(pooled_logits, fw.logits) : fw.logits;
            pooled_labels.insert(pooled_labels.end(), labels.begin(), labels.end());
            forwards.push_back(std::move(fw));
        }
        Tensor det = loss_detection(pooled_logits, pooled_labels);

        // target path: instance-free by contract, asserted per batch
        std::vector<Tensor> tgt_bg_protos;
        if (need_target) {
            auto tgt_batch =
                detail::sample_batch(target, cfg.batch_target, cfg.seed, "batch-target", step);
            for (const Scene* scene : tgt_batch) {
                if (!scene->gts.empty())
                    throw std::runtime_error(
                        "instance-free violation: target training scene " +
                        std::to_string(scene->id) + " carries " +
                        std::to_string(scene->gts.size()) + " ground-truth objects");
                auto props = generate_proposals(*scene, cfg.n_bg, cfg.jitter, prop_seed,
                                                spec.object_size_min, spec.object_size_max);
                if (props.empty()) continue;
                Tensor features = extract_proposal_features(detector, *scene, props);
                tgt_bg_protos.push_back(build_target_bg_prototype(features));
            }
        }

        std::vector<const PrototypeSet*> src_protos;
        for (const auto& fw : forwards)
            if (fw.protos) src_protos.push_back(&*fw.protos);

        Tensor bpa = Tensor::scalar(0.0);
        if (w.bpa > 0) {
            if (!src_protos.empty() && !tgt_bg_protos.empty()) {
                std::vector<Tensor> src_bg;
                for (const auto* ps : src_protos) src_bg.push_back(ps->bg_proto);
                bpa = loss_bpa(src_bg, tgt_bg_protos, disc, w.grl_lambda);
            } else {
                skipped.push_back("bpa");
            }
        }

        Tensor rsh = Tensor::scalar(0.0);
        if (w.rsh > 0) {
            // one source image paired with one target image, round-robin
            Tensor acc;
            size_t pairs = 0;
            for (size_t i = 0; i < src_protos.size() && !tgt_bg_protos.empty(); ++i) {
                const auto* ps = src_protos[i];
                if (ps->classes.empty()) continue;
                const Tensor& pt = tgt_bg_protos[i % tgt_bg_protos.size()];
                Tensor term = loss_rsh(*ps, pt);
                acc = pairs == 0 ? term : add(acc, term);
                ++pairs;
            }
            if (pairs > 0)
                rsh = scalar_scale(acc, 1.0 / static_cast<double>(pairs));
            else
                skipped.push_back("rsh");
        }

        Tensor ssp = Tensor::scalar(0.0);
        if (w.ssp > 0) {
            Tensor acc;
            size_t images = 0;
            for (const auto* ps : src_protos) {
                const auto& cached = cache.by_id.at(ps->image_id);
                // restrict both sides to the classes they share
                PrototypeSet live, ref;
                live.image_id = ref.image_id = ps->image_id;
                for (size_t i = 0; i < ps->classes.size(); ++i) {
                    auto it = std::find(cached.classes.begin(), cached.classes.end(),
                                        ps->classes[i]);
                    if (it == cached.classes.end()) continue;
                    const size_t j = static_cast<size_t>(it - cached.classes.begin());
                    live.classes.push_back(ps->classes[i]);
                    live.class_protos.push_back(ps->class_protos[i]);
                    ref.classes.push_back(ps->classes[i]);
                    ref.class_protos.push_back(Tensor::leaf(
                        {cached.class_protos[j].size()}, cached.class_protos[j]));
                }
                live.bg_proto = ps->bg_proto;
                ref.bg_proto = Tensor::leaf({cached.bg_proto.size()}, cached.bg_proto);
                Tensor term = loss_ssp(cosine_matrix(live), cosine_matrix(ref));
                acc = images == 0 ? term : add(acc, term);
                ++images;
            }
            if (images > 0)
                ssp = scalar_scale(acc, 1.0 / static_cast<double>(images));
            else
                skipped.push_back("ssp");
        }

        Tensor total = total_loss_g(det, bpa, rsh, ssp, w);
        total.backward();
        sgd_step(params, lr, cfg.momentum, &opt);
        for (auto& t : params) t.zero_grad();

        ordered_json rec{{"step", step},
                         {"lr", lr},
                         {"loss_det", det.value()},
                         {"loss_bpa", bpa.value()},
                         {"loss_rsh", rsh.value()},
                         {"loss_ssp", ssp.value()},
                         {"loss_total", total.value()}};
        if (!skipped.empty()) rec["skipped"] = skipped;
        const bool last = step + 1 == cfg.iterations;
        if (last || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0)) {
            EvalReport er =
                evaluate_detector(detector, dataset, Split::target_val, cfg.eval_settings());
            rec["eval"] = eval_block(er);
            if (last) result.final_eval = er;
        }
        logger.log(rec);
    }

    result.checkpoint_path = out_dir / "checkpoint.rsck";
    result.checkpoint_hash = save_checkpoint(result.checkpoint_path, detector, &disc);
    return result;
}

}  // namespace rscn
