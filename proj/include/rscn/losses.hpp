#pragma once

// Training objectives. The reference detector trains on the detection loss
// alone; the adapting detector adds background-prototype alignment through
// a gradient reversal layer, relative-geometry consistency against the
// source foreground anchors, and structure preservation against a frozen
// reference's similarity matrix.

#include <vector>

#include "rscn/nn.hpp"
#include "rscn/prototypes.hpp"
#include "rscn/tensor.hpp"

namespace rscn {

struct LossWeights {
    double det = 1.0;
    double bpa = 1.0;
    double rsh = 1.0;
    double ssp = 1.0;
    double grl_lambda = 1.0;

    void validate() const {
        for (double w : {det, bpa, rsh, ssp, grl_lambda})
            if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
    }
};

inline Tensor abs_scalar(const Tensor& x) { return add(relu(x), relu(scalar_scale(x, -1.0))); }

// Mean softmax cross-entropy over the non-ignored rows. Labels follow the
// proposal-label convention: class index, kLabelBackground maps to the last
// logit column, kLabelIgnore rows are excluded.
inline Tensor loss_detection(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2)
        throw std::invalid_argument("loss_detection: expected [n,K+1] logits");
    if (labels.size() != logits.shape()[0])
        throw std::invalid_argument("loss_detection: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(logits.shape()[0]) + " rows");
    const size_t k1 = logits.shape()[1];
    Tensor acc;
    size_t used = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kLabelIgnore) continue;
        const size_t target =
            labels[i] == kLabelBackground ? k1 - 1 : static_cast<size_t>(labels[i]);
        Tensor ce = softmax_cross_entropy(row(logits, i), target);
        acc = used == 0 ? ce : add(acc, ce);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("loss_detection: all proposals ignored");
    return scalar_scale(acc, 1.0 / static_cast<double>(used));
}

// Background prototype alignment: every prototype passes the gradient
// reversal layer, then the discriminator; source prototypes carry domain
// label 1, target prototypes 0. The discriminator descends on this loss
// while the feature path receives the reversed gradient and ascends.
// Expectations are estimated by per-side batch means.
inline Tensor loss_bpa(const std::vector<Tensor>& src_bg_protos,
                       const std::vector<Tensor>& tgt_bg_protos, const Discriminator& disc,
                       double lambda) {
    if (src_bg_protos.empty() || tgt_bg_protos.empty())
        throw std::invalid_argument("loss_bpa: need at least one prototype per domain");
    auto side = [&](const std::vector<Tensor>& protos, int domain_label) {
        Tensor acc;
        for (size_t i = 0; i < protos.size(); ++i) {
            Tensor term = bce_with_logits(disc.logit(grad_reverse(protos[i], lambda)),
                                           domain_label);
            acc = i == 0 ? term : add(acc, term);
        }
        return scalar_scale(acc, 1.0 / static_cast<double>(protos.size()));
    };
    return add(side(src_bg_protos, 1), side(tgt_bg_protos, 0));
}

inline Tensor loss_bpa(const Tensor& p_bg_s, const Tensor& p_bg_t, const Discriminator& disc,
                       double lambda) {
    return loss_bpa(std::vector<Tensor>{p_bg_s}, std::vector<Tensor>{p_bg_t}, disc, lambda);
}

inline constexpr double kRshSkipNorm = 1e-9;

namespace detail {

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace detail

// Relative space harmonization: for every present class, the L1 distance
// between the unit-normalized vectors from each background prototype to the
// class anchor. Classes whose relative vector is numerically zero on either
// side are skipped.
inline Tensor loss_rsh(const PrototypeSet& ps_source, const Tensor& p_bg_t) {
    if (ps_source.classes.empty())
        throw std::invalid_argument("loss_rsh: no foreground classes present");
    Tensor acc;
    bool any = false;
    for (size_t i = 0; i < ps_source.classes.size(); ++i) {
        Tensor ds = sub(ps_source.class_protos[i], ps_source.bg_proto);
        Tensor dt = sub(ps_source.class_protos[i], p_bg_t);
        if (detail::vec_norm(ds.values()) < kRshSkipNorm ||
            detail::vec_norm(dt.values()) < kRshSkipNorm)
            continue;
        Tensor term = l1_distance(l2_normalize(ds), l2_normalize(dt));
        acc = any ? add(acc, term) : term;
        any = true;
    }
    return any ? acc : Tensor::scalar(0.0);
}

// Source structure preservation: entrywise L1 over the off-diagonal of the
// two similarity matrices, ordered pairs counted individually. Gradients
// flow only into entries that are graph nodes; the reference matrix is
// built from cached constants.
inline Tensor loss_ssp(const SimilarityMatrix& m_s, const SimilarityMatrix& m_r) {
    if (m_s.classes != m_r.classes)
        throw std::invalid_argument("loss_ssp: similarity matrices cover different class lists");
    const size_t n = m_s.size();
    Tensor acc;
    bool any = false;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            Tensor term = abs_scalar(sub(m_s.at(i, j), m_r.at(i, j)));
            acc = any ? add(acc, term) : term;
            any = true;
        }
    return any ? acc : Tensor::scalar(0.0);
}

inline Tensor total_loss_g(const Tensor& det, const Tensor& bpa, const Tensor& rsh,
                           const Tensor& ssp, const LossWeights& w) {
    w.validate();
    Tensor total = scalar_scale(det, w.det);
    total = add(total, scalar_scale(bpa, w.bpa));
    total = add(total, scalar_scale(rsh, w.rsh));
    total = add(total, scalar_scale(ssp, w.ssp));
    return total;
}

inline Tensor total_loss_gr(const Tensor& det) { return det; }

}  // namespace rscn
