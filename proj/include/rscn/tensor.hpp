#pragma once

// Reverse-mode automatic differentiation over dense row-major double
// tensors. Ops build an eager tape: each result node stores its values, an
// op tag, links to its parents and a backward closure. backward() walks the
// tape once in reverse topological order and accumulates gradients into
// every reachable leaf that requires them. Graphs are acyclic by
// construction and freed when the last handle goes out of scope; parameter
// leaves outlive the per-step graphs they feed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rscn {

using Shape = std::vector<size_t>;

enum class Op {
    leaf,
    add,
    sub,
    mul,
    matmul,
    relu,
    sigmoid,
    mean,
    sum,
    concat,
    slice,
    scalar_scale,
    add_bias,
    reshape,
    grad_reverse,
    l2_normalize,
    cosine_similarity,
    bce_with_logits,
    softmax_cross_entropy,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::matmul: return "matmul";
        case Op::relu: return "relu";
        case Op::sigmoid: return "sigmoid";
        case Op::mean: return "mean";
        case Op::sum: return "sum";
        case Op::concat: return "concat";
        case Op::slice: return "slice";
        case Op::scalar_scale: return "scalar_scale";
        case Op::add_bias: return "add_bias";
        case Op::reshape: return "reshape";
        case Op::grad_reverse: return "grad_reverse";
        case Op::l2_normalize: return "l2_normalize";
        case Op::cosine_similarity: return "cosine_similarity";
        case Op::bce_with_logits: return "bce_with_logits";
        case Op::softmax_cross_entropy: return "softmax_cross_entropy";
    }
    return "?";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same extent as values
    bool requires_grad = false;
    Op op = Op::leaf;
    std::string name;  // parameters and named leaves only
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    size_t numel() const { return values.size(); }
    bool is_scalar() const { return shape.empty(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false,
                       std::string name = {}) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("leaf: " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        n->name = std::move(name);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return leaf({}, {v}); }

    static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {}) {
        std::vector<double> v(shape_numel(shape), 0.0);
        return leaf(std::move(shape), std::move(v), requires_grad, std::move(name));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->numel(); }
    bool is_scalar() const { return node_->is_scalar(); }

    double value() const {
        if (!is_scalar()) throw std::invalid_argument("value: tensor is not scalar");
        return node_->values[0];
    }
    const std::vector<double>& values() const { return node_->values; }
    // In-place mutation of leaf storage; used by the optimizer and by
    // finite-difference probes. Invalidates nothing: graphs are rebuilt
    // each step.
    std::vector<double>& values_mut() {
        if (node_->op != Op::leaf)
            throw std::invalid_argument("values_mut: only leaf tensors may be mutated");
        return node_->values;
    }

    bool has_grad() const { return node_->grad.size() == node_->values.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::runtime_error("grad: no gradient accumulated");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) {
        if (node_->op != Op::leaf)
            throw std::invalid_argument("set_requires_grad: only valid on leaf tensors");
        node_->requires_grad = rg;
    }

    const std::string& name() const { return node_->name; }
    Op op() const { return node_->op; }
    size_t num_parents() const { return node_->parents.size(); }
    Tensor parent(size_t i) const { return Tensor(node_->parents.at(i)); }

    // Fills grad slots of every reachable leaf with requires_grad set.
    // Repeated calls accumulate into leaf grads; intermediate grads are
    // reset at the start of each call.
    void backward() const;

    detail::Node* raw() const { return node_.get(); }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Op op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward_fn);
};

inline Tensor make_op(Op op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = op;
    for (const auto& p : parents) {
        n->parents.push_back(p.node_);
        n->requires_grad = n->requires_grad || p.requires_grad();
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(std::move(n));
}

[[noreturn]] inline void throw_shape_mismatch(Op op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Elementwise primitives

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw_shape_mismatch(Op::add, a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op(Op::add, a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw_shape_mismatch(Op::sub, a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_op(Op::sub, a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw_shape_mismatch(Op::mul, a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_op(Op::mul, a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.values[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.values[i];
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    return make_op(Op::relu, x.shape(), std::move(out), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.values[i] > 0.0) p.grad[i] += n.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_op(Op::sigmoid, x.shape(), std::move(out), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.values[i];
            p.grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor scalar_scale(const Tensor& x, double c) {
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.values()[i];
    return make_op(Op::scalar_scale, x.shape(), std::move(out), {x}, [c](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_op(Op::sum, {}, {acc}, {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
    });
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    return make_op(Op::mean, {}, {acc * inv}, {x}, [inv](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// Structure: matmul, concat, slice, bias broadcast, reshape

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw_shape_mismatch(Op::matmul, a.shape(), b.shape());
    const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = bv + p * n;
            double* orow = out.data() + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    return make_op(Op::matmul, {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        const double* g = nd.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();  // gA = g . B^T
            const double* bv = pb.values.data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    const double* brow = bv + j;  // column j of B laid out with stride n
                    double* garow = pa.grad.data() + i * k;
                    for (size_t p = 0; p < k; ++p) garow[p] += gij * brow[p * n];
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();  // gB = A^T . g
            const double* av = pa.values.data();
            for (size_t p = 0; p < k; ++p)
                for (size_t i = 0; i < m; ++i) {
                    const double aip = av[i * k + p];
                    const double* grow = g + i * n;
                    double* gbrow = pb.grad.data() + p * n;
                    for (size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
        }
    });
}

// Concatenation along the first axis; trailing extents must agree.
inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != b.shape().size() || a.shape().empty())
        throw_shape_mismatch(Op::concat, a.shape(), b.shape());
    for (size_t i = 1; i < a.shape().size(); ++i)
        if (a.shape()[i] != b.shape()[i]) throw_shape_mismatch(Op::concat, a.shape(), b.shape());
    Shape out_shape = a.shape();
    out_shape[0] += b.shape()[0];
    std::vector<double> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const size_t na = a.numel();
    return make_op(Op::concat, std::move(out_shape), std::move(out), {a, b},
                   [na](detail::Node& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (size_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (size_t i = 0; i < pb.grad.size(); ++i)
                               pb.grad[i] += n.grad[na + i];
                       }
                   });
}

// Rows [begin, end) along the first axis.
inline Tensor slice(const Tensor& x, size_t begin, size_t end) {
    if (x.shape().empty() || begin >= end || end > x.shape()[0])
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") invalid for " +
                                    shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = end - begin;
    const size_t row = x.numel() / x.shape()[0];
    std::vector<double> out(x.values().begin() + begin * row, x.values().begin() + end * row);
    return make_op(Op::slice, std::move(out_shape), std::move(out), {x},
                   [begin, row](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[begin * row + i] += n.grad[i];
                   });
}

// X [n, m] + row vector b [m], broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || x.shape()[1] != b.shape()[0])
        throw_shape_mismatch(Op::add_bias, x.shape(), b.shape());
    const size_t n = x.shape()[0], m = x.shape()[1];
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] = x.values()[i * m + j] + b.values()[j];
    return make_op(Op::add_bias, x.shape(), std::move(out), {x, b}, [n, m](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) pb.grad[j] += nd.grad[i * m + j];
        }
    });
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw_shape_mismatch(Op::reshape, x.shape(), new_shape);
    return make_op(Op::reshape, std::move(new_shape), x.values(), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Gradient reversal: identity forward, upstream gradient scaled by -lambda.

inline Tensor grad_reverse(const Tensor& x, double lambda) {
    if (!(lambda >= 0.0))
        throw std::invalid_argument("grad_reverse: lambda must be nonnegative, got " +
                                    std::to_string(lambda));
    return make_op(Op::grad_reverse, x.shape(), x.values(), {x}, [lambda](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += -lambda * n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Normalization and similarity

inline constexpr double kNormEps = 1e-12;

inline Tensor l2_normalize(const Tensor& x) {
    if (x.shape().size() != 1)
        throw std::invalid_argument("l2_normalize: expected rank-1 tensor, got " +
                                    shape_str(x.shape()));
    double sq = 0.0;
    for (double v : x.values()) sq += v * v;
    const double norm = std::max(std::sqrt(sq), kNormEps);
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] / norm;
    const bool clamped = std::sqrt(sq) <= kNormEps;
    return make_op(Op::l2_normalize, x.shape(), std::move(out), {x},
                   [norm, clamped](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       if (clamped) {
                           // Inside the eps ball the map is x / eps, a fixed scaling.
                           for (size_t i = 0; i < n.grad.size(); ++i)
                               p.grad[i] += n.grad[i] / norm;
                           return;
                       }
                       double gy = 0.0;  // <grad, y>
                       for (size_t i = 0; i < n.grad.size(); ++i) gy += n.grad[i] * n.values[i];
                       for (size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += (n.grad[i] - n.values[i] * gy) / norm;
                   });
}

inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 1 || a.shape() != b.shape())
        throw_shape_mismatch(Op::cosine_similarity, a.shape(), b.shape());
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += a.values()[i] * b.values()[i];
        sa += a.values()[i] * a.values()[i];
        sb += b.values()[i] * b.values()[i];
    }
    const double na = std::max(std::sqrt(sa), kNormEps);
    const double nb = std::max(std::sqrt(sb), kNormEps);
    const bool ca = std::sqrt(sa) <= kNormEps, cb = std::sqrt(sb) <= kNormEps;
    const double cos = dot / (na * nb);
    return make_op(Op::cosine_similarity, {}, {cos}, {a, b},
                   [na, nb, ca, cb, cos](detail::Node& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       const double g = n.grad[0];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (size_t i = 0; i < pa.grad.size(); ++i) {
                               double d = pb.values[i] / (na * nb);
                               if (!ca) d -= cos * pa.values[i] / (na * na);
                               pa.grad[i] += g * d;
                           }
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (size_t i = 0; i < pb.grad.size(); ++i) {
                               double d = pa.values[i] / (na * nb);
                               if (!cb) d -= cos * pb.values[i] / (nb * nb);
                               pb.grad[i] += g * d;
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// Classification losses

// Numerically stable binary cross-entropy on a single logit:
// max(z,0) - z*t + log(1 + exp(-|z|)).
inline Tensor bce_with_logits(const Tensor& logit, int target) {
    if (!logit.is_scalar())
        throw std::invalid_argument("bce_with_logits: logit must be scalar, got " +
                                    shape_str(logit.shape()));
    if (target != 0 && target != 1)
        throw std::invalid_argument("bce_with_logits: target must be 0 or 1, got " +
                                    std::to_string(target));
    const double z = logit.value();
    const double loss = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
    return make_op(Op::bce_with_logits, {}, {loss}, {logit}, [z, target](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        p.grad[0] += n.grad[0] * (sig - target);
    });
}

// -log softmax(logits)[label], stable under max shift.
inline Tensor softmax_cross_entropy(const Tensor& logits, size_t label) {
    if (logits.shape().size() != 1)
        throw std::invalid_argument("softmax_cross_entropy: expected rank-1 logits, got " +
                                    shape_str(logits.shape()));
    const size_t k = logits.shape()[0];
    if (label >= k)
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(k) + " classes");
    const auto& z = logits.values();
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double loss = std::log(denom) - (z[label] - zmax);
    std::vector<double> softmax(k);
    for (size_t i = 0; i < k; ++i) softmax[i] = std::exp(z[i] - zmax) / denom;
    return make_op(Op::softmax_cross_entropy, {}, {loss}, {logits},
                   [softmax = std::move(softmax), label](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (size_t i = 0; i < p.grad.size(); ++i)
                           p.grad[i] += n.grad[0] * (softmax[i] - (i == label ? 1.0 : 0.0));
                   });
}

// ---------------------------------------------------------------------------
// Generic entry for the uniform-arity primitives. Parameterized primitives
// (slice bounds, scale factors, loss targets) use their named constructors.

inline Tensor apply_primitive(Op op, const std::vector<Tensor>& inputs) {
    auto need = [&](size_t n) {
        if (inputs.size() != n)
            throw std::invalid_argument(std::string(op_name(op)) + ": expected " +
                                        std::to_string(n) + " inputs, got " +
                                        std::to_string(inputs.size()));
    };
    switch (op) {
        case Op::add: need(2); return add(inputs[0], inputs[1]);
        case Op::sub: need(2); return sub(inputs[0], inputs[1]);
        case Op::mul: need(2); return mul(inputs[0], inputs[1]);
        case Op::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case Op::concat: need(2); return concat(inputs[0], inputs[1]);
        case Op::add_bias: need(2); return add_bias(inputs[0], inputs[1]);
        case Op::cosine_similarity: need(2); return cosine_similarity(inputs[0], inputs[1]);
        case Op::relu: need(1); return relu(inputs[0]);
        case Op::sigmoid: need(1); return sigmoid(inputs[0]);
        case Op::mean: need(1); return mean(inputs[0]);
        case Op::sum: need(1); return sum(inputs[0]);
        case Op::l2_normalize: need(1); return l2_normalize(inputs[0]);
        default:
            throw std::invalid_argument(std::string(op_name(op)) +
                                        ": not constructible through apply_primitive");
    }
}

// ---------------------------------------------------------------------------
// Composites used across the losses

// |a - b| summed, built from catalog primitives; subgradient 0 at kinks.
inline Tensor l1_distance(const Tensor& a, const Tensor& b) {
    const Tensor d = sub(a, b);
    return sum(add(relu(d), relu(scalar_scale(d, -1.0))));
}

// Mean of rows idx of matrix x, returned as a rank-1 vector. Each selected
// row receives gradient 1/|idx|.
inline Tensor rows_mean(const Tensor& x, const std::vector<size_t>& idx) {
    if (x.shape().size() != 2) throw std::invalid_argument("rows_mean: expected rank-2 tensor");
    if (idx.empty()) throw std::invalid_argument("rows_mean: empty row set");
    Tensor acc = slice(x, idx[0], idx[0] + 1);
    for (size_t i = 1; i < idx.size(); ++i) acc = add(acc, slice(x, idx[i], idx[i] + 1));
    acc = scalar_scale(acc, 1.0 / static_cast<double>(idx.size()));
    return reshape(acc, {x.shape()[1]});
}

inline Tensor row(const Tensor& x, size_t i) {
    if (x.shape().size() != 2) throw std::invalid_argument("row: expected rank-2 tensor");
    return reshape(slice(x, i, i + 1), {x.shape()[1]});
}

// ---------------------------------------------------------------------------

inline void Tensor::backward() const {
    if (!is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;  // nothing reachable requires grad

    // Iterative post-order over requires-grad nodes; each visited once.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        bool descended = false;
        while (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            topo.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    // Fresh intermediate grads per pass; leaves accumulate across passes.
    for (detail::Node* n : topo) {
        if (n->op == Op::leaf)
            n->ensure_grad();
        else
            n->grad.assign(n->values.size(), 0.0);
    }
    node_->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace rscn
