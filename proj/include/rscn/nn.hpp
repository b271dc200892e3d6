#pragma once

// Linear layers and small MLPs on top of the tensor engine. Parameters are
// named leaf tensors; initialization is drawn from a stream keyed on
// (seed, "init", tensor name) so the draw never depends on construction
// order or on which other models exist in the process.

#include <string>
#include <vector>

#include "rscn/rng.hpp"
#include "rscn/tensor.hpp"

namespace rscn {

struct LinearLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    size_t in_dim() const { return weight.shape()[0]; }
    size_t out_dim() const { return weight.shape()[1]; }
};

namespace detail {

inline std::vector<double> init_values(uint64_t seed, const std::string& name, size_t count,
                                       double bound) {
    RandomStream rs(seed, "init", fnv1a(name));
    std::vector<double> v(count);
    for (auto& x : v) x = rs.uniform(-bound, bound);
    return v;
}

}  // namespace detail

// Weights uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)] (variance-preserving
// under relu chains), biases uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)].
// Plain SGD at the small default rate stalls on attenuated activations, so
// the weight bound carries the relu gain.
inline LinearLayer make_linear(size_t in, size_t out, uint64_t seed, const std::string& name,
                               bool requires_grad = true) {
    LinearLayer l;
    const double wb = std::sqrt(6.0 / static_cast<double>(in));
    const double bb = std::sqrt(1.0 / static_cast<double>(in));
    l.weight = Tensor::leaf({in, out}, detail::init_values(seed, name + ".weight", in * out, wb),
                            requires_grad, name + ".weight");
    l.bias = Tensor::leaf({out}, detail::init_values(seed, name + ".bias", out, bb),
                          requires_grad, name + ".bias");
    return l;
}

// x [n, in] through the chain; relu between layers, none after the last.
inline Tensor mlp_forward(const std::vector<LinearLayer>& layers, Tensor x) {
    if (layers.empty()) throw std::invalid_argument("mlp_forward: no layers");
    if (x.shape().size() != 2)
        throw std::invalid_argument("mlp_forward: expected rank-2 input, got " +
                                    shape_str(x.shape()));
    for (size_t i = 0; i < layers.size(); ++i) {
        if (x.shape()[1] != layers[i].in_dim())
            throw_shape_mismatch(Op::matmul, x.shape(), layers[i].weight.shape());
        x = add_bias(matmul(x, layers[i].weight), layers[i].bias);
        if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
}

// Background-prototype domain discriminator: a three-layer MLP mapping a
// d-dimensional prototype to a single domain logit.
struct Discriminator {
    std::vector<LinearLayer> layers;

    static Discriminator init(size_t in_dim, size_t hidden, uint64_t seed,
                              const std::string& prefix = "d_bg") {
        Discriminator d;
        d.layers.push_back(make_linear(in_dim, hidden, seed, prefix + ".0"));
        d.layers.push_back(make_linear(hidden, hidden, seed, prefix + ".1"));
        d.layers.push_back(make_linear(hidden, 1, seed, prefix + ".2"));
        return d;
    }

    size_t in_dim() const { return layers.front().in_dim(); }

    // prototype [d] -> scalar logit
    Tensor logit(const Tensor& proto) const {
        if (proto.shape().size() != 1 || proto.shape()[0] != in_dim())
            throw std::invalid_argument("discriminator: expected [" + std::to_string(in_dim()) +
                                        "] prototype, got " + shape_str(proto.shape()));
        Tensor out = mlp_forward(layers, reshape(proto, {1, proto.shape()[0]}));
        return reshape(out, {});
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        for (const auto& l : layers) {
            ps.push_back(l.weight);
            ps.push_back(l.bias);
        }
        return ps;
    }

    void freeze() {
        for (auto& t : parameters()) t.set_requires_grad(false);
    }
};

}  // namespace rscn
