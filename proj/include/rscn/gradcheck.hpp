#pragma once

// Finite-difference verification suite covering every primitive and every
// training loss. Reverse-mode gradients must match central differences at
// the configured tolerance; the reversal layer is checked against its
// dual-graph contract instead, since its backward deliberately disagrees
// with the forward slope.

#include <chrono>
#include <functional>
#include <iomanip>
#include <ostream>

#include "rscn/fdcheck.hpp"
#include "rscn/losses.hpp"
#include "rscn/rng.hpp"

namespace rscn {

struct GradcheckOptions {
    uint64_t seed = 0;
    int trials = 100;
    double tol = 1e-4;
    // test hook: swaps the reversal layer for a sign-flipped one inside the
    // contract check, which the suite must catch
    bool inject_grl_sign_bug = false;
};

struct GradcheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    bool all_pass = true;
    double seconds = 0.0;
};

namespace gradcheck_detail {

inline std::vector<double> rand_vec(RandomStream& rs, size_t n, double lo = -2.0,
                                    double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rs.uniform(lo, hi);
    return v;
}

// keeps |x| away from the relu kink so the finite-difference probe never
// crosses it
inline void clear_kinks(std::vector<double>& v, double margin = 1e-3) {
    for (auto& x : v)
        if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
}

}  // namespace gradcheck_detail

inline GradcheckReport run_gradcheck(const GradcheckOptions& opts = {}) {
    using gradcheck_detail::clear_kinks;
    using gradcheck_detail::rand_vec;

    const auto t0 = std::chrono::steady_clock::now();
    GradcheckReport report;

    auto run_fd_check = [&](const std::string& name,
                            const std::function<void(RandomStream&, std::vector<Tensor>&,
                                                     std::function<Tensor()>&,
                                                     std::vector<double>&)>& setup) {
        GradcheckEntry entry{name, 0.0, true};
        for (int trial = 0; trial < opts.trials; ++trial) {
            RandomStream rs(opts.seed, "gradcheck", fnv1a(name), static_cast<uint64_t>(trial));
            std::vector<Tensor> leaves;
            std::function<Tensor()> build;
            std::vector<double> scales;  // one per leaf; empty means all 1
            setup(rs, leaves, build, scales);
            build().backward();
            for (size_t li = 0; li < leaves.size(); ++li) {
                const double scale = scales.empty() ? 1.0 : scales[li];
                auto fd = fd_gradient(build, leaves[li]);
                const auto& got = leaves[li].grad();
                for (size_t i = 0; i < fd.size(); ++i)
                    entry.max_rel_err =
                        std::max(entry.max_rel_err, rel_err(got[i], scale * fd[i]));
            }
        }
        entry.pass = entry.max_rel_err < opts.tol;
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(entry);
    };

    auto leaf = [](Shape s, std::vector<double> v) {
        return Tensor::leaf(std::move(s), std::move(v), true);
    };

    // --- primitive catalog -------------------------------------------------
    run_fd_check("add", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6)), leaf({2, 3}, rand_vec(rs, 6))};
        build = [=] { return sum(mul(add(leaves[0], leaves[1]), add(leaves[0], leaves[1]))); };
    });
    run_fd_check("sub", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6)), leaf({2, 3}, rand_vec(rs, 6))};
        build = [=] { return sum(mul(sub(leaves[0], leaves[1]), sub(leaves[0], leaves[1]))); };
    });
    run_fd_check("mul", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6)), leaf({2, 3}, rand_vec(rs, 6))};
        build = [=] { return sum(mul(leaves[0], leaves[1])); };
    });
    run_fd_check("matmul", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({3, 4}, rand_vec(rs, 12)), leaf({4, 2}, rand_vec(rs, 8))};
        build = [=] {
            Tensor c = matmul(leaves[0], leaves[1]);
            return sum(mul(c, c));
        };
    });
    run_fd_check("relu", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        auto v = rand_vec(rs, 6);
        clear_kinks(v);
        leaves = {leaf({6}, v)};
        build = [=] { return sum(mul(relu(leaves[0]), relu(leaves[0]))); };
    });
    run_fd_check("sigmoid", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6, -4, 4))};
        build = [=] { return mean(sigmoid(leaves[0])); };
    });
    run_fd_check("mean", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({5}, rand_vec(rs, 5))};
        build = [=] { return mean(mul(leaves[0], leaves[0])); };
    });
    run_fd_check("sum", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({5}, rand_vec(rs, 5))};
        build = [=] { return sum(mul(leaves[0], leaves[0])); };
    });
    run_fd_check("concat", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6)), leaf({1, 3}, rand_vec(rs, 3))};
        build = [=] {
            Tensor c = concat(leaves[0], leaves[1]);
            return sum(mul(c, c));
        };
    });
    run_fd_check("slice", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({4, 3}, rand_vec(rs, 12))};
        build = [=] {
            Tensor s = slice(leaves[0], 1, 3);
            return sum(mul(s, s));
        };
    });
    run_fd_check("scalar_scale", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6))};
        build = [=] { return sum(scalar_scale(mul(leaves[0], leaves[0]), -1.5)); };
    });
    run_fd_check("add_bias", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({3, 4}, rand_vec(rs, 12)), leaf({4}, rand_vec(rs, 4))};
        build = [=] {
            Tensor c = add_bias(leaves[0], leaves[1]);
            return sum(mul(c, c));
        };
    });
    run_fd_check("reshape", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({2, 3}, rand_vec(rs, 6))};
        build = [=] {
            Tensor r = reshape(leaves[0], {6});
            return sum(mul(r, r));
        };
    });
    run_fd_check("l2_normalize", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        auto v = rand_vec(rs, 5);
        v[0] += v[0] >= 0 ? 0.5 : -0.5;  // keep the norm well away from zero
        leaves = {leaf({5}, v), leaf({5}, rand_vec(rs, 5))};
        build = [=] { return sum(mul(l2_normalize(leaves[0]), leaves[1])); };
    });
    run_fd_check("cosine_similarity", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        auto a = rand_vec(rs, 5), b = rand_vec(rs, 5);
        a[0] += a[0] >= 0 ? 0.5 : -0.5;
        b[0] += b[0] >= 0 ? 0.5 : -0.5;
        leaves = {leaf({5}, a), leaf({5}, b)};
        build = [=] { return cosine_similarity(leaves[0], leaves[1]); };
    });
    run_fd_check("bce_with_logits", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        leaves = {leaf({}, rand_vec(rs, 1, -4, 4))};
        const int target = rs.uniform_int(0, 1) ? 1 : 0;
        build = [=] { return bce_with_logits(leaves[0], target); };
    });
    run_fd_check("softmax_cross_entropy", [&](RandomStream& rs, auto& leaves, auto& build,
                                              auto&) {
        leaves = {leaf({4}, rand_vec(rs, 4, -3, 3))};
        const size_t label = static_cast<size_t>(rs.uniform_int(0, 3));
        build = [=] { return softmax_cross_entropy(leaves[0], label); };
    });
    run_fd_check("mlp_forward", [&](RandomStream& rs, auto& leaves, auto& build, auto&) {
        // weights and input drawn, then preactivations nudged off the kink
        // by re-drawing the input
        std::vector<LinearLayer> net;
        net.push_back({leaf({4, 5}, rand_vec(rs, 20, -0.8, 0.8)),
                       leaf({5}, rand_vec(rs, 5, -0.5, 0.5))});
        net.push_back({leaf({5, 3}, rand_vec(rs, 15, -0.8, 0.8)),
                       leaf({3}, rand_vec(rs, 3, -0.5, 0.5))});
        Tensor x = Tensor::leaf({2, 4}, rand_vec(rs, 8));
        for (int attempt = 0; attempt < 64; ++attempt) {
            Tensor pre = add_bias(matmul(x, net[0].weight), net[0].bias);
            bool clear = true;
            for (double v : pre.values())
                if (std::abs(v) < 1e-3) clear = false;
            if (clear) break;
            x = Tensor::leaf({2, 4}, rand_vec(rs, 8));
        }
        leaves = {net[0].weight, net[0].bias, net[1].weight, net[1].bias};
        build = [net, x] { return mean(mul(mlp_forward(net, x), mlp_forward(net, x))); };
    });

    // --- reversal layer contract -------------------------------------------
    {
        GradcheckEntry entry{"grad_reverse", 0.0, true};
        for (int trial = 0; trial < opts.trials && entry.pass; ++trial) {
            RandomStream rs(opts.seed, "gradcheck", fnv1a("grad_reverse"),
                            static_cast<uint64_t>(trial));
            auto xv = rand_vec(rs, 6);
            auto wv = rand_vec(rs, 6);
            const double lambda = std::vector<double>{0.0, 0.5, 1.0}[trial % 3];
            Tensor w = Tensor::leaf({6}, wv);

            Tensor xa = Tensor::leaf({6}, xv, true);
            Tensor reversed = opts.inject_grl_sign_bug
                                  ? grad_reverse(grad_reverse(xa, lambda), 1.0)
                                  : grad_reverse(xa, lambda);
            if (reversed.values() != xv) {  // forward must be bit-identical
                entry.pass = false;
                entry.max_rel_err = 1.0;
                break;
            }
            sum(mul(reversed, w)).backward();

            Tensor xb = Tensor::leaf({6}, xv, true);
            sum(mul(xb, w)).backward();

            for (size_t i = 0; i < 6; ++i) {
                const double want = -lambda * xb.grad()[i];
                if (xa.grad()[i] != want) {
                    entry.max_rel_err = std::max(entry.max_rel_err,
                                                 rel_err(xa.grad()[i], want));
                    entry.pass = entry.max_rel_err < opts.tol;
                }
            }
        }
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(entry);
    }

    // --- losses, end to end from the loss to the extractor parameters ------
    struct LossRig {
        std::vector<LinearLayer> extractor;
        LinearLayer head;
        Discriminator disc;
        Tensor src_in, tgt_in;
        std::vector<int> labels;
        SimilarityMatrix m_r;
    };
    auto make_rig = [&](RandomStream& rs) {
        LossRig rig;
        const uint64_t rig_seed = rs.next_u64();
        rig.extractor.push_back(make_linear(6, 8, rig_seed, "gc.0"));
        rig.extractor.push_back(make_linear(8, 8, rig_seed, "gc.1"));
        rig.extractor.push_back(make_linear(8, 4, rig_seed, "gc.2"));
        rig.head = make_linear(4, 3, rig_seed, "gc.head");
        rig.disc = Discriminator::init(4, 5, rig_seed, "gc.d");
        auto draw_clear = [&](size_t n) {
            std::vector<double> v;
            for (int attempt = 0; attempt < 64; ++attempt) {
                v = rand_vec(rs, n * 6, -1, 1);
                Tensor pre = add_bias(matmul(Tensor::leaf({n, 6}, v), rig.extractor[0].weight),
                                      rig.extractor[0].bias);
                bool clear = true;
                for (double p : pre.values())
                    if (std::abs(p) < 2e-3) clear = false;
                if (clear) break;
            }
            return v;
        };
        rig.src_in = Tensor::leaf({5, 6}, draw_clear(5));
        rig.tgt_in = Tensor::leaf({4, 6}, draw_clear(4));
        rig.labels = {0, 1, kLabelBackground, 0, kLabelBackground};
        PrototypeSet ref;
        ref.classes = {0, 1};
        ref.class_protos = {Tensor::leaf({4}, rand_vec(rs, 4, 0.2, 1.0)),
                            Tensor::leaf({4}, rand_vec(rs, 4, -1.0, -0.2))};
        ref.bg_proto = Tensor::leaf({4}, rand_vec(rs, 4, 0.2, 1.0));
        rig.m_r = cosine_matrix(ref);
        return rig;
    };

    enum class LossKind { det, bpa, rsh, ssp, total };
    auto add_loss_check = [&](const std::string& name, LossKind kind) {
        GradcheckEntry entry{name, 0.0, true};
        const LossWeights w;
        for (int trial = 0; trial < opts.trials; ++trial) {
            RandomStream rs(opts.seed, "gradcheck", fnv1a(name), static_cast<uint64_t>(trial));
            LossRig rig = make_rig(rs);

            auto part = [&](LossKind k) {
                return std::function<Tensor()>([&rig, k, &w] {
                    Tensor fs = mlp_forward(rig.extractor, rig.src_in);
                    switch (k) {
                        case LossKind::det:
                            return loss_detection(
                                add_bias(matmul(fs, rig.head.weight), rig.head.bias),
                                rig.labels);
                        case LossKind::bpa: {
                            Tensor ft = mlp_forward(rig.extractor, rig.tgt_in);
                            auto ps = build_source_prototypes(fs, rig.labels);
                            return loss_bpa(ps.bg_proto, build_target_bg_prototype(ft),
                                            rig.disc, w.grl_lambda);
                        }
                        case LossKind::rsh: {
                            Tensor ft = mlp_forward(rig.extractor, rig.tgt_in);
                            auto ps = build_source_prototypes(fs, rig.labels);
                            return loss_rsh(ps, build_target_bg_prototype(ft));
                        }
                        case LossKind::ssp: {
                            auto ps = build_source_prototypes(fs, rig.labels);
                            return loss_ssp(cosine_matrix(ps), rig.m_r);
                        }
                        default: {
                            Tensor ft = mlp_forward(rig.extractor, rig.tgt_in);
                            auto ps = build_source_prototypes(fs, rig.labels);
                            Tensor det = loss_detection(
                                add_bias(matmul(fs, rig.head.weight), rig.head.bias),
                                rig.labels);
                            Tensor bpa = loss_bpa(ps.bg_proto, build_target_bg_prototype(ft),
                                                  rig.disc, w.grl_lambda);
                            Tensor rsh = loss_rsh(ps, build_target_bg_prototype(ft));
                            Tensor ssp = loss_ssp(cosine_matrix(ps), rig.m_r);
                            return total_loss_g(det, bpa, rsh, ssp, w);
                        }
                    }
                });
            };

            auto build = part(kind);
            for (auto& l : rig.extractor) {
                l.weight.zero_grad();
                l.bias.zero_grad();
            }
            for (auto& t : rig.disc.parameters()) t.zero_grad();
            build().backward();

            // expected extractor gradient: plain finite differences for all
            // terms except the one routed through the reversal layer
            Tensor probe = rig.extractor[0].weight;
            std::vector<double> want(probe.numel(), 0.0);
            auto add_fd = [&](LossKind k, double scale) {
                auto fd = fd_gradient(part(k), probe);
                for (size_t i = 0; i < want.size(); ++i) want[i] += scale * fd[i];
            };
            switch (kind) {
                case LossKind::det: add_fd(LossKind::det, 1.0); break;
                case LossKind::bpa: add_fd(LossKind::bpa, -w.grl_lambda); break;
                case LossKind::rsh: add_fd(LossKind::rsh, 1.0); break;
                case LossKind::ssp: add_fd(LossKind::ssp, 1.0); break;
                case LossKind::total:
                    add_fd(LossKind::det, w.det);
                    add_fd(LossKind::bpa, -w.grl_lambda * w.bpa);
                    add_fd(LossKind::rsh, w.rsh);
                    add_fd(LossKind::ssp, w.ssp);
                    break;
            }
            const auto& got = probe.grad();
            for (size_t i = 0; i < want.size(); ++i)
                entry.max_rel_err = std::max(entry.max_rel_err, rel_err(got[i], want[i]));

            // the discriminator side is never reversed
            if (kind == LossKind::bpa || kind == LossKind::total) {
                Tensor dprobe = rig.disc.layers[0].weight;
                auto fd = fd_gradient(part(kind), dprobe);
                const auto& dgot = dprobe.grad();
                const double scale = kind == LossKind::total ? 1.0 : 1.0;  // bpa weight is 1
                for (size_t i = 0; i < fd.size(); ++i)
                    entry.max_rel_err =
                        std::max(entry.max_rel_err, rel_err(dgot[i], scale * fd[i]));
            }
        }
        entry.pass = entry.max_rel_err < opts.tol;
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(entry);
    };

    add_loss_check("loss_detection", LossKind::det);
    add_loss_check("loss_bpa", LossKind::bpa);
    add_loss_check("loss_rsh", LossKind::rsh);
    add_loss_check("loss_ssp", LossKind::ssp);
    add_loss_check("loss_total_g", LossKind::total);

    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline void print_gradcheck_report(const GradcheckReport& report, std::ostream& os) {
    os << std::left << std::setw(26) << "check" << std::right << std::setw(14) << "max rel err"
       << std::setw(8) << "status" << "\n";
    for (const auto& e : report.entries) {
        os << std::left << std::setw(26) << e.name << std::right << std::setw(14)
           << std::scientific << std::setprecision(2) << e.max_rel_err << std::setw(8)
           << (e.pass ? "pass" : "FAIL") << "\n";
    }
    os.unsetf(std::ios::scientific);
    os << (report.all_pass ? "overall: PASS" : "overall: FAIL") << " ("
       << std::fixed << std::setprecision(2) << report.seconds << " s)\n";
    os.unsetf(std::ios::fixed);
}

}  // namespace rscn
