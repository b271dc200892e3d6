#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rscn/fdcheck.hpp"
#include "rscn/losses.hpp"
#include "rscn/rng.hpp"

using namespace rscn;

namespace {

Tensor rows(std::vector<std::vector<double>> r, bool rg = false) {
    const size_t n = r.size(), d = r[0].size();
    std::vector<double> flat;
    for (auto& row : r) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::leaf({n, d}, std::move(flat), rg);
}

Tensor vec(std::vector<double> v, bool rg = false) {
    const size_t n = v.size();
    return Tensor::leaf({n}, std::move(v), rg);
}

// Discriminator with every weight and bias zero: logit 0 for any input.
Discriminator zero_disc(size_t d, size_t h = 4) {
    Discriminator disc;
    disc.layers.push_back({Tensor::zeros({d, h}), Tensor::zeros({h})});
    disc.layers.push_back({Tensor::zeros({h, h}), Tensor::zeros({h})});
    disc.layers.push_back({Tensor::zeros({h, 1}), Tensor::zeros({1})});
    return disc;
}

}  // namespace

TEST_CASE("loss_detection: saturation, uniform, hand mean, all-ignored") {
    CHECK(loss_detection(rows({{40, 0, 0}}), {0}).value() < 1e-12);
    CHECK(loss_detection(rows({{0, 0, 0}}), {1}).value() ==
          Catch::Approx(std::log(3.0)).margin(1e-12));

    // two rows: CE([1,0],0) and CE([0,0],bg->index 1); mean of the row losses
    const double r1 = std::log(1.0 + std::exp(-1.0));
    const double r2 = std::log(2.0);
    CHECK(loss_detection(rows({{1, 0}, {0, 0}}), {0, kLabelBackground}).value() ==
          Catch::Approx(0.5 * (r1 + r2)).margin(1e-12));

    CHECK_THROWS_WITH(loss_detection(rows({{1, 0}}), {kLabelIgnore}),
                      Catch::Matchers::ContainsSubstring("ignored"));
    CHECK_THROWS(loss_detection(rows({{1, 0}}), {0, 1}));
}

TEST_CASE("loss_bpa: zero discriminator gives 2 ln 2, saturated gives 0") {
    auto disc = zero_disc(3);
    Tensor ps = vec({0.5, -1.0, 2.0});
    Tensor pt = vec({1.5, 0.25, -0.75});
    CHECK(loss_bpa(ps, pt, disc, 1.0).value() ==
          Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));

    // 1-d discriminator shaped to emit +40 for the source prototype and
    // -40 for the target prototype
    Discriminator sat;
    sat.layers.push_back({Tensor::leaf({1, 1}, {1.0}), Tensor::zeros({1})});
    sat.layers.push_back({Tensor::leaf({1, 1}, {1.0}), Tensor::zeros({1})});
    sat.layers.push_back({Tensor::leaf({1, 1}, {2.0}), Tensor::leaf({1}, {-40.0})});
    CHECK(loss_bpa(vec({40.0}), vec({0.0}), sat, 1.0).value() < 1e-12);

    CHECK_THROWS(loss_bpa(vec({1.0, 2.0}), vec({1.0, 2.0}), sat, 1.0));  // dim mismatch
    CHECK_THROWS(loss_bpa(std::vector<Tensor>{}, {pt}, disc, 1.0));
}

TEST_CASE("loss_bpa: batch means reduce to the per-pair value") {
    auto disc = zero_disc(2);
    std::vector<Tensor> src = {vec({1, 0}), vec({0, 1})};
    std::vector<Tensor> tgt = {vec({2, 2}), vec({-1, 3})};
    CHECK(loss_bpa(src, tgt, disc, 1.0).value() ==
          Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("loss_bpa: feature gradient is -lambda times the unreversed gradient") {
    RandomStream rs(17, "bpa");
    for (double lambda : {0.0, 0.5, 1.0}) {
        std::vector<double> sv(4), tv(4);
        for (auto& v : sv) v = rs.uniform(-1, 1);
        for (auto& v : tv) v = rs.uniform(-1, 1);
        Tensor ps = Tensor::leaf({4}, sv, true);
        Tensor pt = Tensor::leaf({4}, tv, true);
        Discriminator disc = Discriminator::init(4, 5, 900);

        auto reversed = [&] { return loss_bpa(ps, pt, disc, lambda); };
        ps.zero_grad();
        pt.zero_grad();
        for (auto& t : disc.parameters()) t.zero_grad();
        reversed().backward();
        auto g_ps = ps.grad();
        auto g_disc = disc.parameters()[0].grad();

        // finite differences see only the forward pass, i.e. the graph with
        // the reversal removed
        auto fd_ps = fd_gradient(reversed, ps);
        for (size_t i = 0; i < g_ps.size(); ++i)
            CHECK(rel_err(g_ps[i], -lambda * fd_ps[i]) < 1e-4);

        // discriminator side is not reversed
        auto fd_disc = fd_gradient(reversed, disc.parameters()[0]);
        CHECK(max_rel_err(g_disc, fd_disc) < 1e-4);
    }
}

TEST_CASE("adversarial direction: one step helps the disc, hurts through features") {
    RandomStream rs(23, "adv");
    std::vector<double> sv(4), tv(4);
    for (auto& v : sv) v = rs.uniform(-1, 1);
    for (auto& v : tv) v = rs.uniform(1, 2);  // separable sides
    Tensor ps = Tensor::leaf({4}, sv, true);
    Tensor pt = Tensor::leaf({4}, tv, true);
    Discriminator disc = Discriminator::init(4, 6, 41);

    auto loss_now = [&] { return loss_bpa(ps, pt, disc, 1.0).value(); };
    const double before = loss_now();

    // grads from one backward pass
    loss_bpa(ps, pt, disc, 1.0).backward();

    SECTION("disc step with features frozen decreases the loss") {
        const double lr = 1e-3;
        for (auto t : disc.parameters()) {
            auto& v = t.values_mut();
            const auto& g = t.grad();
            for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        }
        CHECK(loss_now() < before);
    }
    SECTION("feature step with disc frozen increases the loss") {
        const double lr = 1e-3;
        for (Tensor t : {ps, pt}) {
            auto& v = t.values_mut();
            const auto& g = t.grad();
            for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        }
        CHECK(loss_now() > before);
    }
}

TEST_CASE("loss_rsh: zero case, hand value, skip rule") {
    SECTION("identical background prototypes give exactly zero") {
        Tensor f = rows({{1, 0}, {0.5, 0.5}});
        auto ps = build_source_prototypes(f, {0, kLabelBackground});
        Tensor pt = vec({0.5, 0.5});
        CHECK(loss_rsh(ps, pt).value() == 0.0);
    }
    SECTION("hand case evaluates to 1.0") {
        PrototypeSet ps;
        ps.classes = {0};
        ps.class_protos = {vec({1, 0})};
        ps.bg_proto = vec({0, 0});
        CHECK(loss_rsh(ps, vec({0, 1})).value() == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("classes at the background prototype are skipped") {
        PrototypeSet ps;
        ps.classes = {0, 1};
        ps.class_protos = {vec({0.5, 0.5}), vec({1, 0})};
        ps.bg_proto = vec({0.5, 0.5});  // class 0 coincides with bg
        Tensor pt = vec({0.5, 0.5});
        CHECK(loss_rsh(ps, pt).value() == 0.0);  // class 1 contributes 0, class 0 skipped
    }
    SECTION("empty class set is an error") {
        PrototypeSet ps;
        ps.bg_proto = vec({1, 0});
        CHECK_THROWS(loss_rsh(ps, vec({0, 1})));
    }
}

TEST_CASE("loss_ssp: zero iff off-diagonals coincide; ordered pairs") {
    auto make_matrix = [](double off) {
        PrototypeSet ps;
        ps.classes = {0};
        ps.class_protos = {vec({1, 0})};
        // cos(p0, bg) = off with unit-norm bg prototype
        ps.bg_proto = vec({off, std::sqrt(1.0 - off * off)});
        return cosine_matrix(ps);
    };
    auto ms = make_matrix(0.8);
    auto mr = make_matrix(0.6);
    CHECK(loss_ssp(ms, ms).value() == 0.0);
    CHECK(loss_ssp(ms, mr).value() == Catch::Approx(0.4).margin(1e-12));

    SECTION("diagonal-only differences do not count") {
        SimilarityMatrix a = ms, b = ms;
        b.entries[0] = Tensor::scalar(0.123);  // perturb (0,0)
        b.entries[3] = Tensor::scalar(0.456);  // perturb (1,1)
        CHECK(loss_ssp(a, b).value() == 0.0);
    }
    SECTION("class list mismatch is an error") {
        SimilarityMatrix other = mr;
        other.classes = {1, kLabelBackground};
        CHECK_THROWS_WITH(loss_ssp(ms, other),
                          Catch::Matchers::ContainsSubstring("class lists"));
    }
}

TEST_CASE("total losses") {
    LossWeights w;
    Tensor z = Tensor::scalar(0.0);
    CHECK(total_loss_g(z, z, z, z, w).value() == 0.0);

    Tensor det = Tensor::scalar(0.5), bpa = Tensor::scalar(0.2), rsh = Tensor::scalar(0.1),
           ssp = Tensor::scalar(0.3);
    CHECK(total_loss_g(det, bpa, rsh, ssp, w).value() == Catch::Approx(1.1).margin(1e-12));

    LossWeights src_only{1, 0, 0, 0, 1};
    CHECK(total_loss_g(det, bpa, rsh, ssp, src_only).value() ==
          Catch::Approx(0.5).margin(1e-12));

    CHECK(total_loss_gr(det).value() == 0.5);
    CHECK(total_loss_gr(Tensor::scalar(0.0)).value() == 0.0);
    CHECK(total_loss_gr(Tensor::scalar(0.7)).value() ==
          loss_detection(rows({{40, 0}}), {0}).value() + 0.7);  // identity on its input

    LossWeights bad;
    bad.rsh = -1.0;
    CHECK_THROWS(total_loss_g(det, bpa, rsh, ssp, bad));
}

TEST_CASE("loss nonnegativity and bounds on random inputs") {
    RandomStream rs(3, "bounds");
    for (int t = 0; t < 25; ++t) {
        const size_t d = 4;
        std::vector<std::vector<double>> fr(5, std::vector<double>(d));
        for (auto& r : fr)
            for (auto& v : r) v = rs.uniform(-2, 2);
        Tensor f = rows(fr);
        std::vector<int> labels = {0, 1, 0, kLabelBackground, kLabelBackground};
        auto ps = build_source_prototypes(f, labels);
        std::vector<double> ptv(d);
        for (auto& v : ptv) v = rs.uniform(-2, 2);
        Tensor pt = vec(ptv);

        const double rsh = loss_rsh(ps, pt).value();
        CHECK(rsh >= 0.0);
        CHECK(rsh <= 2.0 * std::sqrt(static_cast<double>(d)) * ps.classes.size());

        auto ms = cosine_matrix(ps);
        PrototypeSet other = ps;
        other.bg_proto = pt;
        auto mr = cosine_matrix(other);
        const double ssp = loss_ssp(ms, mr).value();
        const double m = static_cast<double>(ms.size());
        CHECK(ssp >= 0.0);
        CHECK(ssp <= 2.0 * m * (m - 1.0));

        auto disc = Discriminator::init(d, 5, 77);
        CHECK(loss_bpa(ps.bg_proto, pt, disc, 1.0).value() >= 0.0);

        Tensor logits = rows({{rs.uniform(-3, 3), rs.uniform(-3, 3), rs.uniform(-3, 3)}});
        CHECK(loss_detection(logits, {static_cast<int>(rs.uniform_int(0, 1))}).value() >= 0.0);
    }
}

TEST_CASE("argmin characterizations") {
    // rsh == 0 iff the normalized relative vectors coincide
    PrototypeSet ps;
    ps.classes = {0};
    ps.class_protos = {vec({2, 0})};
    ps.bg_proto = vec({0, 0});
    // target bg prototype on the same ray: relative vectors equal after
    // normalization even though the raw differences differ
    CHECK(loss_rsh(ps, vec({-2, 0})).value() == Catch::Approx(0.0).margin(1e-12));
    CHECK(loss_rsh(ps, vec({0, 1})).value() > 0.0);

    // ssp == 0 iff off-diagonals coincide
    PrototypeSet a, b;
    a.classes = b.classes = {0};
    a.class_protos = {vec({1, 0})};
    b.class_protos = {vec({2, 0})};  // scaled, same direction
    a.bg_proto = vec({0.6, 0.8});
    b.bg_proto = vec({1.2, 1.6});
    CHECK(loss_ssp(cosine_matrix(a), cosine_matrix(b)).value() ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("losses pass finite-difference gradcheck end to end") {
    RandomStream rs(51, "fdloss");
    std::vector<LinearLayer> extractor;
    extractor.push_back(make_linear(6, 8, 1001, "fd.0"));
    extractor.push_back(make_linear(8, 8, 1001, "fd.1"));
    extractor.push_back(make_linear(8, 4, 1001, "fd.2"));
    Discriminator disc = Discriminator::init(4, 5, 1002);
    LinearLayer head = make_linear(4, 3, 1003, "fd.head");

    std::vector<double> src_in(5 * 6), tgt_in(4 * 6);
    for (auto& v : src_in) v = rs.uniform(-1, 1);
    for (auto& v : tgt_in) v = rs.uniform(-1, 1);
    Tensor src = Tensor::leaf({5, 6}, src_in);
    Tensor tgt = Tensor::leaf({4, 6}, tgt_in);
    std::vector<int> labels = {0, 1, kLabelBackground, 0, kLabelBackground};

    // constant reference matrix
    PrototypeSet ref;
    ref.classes = {0, 1};
    ref.class_protos = {vec({1, 0, 0.5, 0}), vec({0, 1, 0, 0.5})};
    ref.bg_proto = vec({0.2, 0.2, 0.2, 0.2});
    auto m_r = cosine_matrix(ref);

    LossWeights w;
    auto build = [&] {
        Tensor fs = mlp_forward(extractor, src);
        Tensor ft = mlp_forward(extractor, tgt);
        auto ps = build_source_prototypes(fs, labels);
        Tensor pt = build_target_bg_prototype(ft);
        Tensor det = loss_detection(add_bias(matmul(fs, head.weight), head.bias), labels);
        Tensor bpa = loss_bpa(ps.bg_proto, pt, disc, w.grl_lambda);
        Tensor rsh = loss_rsh(ps, pt);
        Tensor ssp = loss_ssp(cosine_matrix(ps), m_r);
        return total_loss_g(det, bpa, rsh, ssp, w);
    };

    // the BPA term flows through the reversal layer; every other term does
    // not, so the expected extractor gradient is
    // FD(det+rsh+ssp) - lambda*FD(bpa)
    auto build_det = [&] {
        Tensor fs = mlp_forward(extractor, src);
        return loss_detection(add_bias(matmul(fs, head.weight), head.bias), labels);
    };
    auto build_bpa = [&] {
        Tensor fs = mlp_forward(extractor, src);
        Tensor ft = mlp_forward(extractor, tgt);
        auto ps = build_source_prototypes(fs, labels);
        return loss_bpa(ps.bg_proto, build_target_bg_prototype(ft), disc, w.grl_lambda);
    };
    auto build_rsh = [&] {
        Tensor fs = mlp_forward(extractor, src);
        Tensor ft = mlp_forward(extractor, tgt);
        auto ps = build_source_prototypes(fs, labels);
        return loss_rsh(ps, build_target_bg_prototype(ft));
    };
    auto build_ssp = [&] {
        Tensor fs = mlp_forward(extractor, src);
        auto ps = build_source_prototypes(fs, labels);
        return loss_ssp(cosine_matrix(ps), m_r);
    };

    for (auto& l : extractor) {
        l.weight.zero_grad();
        l.bias.zero_grad();
    }
    build().backward();

    Tensor probe = extractor[0].weight;
    auto fd_det = fd_gradient(build_det, probe);
    auto fd_bpa = fd_gradient(build_bpa, probe);
    auto fd_rsh = fd_gradient(build_rsh, probe);
    auto fd_ssp = fd_gradient(build_ssp, probe);
    const auto& got = probe.grad();
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        const double want =
            fd_det[i] - w.grl_lambda * fd_bpa[i] + fd_rsh[i] + fd_ssp[i];
        worst = std::max(worst, rel_err(got[i], want));
    }
    CHECK(worst < 1e-4);
}
