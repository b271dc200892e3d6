#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "rscn/eval.hpp"
#include "rscn/rng.hpp"

using namespace rscn;

TEST_CASE("iou: identity, disjoint, rasterization cases") {
    Box a{0, 0, 2, 2};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
    CHECK(iou(a, Box{1, 1, 3, 3}) == Catch::Approx(1.0 / 7.0).margin(1e-12));
    CHECK_THROWS_WITH(iou(a, Box{1, 1, 1, 3}), Catch::Matchers::ContainsSubstring("degenerate"));

    RandomStream rs(2, "iou");
    for (int t = 0; t < 200; ++t) {
        auto rbox = [&] {
            const int x1 = static_cast<int>(rs.uniform_int(0, 10));
            const int y1 = static_cast<int>(rs.uniform_int(0, 10));
            return Box{static_cast<double>(x1), static_cast<double>(y1),
                       static_cast<double>(x1 + rs.uniform_int(1, 8)),
                       static_cast<double>(y1 + rs.uniform_int(1, 8))};
        };
        Box p = rbox(), q = rbox();
        CHECK(iou(p, q) == Catch::Approx(oracles::iou_raster_oracle(p, q)).margin(1e-12));
    }
}

TEST_CASE("ap50: single match, misses, fp-before-tp") {
    GroundTruth gt{0, Box{0, 0, 10, 10}};

    SECTION("one detection matching one ground truth") {
        std::vector<ImageEval> imgs = {{{{Box{0, 0, 10, 10}, 0, 0.9}}, {gt}}};
        CHECK(*ap50(imgs, 0) == 1.0);
    }
    SECTION("no detections at all") {
        std::vector<ImageEval> imgs = {{{}, {gt}}};
        CHECK(*ap50(imgs, 0) == 0.0);
    }
    SECTION("higher-scored false positive halves the AP") {
        std::vector<ImageEval> imgs = {
            {{{Box{20, 20, 30, 30}, 0, 0.9}, {Box{0, 0, 10, 10}, 0, 0.5}}, {gt}}};
        CHECK(*ap50(imgs, 0) == Catch::Approx(0.5).margin(1e-12));
        CHECK(*ap50(imgs, 0) == Catch::Approx(oracles::ap_oracle(imgs, 0)).margin(1e-12));
    }
    SECTION("no ground truth for the class is undefined") {
        std::vector<ImageEval> imgs = {{{{Box{0, 0, 10, 10}, 1, 0.9}}, {gt}}};
        CHECK_FALSE(ap50(imgs, 1).has_value());
    }
    SECTION("a ground truth can be claimed only once") {
        std::vector<ImageEval> imgs = {
            {{{Box{0, 0, 10, 10}, 0, 0.9}, {Box{0, 0, 10, 10}, 0, 0.8}}, {gt}}};
        // second detection is a duplicate -> FP; AP stays 1.0 since the TP
        // ranks first
        CHECK(*ap50(imgs, 0) == 1.0);
    }
}

TEST_CASE("ap50 equals the brute-force oracle on randomized instances") {
    RandomStream rs(7, "ap-prop");
    int checked = 0;
    for (int t = 0; t < 300; ++t) {
        const size_t n_img = static_cast<size_t>(rs.uniform_int(1, 2));
        std::vector<ImageEval> imgs(n_img);
        for (auto& im : imgs) {
            const int n_gt = static_cast<int>(rs.uniform_int(0, 4));
            for (int g = 0; g < n_gt; ++g) {
                const int x = static_cast<int>(rs.uniform_int(0, 12));
                const int y = static_cast<int>(rs.uniform_int(0, 12));
                im.gts.push_back({0, Box{static_cast<double>(x), static_cast<double>(y),
                                         static_cast<double>(x + rs.uniform_int(2, 6)),
                                         static_cast<double>(y + rs.uniform_int(2, 6))}});
            }
            const int n_det = static_cast<int>(rs.uniform_int(0, 6));
            for (int d = 0; d < n_det; ++d) {
                const int x = static_cast<int>(rs.uniform_int(0, 12));
                const int y = static_cast<int>(rs.uniform_int(0, 12));
                // quantized scores provoke ties
                const double score = static_cast<double>(rs.uniform_int(1, 5)) / 5.0;
                im.dets.push_back({Box{static_cast<double>(x), static_cast<double>(y),
                                       static_cast<double>(x + rs.uniform_int(2, 6)),
                                       static_cast<double>(y + rs.uniform_int(2, 6))},
                                   0, score});
            }
        }
        auto got = ap50(imgs, 0);
        const double want = oracles::ap_oracle(imgs, 0);
        if (!got.has_value()) {
            CHECK(want == -1.0);
            continue;
        }
        ++checked;
        CHECK(*got == Catch::Approx(want).margin(1e-12));
        CHECK(*got >= 0.0);
        CHECK(*got <= 1.0);

        // invariance under a strictly monotone score transform
        std::vector<ImageEval> warped = imgs;
        for (auto& im : warped)
            for (auto& d : im.dets) d.score = std::tanh(3.0 * d.score) + 2.0;
        CHECK(*ap50(warped, 0) == Catch::Approx(*got).margin(1e-12));
    }
    CHECK(checked > 100);
}

TEST_CASE("adding a lower-scored duplicate TP never increases AP") {
    RandomStream rs(13, "ap-dup");
    for (int t = 0; t < 100; ++t) {
        std::vector<ImageEval> imgs(1);
        auto& im = imgs[0];
        const int n_gt = static_cast<int>(rs.uniform_int(1, 3));
        std::vector<int> xs;
        while (static_cast<int>(xs.size()) < n_gt) {
            const int x = static_cast<int>(rs.uniform_int(0, 10)) * 8;
            if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
        }
        for (int x : xs)
            im.gts.push_back({0, Box{static_cast<double>(x), 0.0, static_cast<double>(x + 6), 6.0}});
        for (int d = 0; d < 3; ++d) {
            const int pick = static_cast<int>(rs.uniform_int(0, n_gt - 1));
            im.dets.push_back({im.gts[pick].box, 0, rs.uniform(0.3, 1.0)});
        }
        const double base = *ap50(imgs, 0);
        // duplicate the first detection at a strictly lower score
        std::vector<ImageEval> more = imgs;
        more[0].dets.push_back({imgs[0].dets[0].box, 0, 0.05});
        CHECK(*ap50(more, 0) <= base + 1e-12);
    }
}

TEST_CASE("map50: mean over defined classes only") {
    CHECK(map50({{0, 1.0}, {1, 0.0}}) == 0.5);
    CHECK(map50({{2, 0.625}}) == 0.625);
    CHECK(map50({{0, 0.2}, {1, 0.4}, {2, 0.6}, {3, 0.8}, {4, 1.0}}) ==
          Catch::Approx(0.6).margin(1e-12));
    CHECK_THROWS(map50({}));
}

TEST_CASE("cross-domain intra-class similarity") {
    FeaturesByClass src, tgt;
    SECTION("identical feature sets give 1") {
        src[0] = {{1, 0}, {0.5, 0.5}};
        tgt[0] = src[0];
        auto sim = cross_domain_intra_class_similarity(src, tgt);
        CHECK(sim[0] < 1.0 + 1e-12);
        CHECK(sim[0] > 0.85);  // mean over all cross pairs of two directions
        tgt[0] = {{1, 0}};
        src[0] = {{1, 0}};
        CHECK(cross_domain_intra_class_similarity(src, tgt)[0] ==
              Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("orthogonal domains give 0") {
        src[1] = {{1, 0}};
        tgt[1] = {{0, 1}};
        CHECK(cross_domain_intra_class_similarity(src, tgt)[1] ==
              Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("hand case: cosines 0.5 and 0.7 average to 0.6") {
        const double a = 0.5, b = 0.7;
        src[0] = {{1, 0}};
        tgt[0] = {{a, std::sqrt(1 - a * a)}, {b, std::sqrt(1 - b * b)}};
        CHECK(cross_domain_intra_class_similarity(src, tgt)[0] ==
              Catch::Approx(0.6).margin(1e-12));
    }
    SECTION("classes missing on one side are absent") {
        src[0] = {{1, 0}};
        tgt[1] = {{0, 1}};
        CHECK(cross_domain_intra_class_similarity(src, tgt).empty());
    }
}

TEST_CASE("inter-class discriminability") {
    CHECK(inter_class_discriminability({{1, 0}, {1, 0}, {1, 0}}) ==
          Catch::Approx(0.0).margin(1e-12));
    CHECK(inter_class_discriminability({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}) ==
          Catch::Approx(1.0).margin(1e-12));
    const double c = 0.5;
    CHECK(inter_class_discriminability({{1, 0}, {c, std::sqrt(1 - c * c)}}) ==
          Catch::Approx(0.5).margin(1e-12));
    CHECK_THROWS(inter_class_discriminability({{1, 0}}));

    // invariant to positive rescaling of any prototype
    RandomStream rs(5, "disc");
    std::vector<std::vector<double>> ps(3, std::vector<double>(4));
    for (auto& p : ps)
        for (auto& v : p) v = rs.uniform(-1, 1);
    const double base = inter_class_discriminability(ps);
    ps[1] = {ps[1][0] * 9, ps[1][1] * 9, ps[1][2] * 9, ps[1][3] * 9};
    CHECK(inter_class_discriminability(ps) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("evaluate_detector produces a coherent report on a toy dataset") {
    SceneSpec spec;
    spec.height = 24;
    spec.width = 24;
    spec.objects_max = 2;
    spec.object_size_min = 8;
    spec.object_size_max = 10;
    auto dir = std::filesystem::temp_directory_path() / "rscn_test_evalds";
    std::filesystem::remove_all(dir);
    generate_dataset(spec, {6, 4, 4}, 3, dir);
    auto ds = load_dataset(dir);

    DetectorConfig dc{4, 8, 12, spec.classes, spec.channels};
    auto detector = DetectorParams::init(dc, 1);
    EvalSettings s;
    s.seed = 3;
    auto report = evaluate_detector(detector, ds, Split::target_val, s);
    CHECK(report.split == "target_val");
    CHECK(report.map50 >= 0.0);
    CHECK(report.map50 <= 1.0);
    CHECK(report.total_gts > 0);
    for (const auto& [cls, ap] : report.per_class_ap) {
        CHECK(ap >= 0.0);
        CHECK(ap <= 1.0);
    }
    // deterministic
    auto report2 = evaluate_detector(detector, ds, Split::target_val, s);
    CHECK(report_to_json(report) == report_to_json(report2));
}
