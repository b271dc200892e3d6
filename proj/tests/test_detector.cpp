#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "rscn/detector.hpp"
#include "rscn/synthbench.hpp"

using namespace rscn;

namespace {

DetectorConfig tiny_cfg() {
    DetectorConfig c;
    c.patch = 4;
    c.feat_dim = 8;
    c.hidden = 10;
    c.classes = 3;
    c.channels = 3;
    return c;
}

Scene make_scene() {
    SceneSpec spec;
    spec.height = 24;
    spec.width = 24;
    return render_scene(spec, 21, 0, Domain::source, true);
}

}  // namespace

TEST_CASE("bilinear_crop: constant regions and single-pixel boxes") {
    Scene s;
    s.height = 4;
    s.width = 4;
    s.channels = 1;
    s.pixels.assign(16, 0.25f);
    auto flat = bilinear_crop(s, Box{0, 0, 4, 4}, 2);
    for (double v : flat) CHECK(v == Catch::Approx(0.25).margin(1e-12));

    // a 2x2 block sampled with patch 2 places samples exactly on the four
    // pixel centers
    for (int y : {1, 2})
        for (int x : {2, 3}) s.pixels[y * 4 + x] = 0.75f;
    auto one = bilinear_crop(s, Box{2, 1, 4, 3}, 2);
    for (double v : one) CHECK(v == Catch::Approx(0.75).margin(1e-12));

    CHECK_THROWS_WITH(bilinear_crop(s, Box{2, 2, 2, 3}, 2),
                      Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("extract_proposal_features: shape, determinism, zero net") {
    auto cfg = tiny_cfg();
    auto params = DetectorParams::init(cfg, 3);
    Scene scene = make_scene();
    std::vector<Box> boxes = {{2, 2, 10, 10}, {5, 1, 14, 9}, {2, 2, 10, 10}};

    Tensor f = extract_proposal_features(params, scene, boxes);
    REQUIRE(f.shape() == Shape{3, cfg.feat_dim});

    // identical boxes give identical rows
    for (size_t j = 0; j < cfg.feat_dim; ++j)
        CHECK(f.values()[0 * cfg.feat_dim + j] == f.values()[2 * cfg.feat_dim + j]);

    Tensor f2 = extract_proposal_features(params, scene, boxes);
    CHECK(f.values() == f2.values());

    DetectorParams zero = params;
    zero.extractor.clear();
    zero.extractor.push_back({Tensor::zeros({cfg.input_dim(), cfg.hidden}), Tensor::zeros({cfg.hidden})});
    zero.extractor.push_back({Tensor::zeros({cfg.hidden, cfg.hidden}), Tensor::zeros({cfg.hidden})});
    zero.extractor.push_back({Tensor::zeros({cfg.hidden, cfg.feat_dim}), Tensor::zeros({cfg.feat_dim})});
    Tensor fz = extract_proposal_features(zero, scene, boxes);
    for (double v : fz.values()) CHECK(v == 0.0);
}

TEST_CASE("classify_proposals: empty input, uniform head, oracle match") {
    auto cfg = tiny_cfg();
    auto params = DetectorParams::init(cfg, 4);
    Scene scene = make_scene();

    Tensor empty = extract_proposal_features(params, scene, {});
    Tensor logits0 = classify_proposals(params, empty);
    CHECK(logits0.shape() == Shape{0, static_cast<size_t>(cfg.classes) + 1});

    DetectorParams zero_head = params;
    zero_head.head = {Tensor::zeros({cfg.feat_dim, static_cast<size_t>(cfg.classes) + 1}),
                      Tensor::zeros({static_cast<size_t>(cfg.classes) + 1})};
    Tensor f = extract_proposal_features(params, scene, {{2, 2, 10, 10}});
    Tensor zl = classify_proposals(zero_head, f);
    for (double v : zl.values()) CHECK(v == 0.0);  // uniform softmax

    // straight-line oracle over extractor + head
    std::vector<Box> boxes = {{1, 3, 9, 12}, {4, 4, 12, 12}};
    Tensor feats = extract_proposal_features(params, scene, boxes);
    Tensor logits = classify_proposals(params, feats);
    std::vector<double> flat;
    for (const auto& b : boxes) {
        auto patch = bilinear_crop(scene, b, cfg.patch);
        flat.insert(flat.end(), patch.begin(), patch.end());
    }
    auto want_feats = oracles::straight_mlp_forward(params.extractor, flat, boxes.size());
    auto want = oracles::straight_mlp_forward({params.head}, want_feats, boxes.size());
    REQUIRE(want.size() == logits.values().size());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(logits.values()[i] == Catch::Approx(want[i]).margin(1e-9));

    CHECK_THROWS(classify_proposals(params, Tensor::zeros({2, cfg.feat_dim + 1u})));
}

TEST_CASE("nms: keep, suppress, disjoint") {
    std::vector<Detection> one = {{Box{0, 0, 4, 4}, 0, 0.7}};
    CHECK(nms(one, 0.5) == one);

    std::vector<Detection> dup = {{Box{0, 0, 4, 4}, 1, 0.8}, {Box{0, 0, 4, 4}, 1, 0.9}};
    auto kept = nms(dup, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);

    std::vector<Detection> disjoint = {{Box{0, 0, 4, 4}, 1, 0.8}, {Box{10, 10, 14, 14}, 1, 0.9}};
    CHECK(nms(disjoint, 0.5).size() == 2);

    // different classes never suppress each other
    std::vector<Detection> classes = {{Box{0, 0, 4, 4}, 0, 0.8}, {Box{0, 0, 4, 4}, 1, 0.9}};
    CHECK(nms(classes, 0.5).size() == 2);

    CHECK_THROWS(nms(one, 0.0));
    CHECK_THROWS(nms(one, 1.5));
}

TEST_CASE("detect: background-only head, threshold, dedup, purity") {
    auto cfg = tiny_cfg();
    auto params = DetectorParams::init(cfg, 5);
    Scene scene = make_scene();
    std::vector<Box> proposals = {{2, 2, 10, 10}, {2, 2, 10, 10}, {12, 12, 20, 20}};

    DetectorParams bg_only = params;
    std::vector<double> headw(cfg.feat_dim * (cfg.classes + 1u), 0.0);
    std::vector<double> headb(cfg.classes + 1u, 0.0);
    headb[cfg.classes] = 40.0;  // background always wins
    bg_only.head = {Tensor::leaf({cfg.feat_dim, static_cast<size_t>(cfg.classes) + 1}, headw),
                    Tensor::leaf({static_cast<size_t>(cfg.classes) + 1}, headb)};
    CHECK(detect(bg_only, scene, proposals, 0.05, 0.5).empty());

    DetectorParams fg = bg_only;
    std::vector<double> fgb(cfg.classes + 1u, 0.0);
    fgb[1] = 3.0;
    fg.head = {Tensor::leaf({cfg.feat_dim, static_cast<size_t>(cfg.classes) + 1}, headw),
               Tensor::leaf({static_cast<size_t>(cfg.classes) + 1}, fgb)};
    auto dets = detect(fg, scene, {proposals[0]}, 0.05, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].cls == 1);
    CHECK(dets[0].score > 0.8);

    // duplicate proposals collapse to one detection
    auto deduped = detect(fg, scene, {proposals[0], proposals[1]}, 0.05, 0.5);
    CHECK(deduped.size() == 1);

    // pure function of its inputs
    auto a = detect(params, scene, proposals, 0.05, 0.5);
    auto b = detect(params, scene, proposals, 0.05, 0.5);
    CHECK(a == b);

    CHECK(detect(params, scene, {}, 0.05, 0.5).empty());
}

TEST_CASE("freezing blocks gradients to every parameter") {
    auto cfg = tiny_cfg();
    auto params = DetectorParams::init(cfg, 6);
    params.freeze();
    Scene scene = make_scene();
    Tensor f = extract_proposal_features(params, scene, {{2, 2, 10, 10}});
    Tensor logits = classify_proposals(params, f);
    CHECK_FALSE(logits.requires_grad());

    auto before = params.head.weight.values();
    mean(logits).backward();  // no-op: nothing requires grad
    for (const auto& t : params.parameters()) CHECK_FALSE(t.has_grad());
    CHECK(params.head.weight.values() == before);
}
