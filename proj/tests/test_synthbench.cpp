#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "rscn/synthbench.hpp"

using namespace rscn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("rscn_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SceneSpec small_spec() {
    SceneSpec s;
    s.height = 24;
    s.width = 24;
    s.objects_max = 2;
    s.object_size_min = 8;
    s.object_size_max = 10;
    return s;
}

}  // namespace

TEST_CASE("generate_dataset: counts, instance-free invariant, determinism") {
    auto dir = temp_dir("gen");
    auto m = generate_dataset(small_spec(), {10, 10, 5}, 0, dir);

    CHECK(m.split(Split::source_train).count == 10);
    CHECK(m.split(Split::target_train).count == 10);
    CHECK(m.split(Split::target_val).count == 5);
    CHECK(m.scenes.size() == 25);

    for (uint64_t c : m.split(Split::target_train).object_counts) CHECK(c == 0);
    uint64_t src_total = 0;
    for (uint64_t c : m.split(Split::source_train).object_counts) src_total += c;
    CHECK(src_total >= 10);  // every positive scene has at least one object

    auto ds = load_dataset(dir);
    for (const auto* s : ds.split(Split::target_train)) CHECK(s->gts.empty());
    for (const auto* s : ds.split(Split::source_train)) CHECK(!s->gts.empty());
    for (const auto* s : ds.split(Split::target_val)) CHECK(!s->gts.empty());

    // bit-identical regeneration
    auto dir2 = temp_dir("gen2");
    generate_dataset(small_spec(), {10, 10, 5}, 0, dir2);
    for (const auto& ref : m.scenes) {
        auto a = read_file(dir / "scenes" / ref.file);
        auto b = read_file(dir2 / "scenes" / ref.file);
        REQUIRE(a == b);
    }
    CHECK(read_file(dir / "manifest.json") == read_file(dir2 / "manifest.json"));

    // different seed changes content
    auto dir3 = temp_dir("gen3");
    auto m3 = generate_dataset(small_spec(), {10, 10, 5}, 1, dir3);
    CHECK(read_file(dir / "scenes" / m.scenes[0].file) !=
          read_file(dir3 / "scenes" / m3.scenes[0].file));
}

TEST_CASE("pixels clamped and boxes inside the grid") {
    auto spec = small_spec();
    for (uint32_t id : {0u, 7u, 13u}) {
        Scene s = render_scene(spec, 42, id, Domain::target, true);
        for (float p : s.pixels) {
            CHECK(p >= 0.0f);
            CHECK(p <= 1.0f);
        }
        for (const auto& gt : s.gts) {
            CHECK(gt.box.valid());
            CHECK(gt.box.x2 <= spec.width);
            CHECK(gt.box.y2 <= spec.height);
            CHECK(gt.cls >= 0);
            CHECK(gt.cls < spec.classes);
        }
    }
}

TEST_CASE("shift identity: unit affine and zero noise reproduce the pre-shift rendering") {
    auto spec = small_spec();
    spec.shift_scale = {1.0, 1.0, 1.0};
    spec.shift_offset = {0.0, 0.0, 0.0};
    spec.shift_noise = 0.0;
    Scene shifted = render_scene(spec, 5, 3, Domain::target, true, true);
    Scene plain = render_scene(spec, 5, 3, Domain::target, true, false);
    CHECK(shifted.pixels == plain.pixels);
    CHECK(shifted.gts == plain.gts);
}

TEST_CASE("default shift changes pixels but not geometry") {
    auto spec = small_spec();
    Scene shifted = render_scene(spec, 5, 3, Domain::target, true, true);
    Scene plain = render_scene(spec, 5, 3, Domain::target, true, false);
    CHECK(shifted.pixels != plain.pixels);
    CHECK(shifted.gts == plain.gts);
}

TEST_CASE("spec validation rejects impossible objects") {
    auto spec = small_spec();
    spec.object_size_max = 40;  // larger than the 24x24 grid
    CHECK_THROWS_WITH(generate_dataset(spec, {1, 1, 1}, 0, temp_dir("bad")),
                      Catch::Matchers::ContainsSubstring("cannot fit"));
    auto tiny = small_spec();
    tiny.height = 4;
    CHECK_THROWS(tiny.validate());
}

TEST_CASE("generate_proposals: counts and zero-jitter identity") {
    auto spec = small_spec();
    Scene s = render_scene(spec, 9, 1, Domain::source, true);
    while (s.gts.size() != 2) {
        static uint32_t id = 100;
        s = render_scene(spec, 9, ++id, Domain::source, true);
    }

    auto props = generate_proposals(s, 4, 1, 77, spec.object_size_min, spec.object_size_max);
    CHECK(props.size() == 10);  // 2*3 + 4
    for (const auto& b : props) {
        CHECK(b.valid());
        CHECK(b.x2 <= spec.width);
        CHECK(b.y2 <= spec.height);
    }

    auto zero_jitter =
        generate_proposals(s, 4, 0, 77, spec.object_size_min, spec.object_size_max);
    for (size_t g = 0; g < s.gts.size(); ++g)
        for (int k = 0; k < 3; ++k) CHECK(zero_jitter[g * 3 + k] == s.gts[g].box);

    Scene free_scene = render_scene(spec, 9, 50, Domain::target, false);
    REQUIRE(free_scene.gts.empty());
    auto free_props =
        generate_proposals(free_scene, 4, 1, 77, spec.object_size_min, spec.object_size_max);
    CHECK(free_props.size() == 4);

    // deterministic in the seed
    auto again = generate_proposals(s, 4, 1, 77, spec.object_size_min, spec.object_size_max);
    CHECK(again == props);
    auto other = generate_proposals(s, 4, 1, 78, spec.object_size_min, spec.object_size_max);
    CHECK(other != props);
}

TEST_CASE("load_dataset: round-trip equality and corruption detection") {
    auto dir = temp_dir("load");
    auto spec = small_spec();
    generate_dataset(spec, {3, 3, 2}, 11, dir);
    auto ds = load_dataset(dir);
    REQUIRE(ds.scenes.size() == 8);

    for (const auto& scene : ds.scenes) {
        Domain dom = ds.manifest.split_of(scene.id) == Split::source_train ? Domain::source
                                                                           : Domain::target;
        bool objects = ds.manifest.split_of(scene.id) != Split::target_train;
        Scene expect = render_scene(spec, 11, scene.id, dom, objects);
        CHECK(scene.same_content(expect));
    }

    SECTION("corrupted scene byte is reported with the scene id") {
        auto victim = dir / "scenes" / ds.manifest.scenes[4].file;
        auto bytes = read_file(victim);
        bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
        write_file(victim, bytes);
        CHECK_THROWS_WITH(load_dataset(dir),
                          Catch::Matchers::ContainsSubstring("scene 4") &&
                              Catch::Matchers::ContainsSubstring("checksum"));
    }

    SECTION("missing scene file is reported") {
        fs::remove(dir / "scenes" / ds.manifest.scenes[2].file);
        CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("missing"));
    }

    SECTION("edited manifest spec fails the spec hash check") {
        auto j = ordered_json::parse(read_file(dir / "manifest.json"));
        j["spec"]["classes"] = 5;
        write_file(dir / "manifest.json", j.dump(2) + "\n");
        CHECK_THROWS_WITH(load_dataset(dir),
                          Catch::Matchers::ContainsSubstring("spec hash"));
    }
}

TEST_CASE("scene file encode/decode round trip") {
    auto spec = small_spec();
    Scene s = render_scene(spec, 3, 2, Domain::source, true);
    Scene back = decode_scene(encode_scene(s), s.id, "test");
    CHECK(back.same_content(s));
    CHECK(scene_filename(7) == "000007");
    CHECK(scene_filename(123456) == "123456");
}
