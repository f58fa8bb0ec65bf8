// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "patchlab/data.hpp"
#include "patchlab/image_io.hpp"
#include "patchlab/detector.hpp"

#include "oracles.hpp"

using namespace patchlab;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const char* name) {
    const fs::path d = fs::temp_directory_path() / "patchlab_test_data" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

} // namespace

TEST_CASE("letterbox of a square image is a pure resize") {
    Rng rng(1);
    const Tensor img = oracles::random_tensor({3, 100, 100}, rng);
    const auto res = letterbox(img, 160);
    CHECK(res.map.scale == 1.6);
    CHECK(res.map.pad_x == 0.0);
    CHECK(res.map.pad_y == 0.0);
    CHECK(res.image.shape == std::vector<int>{3, 160, 160});
}

TEST_CASE("letterbox is exact identity on already-letterboxed input") {
    Rng rng(2);
    const Tensor img = oracles::random_tensor({3, 160, 160}, rng);
    const auto res = letterbox(img, 160);
    CHECK(res.image.data == img.data);
    CHECK(res.map.scale == 1.0);
}

TEST_CASE("2:1 letterbox pads a quarter top and bottom") {
    Rng rng(3);
    const Tensor img = oracles::random_tensor({3, 100, 200}, rng);
    const auto res = letterbox(img, 160);
    CHECK(res.map.scale == 0.8);
    CHECK(res.map.pad_x == 0.0);
    CHECK(res.map.pad_y == 40.0); // 160/4
    for (int y = 0; y < 40; ++y)
        for (int c = 0; c < 3; ++c) {
            CHECK(res.image.at3(c, y, 7) == 0.5);
            CHECK(res.image.at3(c, 159 - y, 7) == 0.5);
        }
}

TEST_CASE("box remapping round-trips") {
    Rng rng(4);
    const LetterboxMap m{0.8, 0.0, 40.0};
    for (int i = 0; i < 30; ++i) {
        const double x = rng.uniform(0, 150), y = rng.uniform(0, 80);
        const Box b{x, y, x + rng.uniform(2, 40), y + rng.uniform(2, 15)};
        const Box back = unmap_box(remap_box(b, m), m);
        CHECK(std::abs(back.x1 - b.x1) < 0.51);
        CHECK(std::abs(back.y1 - b.y1) < 1e-9);
        CHECK(std::abs(back.x2 - b.x2) < 1e-9);
        CHECK(std::abs(back.y2 - b.y2) < 1e-9);
    }
}

TEST_CASE("gen_synthetic is seeded and respects box constraints") {
    const auto a = gen_synthetic(8, 96, 42);
    const auto b = gen_synthetic(8, 96, 42);
    REQUIRE(a.size() == 8);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image.data == b[i].image.data);
        CHECK(a[i].id == b[i].id);
        REQUIRE(a[i].gt.size() == b[i].gt.size());
        CHECK(a[i].gt.size() >= 1);
        CHECK(a[i].gt.size() <= 4);
        for (size_t j = 0; j < a[i].gt.size(); ++j) {
            const Box& g = a[i].gt[j];
            CHECK(g.x1 >= 0.0);
            CHECK(g.y1 >= 0.0);
            CHECK(g.x2 <= 96.0);
            CHECK(g.y2 <= 96.0);
            CHECK(g.area() >= 0.05 * 96 * 0.05 * 96);
        }
        CHECK(min_value(a[i].image) >= 0.0);
        CHECK(max_value(a[i].image) <= 1.0);
    }
    const auto c = gen_synthetic(8, 96, 43);
    CHECK(a[0].image.data != c[0].image.data);
}

TEST_CASE("dataset save/load round-trip") {
    const fs::path dir = tmpdir("roundtrip");
    auto pool = gen_synthetic(6, 64, 7);
    const std::vector<Scene> train(pool.begin(), pool.begin() + 4);
    const std::vector<Scene> test(pool.begin() + 4, pool.end());
    save_dataset(dir, train, test);

    const auto manifest = read_manifest(dir);
    REQUIRE(manifest.size() == 6);
    CHECK(manifest[0].second == "train");
    CHECK(manifest[4].second == "test");

    const auto loaded = load_split(dir, "train", 64);
    REQUIRE(loaded.size() == 4);
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].id == train[i].id);
        // loaded pixels are the 8-bit quantization of the generated scene
        double worst = 0.0;
        for (int64_t t = 0; t < loaded[i].image.numel(); ++t) {
            const double q = std::lround(train[i].image[t] * 255.0) / 255.0;
            worst = std::max(worst, std::abs(loaded[i].image[t] - q));
        }
        CHECK(worst == 0.0);
        REQUIRE(loaded[i].gt.size() == train[i].gt.size());
        for (size_t j = 0; j < loaded[i].gt.size(); ++j) {
            CHECK(std::abs(loaded[i].gt[j].x1 - train[i].gt[j].x1) < 0.51);
            CHECK(std::abs(loaded[i].gt[j].y2 - train[i].gt[j].y2) < 0.51);
        }
    }
    // loading twice gives identical scenes (byte-determinism upstream)
    const auto again = load_split(dir, "train", 64);
    CHECK(again[0].image.data == loaded[0].image.data);
}

TEST_CASE("load_split letterboxes non-square external images") {
    const fs::path dir = tmpdir("external");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    Rng rng(11);
    Tensor wide = oracles::random_tensor({3, 50, 100}, rng);
    write_png(dir / "images" / "ext_0.png", wide);
    {
        std::ofstream lab(dir / "labels" / "ext_0.txt");
        lab << "0.5 0.5 0.2 0.4\n"; // centered box, 20x20 px in the original
    }
    {
        std::ofstream man(dir / "manifest.txt");
        man << "ext_0 train\n";
    }
    const auto scenes = load_split(dir, "train", 64);
    REQUIRE(scenes.size() == 1);
    CHECK(scenes[0].image.shape == std::vector<int>{3, 64, 64});
    REQUIRE(scenes[0].gt.size() == 1);
    // scale 64/100 = 0.64, pad_y = (64-32)/2 = 16
    const Box& g = scenes[0].gt[0];
    CHECK(g.x1 == doctest::Approx(40 * 0.64).epsilon(1e-9));
    CHECK(g.y1 == doctest::Approx(15 * 0.64 + 16).epsilon(1e-9));
}

TEST_CASE("malformed labels and manifests are parse errors") {
    const fs::path dir = tmpdir("malformed");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    Rng rng(12);
    write_png(dir / "images" / "s.png", oracles::random_tensor({3, 32, 32}, rng));
    {
        std::ofstream man(dir / "manifest.txt");
        man << "s train\n";
    }
    {
        std::ofstream lab(dir / "labels" / "s.txt");
        lab << "0.5 0.5 nonsense\n";
    }
    CHECK_THROWS_WITH_AS(load_split(dir, "train", 64), doctest::Contains("line 1"), Error);
    {
        std::ofstream man(dir / "manifest.txt");
        man << "brokenline\n";
    }
    CHECK_THROWS_AS(read_manifest(dir), Error);
}

TEST_CASE("regenerate_gt drops everything at threshold 1.0 and lists the scenes") {
    auto scenes = gen_synthetic(5, 64, 21);
    const DetectorModel model = make_detector(64, 3);
    const auto sum = regenerate_gt(model, scenes, 1.0, 0.5);
    CHECK(sum.scenes_in == 5);
    CHECK(sum.scenes_kept == 0);
    CHECK(sum.dropped_ids.size() == 5);
    CHECK(scenes.empty());
}

TEST_CASE("regenerate_gt is deterministic") {
    const DetectorModel model = make_detector(64, 3);
    auto s1 = gen_synthetic(5, 64, 22);
    auto s2 = gen_synthetic(5, 64, 22);
    const auto r1 = regenerate_gt(model, s1, 0.05, 0.1);
    const auto r2 = regenerate_gt(model, s2, 0.05, 0.1);
    CHECK(r1.scenes_kept == r2.scenes_kept);
    CHECK(r1.boxes_out == r2.boxes_out);
    REQUIRE(s1.size() == s2.size());
    for (size_t i = 0; i < s1.size(); ++i) {
        REQUIRE(s1[i].gt.size() == s2[i].gt.size());
        for (size_t j = 0; j < s1[i].gt.size(); ++j) {
            CHECK(s1[i].gt[j].x1 == s2[i].gt[j].x1);
            CHECK(s1[i].gt[j].y2 == s2[i].gt[j].y2);
        }
    }
}
