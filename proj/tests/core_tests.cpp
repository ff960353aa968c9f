#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "datum/core/checkpoint.hpp"
#include "datum/core/hash.hpp"
#include "datum/core/image.hpp"
#include "datum/core/manifest.hpp"
#include "datum/core/png_io.hpp"
#include "datum/core/rng.hpp"
#include "datum/core/tomlmini.hpp"

namespace fs = std::filesystem;
using namespace datum;

static fs::path temp_dir(const char* tag) {
    fs::path d = fs::temp_directory_path() / (std::string("datum_core_") + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

TEST_CASE("pcg32 reference stream") {
    // First outputs of pcg32 seeded (42, 54), from the reference implementation.
    Rng rng(42, 54);
    CHECK(rng.next_u32() == 0xa15c02b7u);
    CHECK(rng.next_u32() == 0x7b47f409u);
    CHECK(rng.next_u32() == 0xba1d3330u);
    CHECK(rng.next_u32() == 0x83d2f293u);
    CHECK(rng.next_u32() == 0xbfa4784bu);
    CHECK(rng.next_u32() == 0xcbed606eu);
}

TEST_CASE("rng helpers stay in range and reproduce") {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) {
        double u = a.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == b.uniform());
    }
    Rng c(9);
    for (int i = 0; i < 1000; ++i) {
        int v = c.uniform_int(-3, 5);
        CHECK(v >= -3);
        CHECK(v <= 5);
    }
    Rng d(11);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double z = d.normal();
        mean += z;
        var += z * z;
    }
    mean /= n;
    var = var / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("derived seeds differ by tag and index") {
    std::set<std::uint64_t> seen;
    seen.insert(derive_seed(123, std::string("pretrain")));
    seen.insert(derive_seed(123, std::string("adapt")));
    for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(123, i));
    CHECK(seen.size() == 102);
    CHECK(derive_seed(123, std::string("pretrain")) == derive_seed(123, std::string("pretrain")));
}

TEST_CASE("quantize and dequantize round trip on byte values") {
    for (int b = 0; b < 256; ++b) {
        float v = dequantize_channel(static_cast<std::uint8_t>(b));
        CHECK(quantize_channel(v) == b);
    }
    CHECK(quantize_channel(-1.5f) == 0);
    CHECK(quantize_channel(2.0f) == 255);
    CHECK(quantize_channel(-1.0f) == 0);
    CHECK(quantize_channel(1.0f) == 255);
}

TEST_CASE("crop extracts the expected window") {
    LabeledImage img;
    img.height = 4;
    img.width = 5;
    img.labeled = true;
    img.pixels.resize(3, 20);
    img.mask.resize(20);
    for (int i = 0; i < 20; ++i) {
        img.pixels.col(i).setConstant(static_cast<float>(i));
        img.mask[i] = static_cast<std::uint8_t>(i);
    }
    LabeledImage c = crop(img, 2, 1, 2);
    CHECK(c.height == 2);
    CHECK(c.width == 2);
    CHECK(c.pixels(0, 0) == 7.0f);   // (y=1,x=2)
    CHECK(c.pixels(0, 1) == 8.0f);   // (y=1,x=3)
    CHECK(c.pixels(0, 2) == 12.0f);  // (y=2,x=2)
    CHECK(c.mask[3] == 13);
}

TEST_CASE("png round trip is lossless and deterministic") {
    fs::path d = temp_dir("png");
    const int w = 13, h = 9;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
    Rng rng(5);
    for (auto& b : rgb) b = static_cast<std::uint8_t>(rng.next_u32() & 0xff);
    write_png_rgb8((d / "a.png").string(), w, h, rgb);
    write_png_rgb8((d / "b.png").string(), w, h, rgb);
    PngImage back = read_png((d / "a.png").string());
    CHECK(back.width == w);
    CHECK(back.height == h);
    CHECK(back.channels == 3);
    CHECK(back.data == rgb);

    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(bytes(d / "a.png") == bytes(d / "b.png"));

    std::vector<std::uint8_t> gray(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(i % 7);
    write_png_gray8((d / "g.png").string(), w, h, gray);
    PngImage g = read_png((d / "g.png").string());
    CHECK(g.channels == 1);
    CHECK(g.data == gray);
}

TEST_CASE("manifest round trip") {
    fs::path d = temp_dir("manifest");
    DatasetManifest m;
    m.domain_tag = DomainTag::source;
    m.labeled = true;
    m.seed = 77;
    m.items.push_back({"images/0.png", "masks/0.png", "style=source;layout_seed=1"});
    m.items.push_back({"images/1.png", "masks/1.png", "style=source;layout_seed=2"});
    save_manifest(m, d.string());
    DatasetManifest back = load_manifest(d.string());
    CHECK(back.domain_tag == DomainTag::source);
    CHECK(back.labeled);
    CHECK(back.seed == 77);
    CHECK(back.items.size() == 2);
    CHECK(back.items[1].image == "images/1.png");
    CHECK(back.root == d.string());
    CHECK(provenance_value(back.items[0].provenance, "style") == "source");
    CHECK(provenance_value("prompt=a photo of a vstar car;sample_seed=9", "prompt") ==
          "a photo of a vstar car");
    CHECK(provenance_value("prompt=a photo of a vstar car;sample_seed=9", "sample_seed") == "9");
    CHECK(provenance_value("a=b", "missing").empty());
}

TEST_CASE("unlabeled manifest omits masks") {
    fs::path d = temp_dir("manifest_u");
    DatasetManifest m;
    m.domain_tag = DomainTag::target;
    m.labeled = false;
    m.seed = 3;
    m.items.push_back({"images/0.png", "", "style=target"});
    save_manifest(m, d.string());
    DatasetManifest back = load_manifest(d.string());
    CHECK_FALSE(back.labeled);
    CHECK(back.items[0].mask.empty());
}

TEST_CASE("labeled manifest with missing mask path is rejected") {
    fs::path d = temp_dir("manifest_bad");
    DatasetManifest m;
    m.domain_tag = DomainTag::source;
    m.labeled = true;
    m.seed = 1;
    m.items.push_back({"images/0.png", "", ""});
    save_manifest(m, d.string());
    CHECK_THROWS_AS(load_manifest(d.string()), Error);
}

TEST_CASE("mask audit hook sees every mask read") {
    fs::path d = temp_dir("audit");
    fs::create_directories(d / "images");
    fs::create_directories(d / "masks");
    std::vector<std::uint8_t> rgb(16 * 16 * 3, 100);
    std::vector<std::uint8_t> mask(16 * 16, 2);
    write_png_rgb8((d / "images/0.png").string(), 16, 16, rgb);
    write_png_gray8((d / "masks/0.png").string(), 16, 16, mask);
    DatasetManifest m;
    m.domain_tag = DomainTag::target;
    m.labeled = true;
    m.seed = 0;
    m.items.push_back({"images/0.png", "masks/0.png", ""});
    save_manifest(m, d.string());

    std::vector<std::string> seen;
    DatasetReader::set_mask_audit([&](const DatasetManifest& mf, std::size_t i) {
        seen.push_back(mf.items[i].mask);
    });
    DatasetReader reader(load_manifest(d.string()));
    reader.load_image(0);
    CHECK(seen.empty());
    reader.load_labeled(0);
    CHECK(seen.size() == 1);
    reader.load_mask(0);
    CHECK(seen.size() == 2);
    DatasetReader::set_mask_audit(nullptr);
    reader.load_mask(0);
    CHECK(seen.size() == 2);
    CHECK(seen[0].find("masks/0.png") != std::string::npos);

    LabeledImage img = reader.load_labeled(0);
    CHECK(img.height == 16);
    CHECK(img.width == 16);
    CHECK(img.mask[0] == 2);
    CHECK(img.pixels(0, 0) == doctest::Approx(100.0f / 255.0f * 2.0f - 1.0f));
}

TEST_CASE("checkpoint round trip preserves bytes and values") {
    fs::path d = temp_dir("ckpt");
    NamedTensors t;
    t["b.weight"] = {{2, 3}, {1, 2, 3, 4, 5, 6}};
    t["a.bias"] = {{4}, {0.5f, -0.5f, 0.25f, 0.0f}};
    save_weights((d / "c1").string(), t);
    save_meta((d / "c1").string(), "{\"step\": 10}");
    CHECK(checkpoint_exists((d / "c1").string()));
    NamedTensors back = load_weights((d / "c1").string());
    CHECK(back.size() == 2);
    CHECK(back["a.bias"].shape == std::vector<std::int64_t>{4});
    CHECK(back["b.weight"].data == t["b.weight"].data);

    // Same tensors inserted in a different order serialize to identical bytes.
    NamedTensors t2;
    t2["a.bias"] = t["a.bias"];
    t2["b.weight"] = t["b.weight"];
    save_weights((d / "c2").string(), t2);
    std::ifstream f1(d / "c1/weights.bin", std::ios::binary), f2(d / "c2/weights.bin", std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK_FALSE(checkpoint_exists((d / "missing").string()));
    CHECK(load_meta_text((d / "c1").string()).find("\"step\"") != std::string::npos);
}

TEST_CASE("config hash ignores key order and tracks content") {
    nlohmann::json a = {{"lr", 0.0001}, {"iters", 200}, {"prompt", "a photo of a vstar urban scene"}};
    nlohmann::json b = {{"prompt", "a photo of a vstar urban scene"}, {"iters", 200}, {"lr", 0.0001}};
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 32);
    b["iters"] = 201;
    CHECK(config_hash(a) != config_hash(b));

    std::string k1 = stage_key(a, {"abc", "def"});
    std::string k2 = stage_key(a, {"def", "abc"});
    CHECK(k1 != k2);  // upstream order is positional
    CHECK(k1 == stage_key(a, {"abc", "def"}));
    CHECK(k1 != config_hash(a));
}

TEST_CASE("config parser handles tables, types, arrays, comments") {
    const char* text = R"(# top comment
title = "datum run"  # trailing
seed = 42
lr = 6e-4
flag = true

[pretrain]
steps = 5000
widths = [32, 64, 128]

[pretrain.text]
max_len = 8
prompt = "a photo of a vstar urban scene"

[adapt]
tau = 0.9
names = ["a", "b # not a comment", "c,d"]
)";
    nlohmann::json j = parse_toml(text);
    CHECK(j["title"] == "datum run");
    CHECK(j["seed"] == 42);
    CHECK(j["seed"].is_number_integer());
    CHECK(j["lr"].get<double>() == doctest::Approx(6e-4));
    CHECK(j["flag"] == true);
    CHECK(j["pretrain"]["steps"] == 5000);
    CHECK(j["pretrain"]["widths"] == nlohmann::json({32, 64, 128}));
    CHECK(j["pretrain"]["text"]["max_len"] == 8);
    CHECK(j["pretrain"]["text"]["prompt"] == "a photo of a vstar urban scene");
    CHECK(j["adapt"]["tau"].get<double>() == doctest::Approx(0.9));
    CHECK(j["adapt"]["names"][1] == "b # not a comment");
    CHECK(j["adapt"]["names"][2] == "c,d");

    CHECK_THROWS_AS(parse_toml("key"), Error);
    CHECK_THROWS_AS(parse_toml("[unclosed"), Error);
    CHECK_THROWS_AS(parse_toml("x = "), Error);
    CHECK_THROWS_AS(parse_toml("x = zebra"), Error);
}
