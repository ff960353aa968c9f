#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "datum/core/error.hpp"
#include "datum/core/png_io.hpp"
#include "datum/scenegen/scenegen.hpp"

namespace fs = std::filesystem;
using namespace datum;

static fs::path temp_dir(const char* tag) {
    fs::path d = fs::temp_directory_path() / (std::string("datum_scenegen_") + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

static std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

TEST_CASE("same seed gives identical layouts") {
    LayoutConfig cfg;
    Rng a(99), b(99);
    SceneLayout la = sample_layout(cfg, a);
    SceneLayout lb = sample_layout(cfg, b);
    CHECK((la.grid == lb.grid).all());
    REQUIRE(la.placed_things.size() == lb.placed_things.size());
    for (std::size_t i = 0; i < la.placed_things.size(); ++i) {
        CHECK(la.placed_things[i].cls == lb.placed_things[i].cls);
        CHECK(la.placed_things[i].x0 == lb.placed_things[i].x0);
        CHECK(la.placed_things[i].y0 == lb.placed_things[i].y0);
    }
}

TEST_CASE("zero things leaves only stuff classes") {
    LayoutConfig cfg;
    cfg.min_things = 0;
    cfg.max_things = 0;
    Rng rng(5);
    SceneLayout l = sample_layout(cfg, rng);
    CHECK(l.placed_things.empty());
    for (Eigen::Index i = 0; i < l.grid.size(); ++i) CHECK(l.grid[i] <= kBuilding);
}

TEST_CASE("layout band and box invariants hold across seeds and sizes") {
    for (int hw : {16, 32, 48}) {
        LayoutConfig cfg;
        cfg.height = hw;
        cfg.width = hw;
        for (int seed = 0; seed < 50; ++seed) {
            Rng rng(static_cast<std::uint64_t>(seed));
            SceneLayout l = sample_layout(cfg, rng);
            int horizon = hw / 3;
            for (int y = 0; y <= horizon; ++y)
                for (int x = 0; x < hw; ++x) {
                    int c = l.grid[y * hw + x];
                    CHECK((c == kSky || c == kBuilding));
                }
            bool sky_top = false;
            for (int x = 0; x < hw; ++x) sky_top |= l.grid[x] == kSky;
            CHECK(sky_top);
            bool road_bottom = false;
            for (int y = (2 * hw) / 3; y < hw; ++y)
                for (int x = 0; x < hw; ++x) road_bottom |= l.grid[y * hw + x] == kRoad;
            CHECK(road_bottom);
            CHECK(l.placed_things.size() >= 3);
            CHECK(l.placed_things.size() <= 7);
            for (const auto& t : l.placed_things) {
                CHECK(t.x0 >= 0);
                CHECK(t.y0 > horizon);
                CHECK(t.x0 + t.w <= hw);
                CHECK(t.y0 + t.h <= hw);
                for (int y = t.y0; y < t.y0 + t.h; ++y)
                    for (int x = t.x0; x < t.x0 + t.w; ++x) CHECK(l.grid[y * hw + x] == t.cls);
            }
        }
    }
}

TEST_CASE("tiny canvases are rejected") {
    LayoutConfig cfg;
    cfg.height = 15;
    Rng rng(1);
    CHECK_THROWS_AS(sample_layout(cfg, rng), Error);
}

TEST_CASE("each things class appears in at least 30 percent of layouts") {
    LayoutConfig cfg;
    int present[3] = {0, 0, 0};
    const int n = 10000;
    Rng rng(2024);
    for (int i = 0; i < n; ++i) {
        SceneLayout l = sample_layout(cfg, rng);
        bool seen[3] = {false, false, false};
        for (const auto& t : l.placed_things) seen[t.cls - kFirstThing] = true;
        for (int c = 0; c < 3; ++c) present[c] += seen[c];
    }
    for (int c = 0; c < 3; ++c) CHECK(present[c] >= n * 3 / 10);
}

TEST_CASE("noiseless render reproduces palette colors exactly") {
    LayoutConfig cfg;
    Rng rng(3);
    SceneLayout l = sample_layout(cfg, rng);
    StyleParams style;
    style.palette = default_palette();
    Rng px(4);
    LabeledImage img = render(l, style, px);
    CHECK((img.mask == l.grid).all());
    for (int p = 0; p < l.height * l.width; ++p) {
        const Rgb& c = default_palette().at(l.grid[p]);
        for (int ch = 0; ch < 3; ++ch)
            CHECK(img.pixels(ch, p) == doctest::Approx(c[ch] / 255.0f * 2.0f - 1.0f).epsilon(1e-6));
    }
}

TEST_CASE("hue shift changes pixels but not the mask") {
    LayoutConfig cfg;
    Rng rng(6);
    SceneLayout l = sample_layout(cfg, rng);
    StyleParams a;
    a.palette = default_palette();
    StyleParams b = a;
    b.hue_shift_deg = 60.0f;
    Rng pa(7), pb(7);
    LabeledImage ia = render(l, a, pa);
    LabeledImage ib = render(l, b, pb);
    CHECK((ia.mask == ib.mask).all());
    CHECK((ia.pixels - ib.pixels).cwiseAbs().maxCoeff() > 0.05f);
}

TEST_CASE("mean color over noisy renders stays near the palette") {
    LayoutConfig cfg;
    Rng rng(8);
    SceneLayout l = sample_layout(cfg, rng);
    StyleParams style;
    style.palette = default_palette();
    style.texture_noise_sd = 0.08f;
    Eigen::Matrix3Xf acc = Eigen::Matrix3Xf::Zero(3, l.height * l.width);
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        Rng px(1000 + static_cast<std::uint64_t>(r));
        acc += render(l, style, px).pixels;
    }
    acc /= static_cast<float>(reps);
    Eigen::VectorXd err = Eigen::VectorXd::Zero(kNumClasses);
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(kNumClasses);
    for (int p = 0; p < l.height * l.width; ++p) {
        const Rgb& c = default_palette().at(l.grid[p]);
        for (int ch = 0; ch < 3; ++ch) {
            double want = c[ch] / 255.0 * 2.0 - 1.0;
            err[l.grid[p]] += std::abs(acc(ch, p) - want);
            cnt[l.grid[p]] += 1.0;
        }
    }
    for (int c = 0; c < kNumClasses; ++c)
        if (cnt[c] > 0) CHECK(err[c] / cnt[c] < 0.04);  // 0.02 in [0,1] units
}

TEST_CASE("render rejects a palette missing a present class") {
    LayoutConfig cfg;
    Rng rng(9);
    SceneLayout l = sample_layout(cfg, rng);
    StyleParams style;
    style.palette = default_palette();
    style.palette.erase(kRoad);
    Rng px(10);
    CHECK_THROWS_AS(render(l, style, px), Error);
}

TEST_CASE("single item dataset reloads and regenerates bit-exactly") {
    fs::path d = temp_dir("one");
    DomainSpec spec;
    spec.tag = DomainTag::source;
    spec.labeled = true;
    spec.n = 1;
    spec.style = source_style();
    DatasetManifest m = make_dataset(spec, 42, (d / "a").string());
    CHECK(m.items.size() == 1);
    DatasetManifest back = load_manifest((d / "a").string());
    CHECK(back.items.size() == 1);
    CHECK(back.seed == 42);

    make_dataset(spec, 42, (d / "b").string());
    CHECK(file_bytes(d / "a/images/0000.png") == file_bytes(d / "b/images/0000.png"));
    CHECK(file_bytes(d / "a/masks/0000.png") == file_bytes(d / "b/masks/0000.png"));
    CHECK(file_bytes(d / "a/manifest.json") == file_bytes(d / "b/manifest.json"));

    make_dataset(spec, 43, (d / "c").string());
    CHECK(file_bytes(d / "a/images/0000.png") != file_bytes(d / "c/images/0000.png"));
}

TEST_CASE("source histogram is stuff-heavy with bounded things classes") {
    fs::path d = temp_dir("hist");
    DomainSpec spec;
    spec.tag = DomainTag::source;
    spec.labeled = true;
    spec.n = 500;
    spec.style = source_style();
    DatasetManifest m = make_dataset(spec, 7, d.string());
    Eigen::VectorXd h = class_histogram(m);
    CHECK(h.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(h[kSky] + h[kRoad] + h[kBuilding] >= 0.70);
    for (int c = kFirstThing; c < kNumClasses; ++c) {
        CHECK(h[c] >= 0.01);
        CHECK(h[c] <= 0.15);
    }

    // Brute-force pixel count over the PNG masks, bypassing the reader.
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(kNumClasses);
    for (const auto& item : m.items) {
        PngImage mask = read_png((d / item.mask).string());
        for (std::uint8_t v : mask.data) counts[v] += 1.0;
    }
    counts /= counts.sum();
    for (int c = 0; c < kNumClasses; ++c) CHECK(h[c] == doctest::Approx(counts[c]).epsilon(1e-12));
}

TEST_CASE("histogram trivial cases and unlabeled rejection") {
    fs::path d = temp_dir("hist2");
    fs::create_directories(d / "images");
    fs::create_directories(d / "masks");
    std::vector<std::uint8_t> rgb(8 * 8 * 3, 0);
    std::vector<std::uint8_t> m0(8 * 8, 0), m1(8 * 8, 1);
    write_png_rgb8((d / "images/0.png").string(), 8, 8, rgb);
    write_png_rgb8((d / "images/1.png").string(), 8, 8, rgb);
    write_png_gray8((d / "masks/0.png").string(), 8, 8, m0);
    write_png_gray8((d / "masks/1.png").string(), 8, 8, m1);

    DatasetManifest m;
    m.domain_tag = DomainTag::source;
    m.labeled = true;
    m.seed = 0;
    m.root = d.string();
    m.items.push_back({"images/0.png", "masks/0.png", ""});
    Eigen::VectorXd h1 = class_histogram(m);
    CHECK(h1[0] == doctest::Approx(1.0));
    CHECK(h1.tail(kNumClasses - 1).cwiseAbs().maxCoeff() == 0.0);

    m.items.push_back({"images/1.png", "masks/1.png", ""});
    Eigen::VectorXd h2 = class_histogram(m);
    CHECK(h2[0] == doctest::Approx(0.5));
    CHECK(h2[1] == doctest::Approx(0.5));

    m.labeled = false;
    CHECK_THROWS_AS(class_histogram(m), Error);
}

TEST_CASE("prior corpus rotates styles and dominant classes") {
    fs::path d = temp_dir("prior");
    DomainSpec spec;
    spec.tag = DomainTag::prior;
    spec.labeled = true;
    spec.n = 16;
    spec.style_rotation = prior_styles();
    spec.rotate_dominant = true;
    DatasetManifest m = make_dataset(spec, 11, d.string());

    std::set<std::string> styles, doms;
    for (const auto& item : m.items) {
        styles.insert(provenance_value(item.provenance, "style"));
        doms.insert(provenance_value(item.provenance, "dominant"));
    }
    CHECK(styles.size() == 8);
    CHECK(doms == std::set<std::string>{"none", "car", "pedestrian", "sign"});

    // A car-dominant item carries at least 3 cars and no other thing class.
    DatasetReader reader(m);
    MaskArray mask = reader.load_mask(1);  // phase 1 of the rotation
    int cars = 0;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        CHECK(mask[i] != kPedestrian);
        CHECK(mask[i] != kSign);
        cars += mask[i] == kCar;
    }
    CHECK(cars >= 3 * 5 * 3);
}

TEST_CASE("target style parameters are absent from the prior styles") {
    StyleParams t = target_style();
    for (const auto& s : prior_styles()) {
        bool same = s.hue_shift_deg == t.hue_shift_deg &&
                    s.texture_noise_sd == t.texture_noise_sd &&
                    s.vignette_strength == t.vignette_strength;
        CHECK_FALSE(same);
    }
    CHECK(prior_styles().size() == 8);
}

TEST_CASE("class names map both ways") {
    CHECK(class_name(kCar) == "car");
    CHECK(class_id("pedestrian") == kPedestrian);
    CHECK(class_id("zebra") == -1);
    CHECK(is_thing(kSign));
    CHECK_FALSE(is_thing(kRoad));
}
