#include "datum/scenegen/scenegen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "datum/core/error.hpp"
#include "datum/core/png_io.hpp"

namespace fs = std::filesystem;

namespace datum {

namespace {

const std::array<std::string, kNumClasses> kClassNames = {"sky", "road", "building",
                                                          "car", "pedestrian", "sign"};

bool boxes_overlap(const PlacedThing& a, const PlacedThing& b) {
    return a.x0 < b.x0 + b.w && b.x0 < a.x0 + a.w && a.y0 < b.y0 + b.h && b.y0 < a.y0 + a.h;
}

void stamp(SceneLayout& s, const PlacedThing& t) {
    for (int y = t.y0; y < t.y0 + t.h; ++y)
        for (int x = t.x0; x < t.x0 + t.w; ++x) s.grid[y * s.width + x] = static_cast<std::uint8_t>(t.cls);
}

}  // namespace

const std::string& class_name(int cls) {
    if (cls < 0 || cls >= kNumClasses) throw Error("class id out of range");
    return kClassNames[static_cast<std::size_t>(cls)];
}

int class_id(const std::string& name) {
    for (int i = 0; i < kNumClasses; ++i)
        if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
    return -1;
}

namespace {

bool try_layout(const LayoutConfig& config, Rng& rng, SceneLayout& s) {
    const int H = config.height, W = config.width;
    s = SceneLayout{};
    s.height = H;
    s.width = W;
    s.grid = MaskArray::Constant(H * W, kSky);

    const int horizon = H / 3;             // rows <= horizon hold only sky/building
    const int road_top = (2 * H) / 3 + rng.uniform_int(0, std::max(1, H / 12));
    for (int y = road_top; y < H; ++y)
        for (int x = 0; x < W; ++x) s.grid[y * W + x] = kRoad;

    // Skyline: building columns from a sampled top row down to the road.
    int buildings = rng.uniform_int(2, 5);
    for (int b = 0; b < buildings; ++b) {
        int w = rng.uniform_int(4, std::min(10, W - 1));
        int x0 = rng.uniform_int(0, W - w);
        int top = rng.uniform_int(2, horizon);
        for (int y = top; y < road_top; ++y)
            for (int x = x0; x < x0 + w; ++x) s.grid[y * W + x] = kBuilding;
    }

    const int band_h = H - road_top;
    int n_things = rng.uniform_int(config.min_things, config.max_things);
    for (int i = 0; i < n_things; ++i) {
        int cls = config.dominant >= 0 ? config.dominant : rng.uniform_int(kCar, kSign);
        PlacedThing t;
        t.cls = cls;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            if (cls == kCar) {
                t.w = rng.uniform_int(5, 8);
                t.h = rng.uniform_int(3, std::min(5, band_h));
                t.y0 = rng.uniform_int(road_top, H - t.h);
            } else if (cls == kPedestrian) {
                t.h = rng.uniform_int(std::min(5, band_h), std::min(7, band_h));
                t.w = rng.uniform_int(2, 3);
                t.y0 = rng.uniform_int(road_top, H - t.h);
            } else {
                t.w = rng.uniform_int(3, 4);
                t.h = rng.uniform_int(3, 4);
                t.y0 = rng.uniform_int(horizon + 1, road_top - t.h);
            }
            t.x0 = rng.uniform_int(0, W - t.w);
            placed = true;
            for (const auto& other : s.placed_things)
                if (boxes_overlap(t, other)) {
                    placed = false;
                    break;
                }
        }
        if (!placed) return false;
        s.placed_things.push_back(t);
        stamp(s, t);
    }
    return true;
}

}  // namespace

SceneLayout sample_layout(const LayoutConfig& config, Rng& rng) {
    if (config.height < 16 || config.width < 16) throw Error("layout smaller than 16x16");
    if (config.min_things < 0 || config.min_things > config.max_things)
        throw Error("bad things range");
    SceneLayout s;
    // Dense configurations can paint themselves into a corner; resample the
    // whole scene rather than accept a short count.
    for (int attempt = 0; attempt < 100; ++attempt)
        if (try_layout(config, rng, s)) return s;
    throw Error("could not place things at the requested density");
}

LabeledImage render(const SceneLayout& layout, const StyleParams& style, Rng& rng) {
    const int H = layout.height, W = layout.width;
    for (int i = 0; i < H * W; ++i)
        if (!style.palette.count(layout.grid[i]))
            throw Error("palette has no entry for class " + std::to_string(int(layout.grid[i])));

    // Hue shift = rotation about the gray axis (1,1,1)/sqrt(3).
    const float th = style.hue_shift_deg * 3.14159265358979323846f / 180.0f;
    const float c = std::cos(th), s = std::sin(th);
    Eigen::Matrix3f rot;
    const float k = 1.0f / std::sqrt(3.0f);
    Eigen::Matrix3f cross;
    cross << 0, -k, k, k, 0, -k, -k, k, 0;
    rot = c * Eigen::Matrix3f::Identity() + s * cross +
          (1.0f - c) * Eigen::Matrix3f::Constant(1.0f / 3.0f);

    std::map<int, Eigen::Vector3f> base;
    for (const auto& [cls, rgb] : style.palette) {
        Eigen::Vector3f v(rgb[0] / 255.0f, rgb[1] / 255.0f, rgb[2] / 255.0f);
        base[cls] = rot * v;
    }

    const float cx = (W - 1) / 2.0f, cy = (H - 1) / 2.0f;
    const float rmax2 = cx * cx + cy * cy;

    LabeledImage img;
    img.height = H;
    img.width = W;
    img.labeled = true;
    img.mask = layout.grid;
    img.pixels.resize(3, H * W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int idx = y * W + x;
            Eigen::Vector3f v = base[layout.grid[idx]];
            if (style.texture_noise_sd > 0.0f)
                for (int ch = 0; ch < 3; ++ch)
                    v[ch] += style.texture_noise_sd * static_cast<float>(rng.normal());
            if (style.vignette_strength > 0.0f) {
                float r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / rmax2;
                v *= 1.0f - style.vignette_strength * r2;
            }
            for (int ch = 0; ch < 3; ++ch) {
                float u = std::min(1.0f, std::max(0.0f, v[ch]));
                img.pixels(ch, idx) = 2.0f * u - 1.0f;
            }
        }
    }
    return img;
}

const std::map<int, Rgb>& default_palette() {
    static const std::map<int, Rgb> p = {
        {kSky, {135, 206, 235}},  {kRoad, {90, 90, 95}},      {kBuilding, {170, 120, 90}},
        {kCar, {200, 40, 40}},    {kPedestrian, {40, 170, 60}}, {kSign, {230, 200, 40}},
    };
    return p;
}

StyleParams source_style() {
    StyleParams s;
    s.palette = default_palette();
    s.texture_noise_sd = 0.02f;
    s.vignette_strength = 0.0f;
    s.hue_shift_deg = 0.0f;
    s.style_id = 0;
    return s;
}

StyleParams target_style() {
    StyleParams s;
    s.palette = default_palette();
    s.texture_noise_sd = 0.10f;
    s.vignette_strength = 0.35f;
    s.hue_shift_deg = 70.0f;
    s.style_id = 1;
    return s;
}

std::vector<StyleParams> prior_styles() {
    // Spread around the hue circle with varied noise/vignette; the exact
    // target combination (70, 0.10, 0.35) is deliberately absent.
    struct Row {
        float hue, noise, vig;
    };
    static const Row rows[8] = {
        {-140.0f, 0.03f, 0.10f}, {-90.0f, 0.08f, 0.00f}, {-45.0f, 0.05f, 0.30f},
        {-15.0f, 0.10f, 0.15f},  {25.0f, 0.04f, 0.40f},  {55.0f, 0.12f, 0.05f},
        {110.0f, 0.06f, 0.25f},  {160.0f, 0.09f, 0.20f},
    };
    std::vector<StyleParams> out;
    for (int i = 0; i < 8; ++i) {
        StyleParams s;
        s.palette = default_palette();
        s.hue_shift_deg = rows[i].hue;
        s.texture_noise_sd = rows[i].noise;
        s.vignette_strength = rows[i].vig;
        s.style_id = 2 + i;
        out.push_back(s);
    }
    return out;
}

DatasetManifest make_dataset(const DomainSpec& spec, std::uint64_t seed,
                             const std::string& out_dir) {
    if (spec.n < 1) throw Error("dataset size must be at least 1");
    fs::create_directories(fs::path(out_dir) / "images");
    if (spec.labeled) fs::create_directories(fs::path(out_dir) / "masks");

    DatasetManifest m;
    m.domain_tag = spec.tag;
    m.labeled = spec.labeled;
    m.seed = static_cast<std::int64_t>(seed);
    m.root = out_dir;

    for (int i = 0; i < spec.n; ++i) {
        std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        const StyleParams& style = spec.style_rotation.empty()
                                       ? spec.style
                                       : spec.style_rotation[i % spec.style_rotation.size()];
        LayoutConfig lc = spec.layout;
        std::string dominant_field;
        if (spec.rotate_dominant) {
            int phase = i % 4;  // none, car, pedestrian, sign
            if (phase == 0) {
                lc.dominant = -1;
                dominant_field = ";dominant=none";
            } else {
                lc.dominant = kFirstThing + phase - 1;
                lc.min_things = 3;
                lc.max_things = 5;
                dominant_field = ";dominant=" + class_name(lc.dominant);
            }
        }
        Rng lay_rng(item_seed, 0);
        Rng px_rng(item_seed, 1);
        SceneLayout layout = sample_layout(lc, lay_rng);
        LabeledImage img = render(layout, style, px_rng);

        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", i);
        std::vector<std::uint8_t> rgb(static_cast<std::size_t>(img.height) * img.width * 3);
        for (int p = 0; p < img.height * img.width; ++p)
            for (int ch = 0; ch < 3; ++ch)
                rgb[static_cast<std::size_t>(p) * 3 + ch] = quantize_channel(img.pixels(ch, p));
        write_png_rgb8((fs::path(out_dir) / "images" / name).string(), img.width, img.height, rgb);

        ManifestItem item;
        item.image = std::string("images/") + name;
        if (spec.labeled) {
            std::vector<std::uint8_t> mask(img.mask.data(), img.mask.data() + img.mask.size());
            write_png_gray8((fs::path(out_dir) / "masks" / name).string(), img.width, img.height,
                            mask);
            item.mask = std::string("masks/") + name;
        }
        item.provenance = "item_seed=" + std::to_string(item_seed) +
                          ";style=" + std::to_string(style.style_id) + dominant_field;
        m.items.push_back(std::move(item));
    }
    save_manifest(m, out_dir);
    return m;
}

Eigen::VectorXd class_histogram(const DatasetManifest& manifest) {
    if (!manifest.labeled) throw Error("class histogram needs a labeled manifest");
    DatasetReader reader(manifest);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(kNumClasses);
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
        MaskArray mask = reader.load_mask(i);
        for (Eigen::Index p = 0; p < mask.size(); ++p) {
            if (mask[p] >= kNumClasses) throw Error("mask value out of class range");
            counts[mask[p]] += 1.0;
        }
    }
    double total = counts.sum();
    if (total <= 0.0) throw Error("empty masks");
    return counts / total;
}

void make_benchmark(const std::string& root, std::uint64_t seed, const BenchmarkSizes& sizes) {
    auto sub = [&](const char* d) { return (fs::path(root) / d).string(); };

    DomainSpec src;
    src.tag = DomainTag::source;
    src.labeled = true;
    src.style = source_style();
    src.n = sizes.source_train;
    make_dataset(src, derive_seed(seed, std::string("source_train")), sub("source_train"));
    src.n = sizes.source_test;
    make_dataset(src, derive_seed(seed, std::string("source_test")), sub("source_test"));

    DomainSpec tgt;
    tgt.tag = DomainTag::target;
    tgt.style = target_style();
    tgt.labeled = false;
    tgt.n = sizes.target_train;
    make_dataset(tgt, derive_seed(seed, std::string("target_train")), sub("target_train"));
    tgt.labeled = true;
    tgt.n = sizes.target_test;
    make_dataset(tgt, derive_seed(seed, std::string("target_test")), sub("target_test"));

    DomainSpec pool = tgt;
    pool.labeled = false;
    pool.n = sizes.datum_pool;
    pool.layout.height = 64;
    pool.layout.width = 64;
    make_dataset(pool, derive_seed(seed, std::string("datum_pool")), sub("datum_pool"));

    DomainSpec prior;
    prior.tag = DomainTag::prior;
    prior.labeled = true;
    prior.style_rotation = prior_styles();
    prior.rotate_dominant = true;
    prior.n = sizes.prior;
    make_dataset(prior, derive_seed(seed, std::string("prior")), sub("prior"));
}

}  // namespace datum
