#ifndef DATUM_SCENEGEN_SCENEGEN_HPP
#define DATUM_SCENEGEN_SCENEGEN_HPP

#include <array>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "datum/core/image.hpp"
#include "datum/core/manifest.hpp"
#include "datum/core/rng.hpp"

namespace datum {

// Class ids. Stuff first, things after; several modules rely on this split.
inline constexpr int kNumClasses = 6;
inline constexpr int kSky = 0;
inline constexpr int kRoad = 1;
inline constexpr int kBuilding = 2;
inline constexpr int kCar = 3;
inline constexpr int kPedestrian = 4;
inline constexpr int kSign = 5;
inline constexpr int kFirstThing = kCar;

const std::string& class_name(int cls);
int class_id(const std::string& name);  // -1 if unknown
inline bool is_thing(int cls) { return cls >= kFirstThing; }

using Rgb = std::array<std::uint8_t, 3>;

struct StyleParams {
    std::map<int, Rgb> palette;
    float texture_noise_sd = 0.0f;   // in [0,1] pixel units, capped at 0.5
    float vignette_strength = 0.0f;  // in [0,1]
    float hue_shift_deg = 0.0f;      // rotation about the gray axis
    int style_id = 0;
};

struct LayoutConfig {
    int height = 32;
    int width = 32;
    int min_things = 3;
    int max_things = 7;
    int dominant = -1;  // things class forced on every placement, -1 for a mix
};

struct PlacedThing {
    int cls;
    int x0, y0, w, h;
};

struct SceneLayout {
    int height = 0;
    int width = 0;
    MaskArray grid;  // row-major, class ids
    std::vector<PlacedThing> placed_things;
};

// Band structure: rows [0, H/3] hold only sky and building, the road starts
// no higher than 2H/3, things never reach above the skyline band.
SceneLayout sample_layout(const LayoutConfig& config, Rng& rng);

LabeledImage render(const SceneLayout& layout, const StyleParams& style, Rng& rng);

const std::map<int, Rgb>& default_palette();
StyleParams source_style();
StyleParams target_style();
std::vector<StyleParams> prior_styles();  // 8 styles, none equal to target

struct DomainSpec {
    DomainTag tag = DomainTag::source;
    bool labeled = true;
    int n = 1;
    StyleParams style;
    std::vector<StyleParams> style_rotation;  // overrides `style` when non-empty
    LayoutConfig layout;
    bool rotate_dominant = false;  // cycle none/car/pedestrian/sign per item
};

DatasetManifest make_dataset(const DomainSpec& spec, std::uint64_t seed,
                             const std::string& out_dir);

Eigen::VectorXd class_histogram(const DatasetManifest& manifest);

/// Full benchmark workspace under <root>: source_train, source_test,
// target_train (unlabeled), target_test, datum_pool (64x64), prior.
struct BenchmarkSizes {
    int source_train = 500;
    int source_test = 200;
    int target_train = 500;
    int target_test = 200;
    int datum_pool = 16;
    int prior = 1200;
};

void make_benchmark(const std::string& root, std::uint64_t seed,
                    const BenchmarkSizes& sizes = {});

}  // namespace datum

#endif
