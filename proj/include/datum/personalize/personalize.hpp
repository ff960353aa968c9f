#ifndef DATUM_PERSONALIZE_PERSONALIZE_HPP
#define DATUM_PERSONALIZE_PERSONALIZE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "datum/core/image.hpp"
#include "datum/core/manifest.hpp"
#include "datum/core/rng.hpp"
#include "datum/diffusion/diffusion.hpp"

namespace datum {

struct PersonalizationConfig {
    int iterations = 200;
    int crop_size = 32;
    int crops_per_step = 4;
    double lr = 1e-4;
    bool prior_preservation = false;  // off by default
    double prior_weight = 1.0;        // only read when prior_preservation is on
    bool train_token_only = false;    // ablation: update just the vstar embedding row
    int shots = 1;                    // must equal the number of datum images
};

// The adaptation input: k unlabeled target images, usually k=1.
struct TargetDatum {
    std::vector<LabeledImage> images;
    std::string source;  // manifest path the images came from
    std::vector<std::size_t> indices;
};

TargetDatum load_datum(const DatasetManifest& manifest, const std::vector<std::size_t>& indices);

// Crop windows cycle through a reshuffled grid of every valid top-left
// position, so n draws visit min(n, grid size) distinct windows.
class CropCycler {
  public:
    CropCycler(int image_h, int image_w, int size);
    std::pair<int, int> next(Rng& rng);  // (x0, y0)

  private:
    std::vector<std::pair<int, int>> order_;
    std::size_t cursor_ = 0;
};

// n square crops; crop i comes from datum image i mod k.
std::vector<LabeledImage> extract_crops(const TargetDatum& datum, int size, int n, Rng& rng);

struct PersonalizeReport {
    double initial_loss = 0;
    double ema_final = 0;
    std::vector<double> datum_trace;  // raw datum-term loss per step
    std::vector<double> prior_trace;  // raw prior-term loss per step; empty when off
};

DiffusionModel<float> finetune(const DiffusionModel<float>& base, const DiffusionSchedule& sched,
                               const TargetDatum& datum, const TrainSet* prior,
                               const PersonalizationConfig& config, std::uint64_t seed,
                               PersonalizeReport* report = nullptr);

void save_personalized(const std::string& dir, DiffusionModel<float>& model,
                       const PersonalizationConfig& config);

}  // namespace datum

#endif
