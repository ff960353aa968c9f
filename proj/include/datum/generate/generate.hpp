#ifndef DATUM_GENERATE_GENERATE_HPP
#define DATUM_GENERATE_GENERATE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "datum/core/manifest.hpp"
#include "datum/diffusion/diffusion.hpp"

namespace datum {

enum class PromptMode { class_wise, class_agnostic, things_and_stuff, dashcam_suffix };

PromptMode prompt_mode_from_string(const std::string& s);
std::string to_string(PromptMode mode);

struct GenerationConfig {
    int n = 500;
    std::vector<std::string> class_list = {"car", "pedestrian", "sign"};
    PromptMode prompt_mode = PromptMode::class_wise;
    std::uint64_t seed = 0;
    int hw = 32;
    bool force_unpersonalized = false;  // allow sampling a base checkpoint
};

// The prompt item i receives: round-robin over class_list, except
// class_agnostic which always uses the personalization training prompt.
std::string prompt_for(const GenerationConfig& config, int i);

// Samples n images and writes them plus a manifest under out_dir.
// Provenance per item: prompt=<text>;sample_seed=<derived seed>.
DatasetManifest generate_dataset(DiffusionModel<float>& model, const DiffusionSchedule& sched,
                                 const GenerationConfig& config, const std::string& out_dir);

// Loads the checkpoint first and refuses unpersonalized ones unless forced.
DatasetManifest generate_from_checkpoint(const std::string& ckpt_dir,
                                         const GenerationConfig& config,
                                         const std::string& out_dir);

}  // namespace datum

#endif
