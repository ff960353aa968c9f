#include "datum/generate/generate.hpp"

#include <cstdio>
#include <filesystem>

#include "datum/core/image.hpp"
#include "datum/core/png_io.hpp"
#include "datum/core/rng.hpp"
#include "datum/text/text.hpp"

namespace fs = std::filesystem;

namespace datum {

PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "class_wise") return PromptMode::class_wise;
    if (s == "class_agnostic") return PromptMode::class_agnostic;
    if (s == "things_and_stuff") return PromptMode::things_and_stuff;
    if (s == "dashcam_suffix") return PromptMode::dashcam_suffix;
    throw Error("unknown prompt mode: " + s);
}

std::string to_string(PromptMode mode) {
    switch (mode) {
        case PromptMode::class_wise: return "class_wise";
        case PromptMode::class_agnostic: return "class_agnostic";
        case PromptMode::things_and_stuff: return "things_and_stuff";
        case PromptMode::dashcam_suffix: return "dashcam_suffix";
    }
    throw Error("unknown prompt mode");
}

std::string prompt_for(const GenerationConfig& config, int i) {
    if (config.prompt_mode == PromptMode::class_agnostic) return training_prompt();
    if (config.class_list.empty()) throw Error("class list is empty");
    const std::string& cls =
        config.class_list[static_cast<std::size_t>(i) % config.class_list.size()];
    switch (config.prompt_mode) {
        case PromptMode::class_wise: return inference_prompt(cls, true);
        case PromptMode::things_and_stuff: return inference_prompt(cls, false);
        case PromptMode::dashcam_suffix: return dashcam_prompt(cls);
        default: return training_prompt();
    }
}

DatasetManifest generate_dataset(DiffusionModel<float>& model, const DiffusionSchedule& sched,
                                 const GenerationConfig& config, const std::string& out_dir) {
    if (config.n < 1) throw Error("dataset cardinality must be >= 1");
    if (config.n > 9999) throw Error("dataset cardinality above the file naming limit");

    // resolve all prompts up front so invalid classes fail before any sampling
    std::vector<std::string> prompts(static_cast<std::size_t>(config.n));
    for (int i = 0; i < config.n; ++i) prompts[static_cast<std::size_t>(i)] = prompt_for(config, i);

    // group identical prompts to batch the reverse process
    std::vector<std::string> order;
    std::map<std::string, std::vector<int>> groups;
    for (int i = 0; i < config.n; ++i) {
        auto [it, fresh] = groups.try_emplace(prompts[static_cast<std::size_t>(i)]);
        if (fresh) order.push_back(prompts[static_cast<std::size_t>(i)]);
        it->second.push_back(i);
    }

    fs::create_directories(fs::path(out_dir) / "images");
    DatasetManifest mf;
    mf.domain_tag = DomainTag::generated;
    mf.labeled = false;
    mf.seed = static_cast<std::int64_t>(config.seed);
    mf.root = out_dir;
    mf.items.resize(static_cast<std::size_t>(config.n));

    for (const std::string& prompt : order) {
        const std::vector<int>& slots = groups[prompt];
        std::uint64_t group_seed = derive_seed(config.seed, prompt);
        std::vector<int> tokens = model.vocab.tokenize(prompt);
        std::vector<Eigen::Matrix3Xf> images =
            sample(model, sched, tokens, group_seed, static_cast<int>(slots.size()), config.hw);
        for (std::size_t j = 0; j < slots.size(); ++j) {
            int i = slots[j];
            char name[32];
            std::snprintf(name, sizeof(name), "%04d.png", i);
            const Eigen::Matrix3Xf& px = images[j];
            std::vector<std::uint8_t> rgb(static_cast<std::size_t>(config.hw) * config.hw * 3);
            for (int p = 0; p < config.hw * config.hw; ++p)
                for (int ch = 0; ch < 3; ++ch)
                    rgb[static_cast<std::size_t>(p) * 3 + ch] = quantize_channel(px(ch, p));
            write_png_rgb8((fs::path(out_dir) / "images" / name).string(), config.hw, config.hw,
                           rgb);
            ManifestItem& item = mf.items[static_cast<std::size_t>(i)];
            item.image = std::string("images/") + name;
            item.provenance = "prompt=" + prompt +
                              ";sample_seed=" + std::to_string(derive_seed(group_seed, j));
        }
    }
    save_manifest(mf, out_dir);
    return mf;
}

DatasetManifest generate_from_checkpoint(const std::string& ckpt_dir,
                                         const GenerationConfig& config,
                                         const std::string& out_dir) {
    nlohmann::json meta = model_meta(ckpt_dir);
    bool personalized = meta.value("personalized", false);
    if (!personalized && !config.force_unpersonalized)
        throw Error("checkpoint is not personalized; set force to sample it anyway");
    DiffusionModel<float> model;
    load_model(ckpt_dir, model);
    return generate_dataset(model, default_schedule(), config, out_dir);
}

}  // namespace datum
