#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "datum/core/tomlmini.hpp"
#include "datum/diffusion/diffusion.hpp"
#include "datum/harness/harness.hpp"

using namespace datum;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string part; std::getline(in, part, ',');)
        if (!part.empty()) out.push_back(part);
    return out;
}

std::vector<int> int_list(const std::string& s) {
    std::vector<int> out;
    for (const std::string& p : split_list(s)) out.push_back(std::stoi(p));
    return out;
}

std::vector<std::uint64_t> seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const std::string& p : split_list(s)) out.push_back(std::stoull(p));
    return out;
}

PipelineConfig config_from(const std::string& path) {
    if (path.empty()) return {};
    return pipeline_from_json(load_toml_file(path));
}

std::vector<std::size_t> pick_datum(std::uint64_t seed, int pool, int shots) {
    if (shots > pool) throw Error("more shots than datum pool images");
    std::vector<std::size_t> order(static_cast<std::size_t>(pool));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "datum"));
    for (int i = 0; i < shots; ++i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.uniform_int(i, pool - 1))]);
    order.resize(static_cast<std::size_t>(shots));
    std::sort(order.begin(), order.end());
    return order;
}

void print_iou(const IouReport& r) {
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "miou=" << r.miou << " subset_miou=" << r.subset_miou << "\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        std::cout << "  " << std::setw(10) << std::left << class_name(static_cast<int>(c))
                  << std::right << " ";
        if (std::isnan(r.per_class[c]))
            std::cout << "undefined\n";
        else
            std::cout << r.per_class[c] << "\n";
    }
}

void print_table(const AblationTable& t) {
    bool labeled = !t.labels.empty();
    if (labeled) std::cout << std::setw(16) << std::left << "label" << std::right;
    for (const std::string& c : t.columns) std::cout << std::setw(16) << c;
    std::cout << "\n";
    std::cout << std::fixed << std::setprecision(4);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (labeled) std::cout << std::setw(16) << std::left << t.labels[r] << std::right;
        for (double v : t.rows[r]) std::cout << std::setw(16) << v;
        std::cout << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("one-shot domain adaptation with a personalized diffusion model, desk scale");
    app.require_subcommand(1);

    std::string cfg_path, out, data_dir, model_dir, source_dir, target_dir;
    std::string pool_dir, prior_dir, feature_dir, a_dir, b_dir, report_path;
    std::string mode = "class_wise", classes = "car,pedestrian,sign", indices, seeds = "1";
    std::string shots_list = "1,5,10", iters_list, variants = "class_wise,class_agnostic";
    std::string sizes_list = "10,50,100,500";
    std::uint64_t seed = 1;
    int n = 500, hw = 32, steps = -1, iterations = -1, shots = 1;
    bool force_unpersonalized = false, token_only = false, no_classmix = false;
    double lr = -1, prior_weight = 1.0;

    auto* mk = app.add_subcommand("make-data", "render the toy benchmark splits");
    mk->add_option("--out", out)->required();
    mk->add_option("--seed", seed);
    mk->add_option("--config", cfg_path);
    mk->callback([&] {
        PipelineConfig pc = config_from(cfg_path);
        if (mk->count("--seed")) pc.data_seed = seed;
        make_benchmark(out, pc.data_seed, pc.sizes);
        std::cout << "wrote " << out << "\n";
    });

    auto* pt = app.add_subcommand("pretrain", "train the denoiser on the prior corpus");
    pt->add_option("--data", data_dir)->required();
    pt->add_option("--out", out)->required();
    pt->add_option("--seed", seed);
    pt->add_option("--steps", steps);
    pt->add_option("--config", cfg_path);
    pt->callback([&] {
        PipelineConfig pc = config_from(cfg_path);
        if (pt->count("--seed")) pc.pretrain_seed = seed;
        if (steps >= 0) pc.pretrain.steps = steps;
        TrainSet corpus = load_captioned(load_manifest(data_dir + "/prior"), Vocabulary::standard());
        DiffusionModel<float> model;
        Rng rng(pc.pretrain_seed);
        model.init(rng, Vocabulary::standard());
        PretrainReport rep = pretrain(model, corpus, default_schedule(), pc.pretrain, pc.pretrain_seed);
        save_model(out, model, {});
        std::cout << "loss " << rep.initial_loss << " -> " << rep.ema_final << ", wrote " << out
                  << "\n";
    });

    auto* pz = app.add_subcommand("personalize", "fine-tune on one (or few) target images");
    pz->add_option("--model", model_dir)->required();
    pz->add_option("--pool", pool_dir)->required();
    pz->add_option("--out", out)->required();
    pz->add_option("--seed", seed);
    pz->add_option("--shots", shots);
    pz->add_option("--iterations", iterations);
    pz->add_option("--lr", lr);
    pz->add_option("--indices", indices, "comma list overriding the seeded datum choice");
    pz->add_option("--prior", prior_dir, "prior manifest dir, enables preservation");
    pz->add_option("--prior-weight", prior_weight);
    pz->add_flag("--token-only", token_only);
    pz->callback([&] {
        DiffusionModel<float> base;
        load_model(model_dir, base);
        DatasetManifest pool = load_manifest(pool_dir);
        PersonalizationConfig cfg;
        cfg.shots = shots;
        if (iterations >= 0) cfg.iterations = iterations;
        if (lr > 0) cfg.lr = lr;
        cfg.train_token_only = token_only;
        std::vector<std::size_t> idx;
        if (indices.empty()) {
            idx = pick_datum(seed, static_cast<int>(pool.items.size()), cfg.shots);
        } else {
            for (int v : int_list(indices)) idx.push_back(static_cast<std::size_t>(v));
            cfg.shots = static_cast<int>(idx.size());
        }
        TargetDatum datum = load_datum(pool, idx);
        TrainSet prior;
        const TrainSet* pp = nullptr;
        if (!prior_dir.empty()) {
            cfg.prior_preservation = true;
            cfg.prior_weight = prior_weight;
            prior = load_captioned(load_manifest(prior_dir), base.vocab);
            pp = &prior;
        }
        PersonalizeReport rep;
        DiffusionModel<float> tuned = finetune(base, default_schedule(), datum, pp, cfg,
                                               derive_seed(seed, "personalize"), &rep);
        save_personalized(out, tuned, cfg);
        std::cout << "datum indices";
        for (std::size_t i : idx) std::cout << " " << i;
        std::cout << ", loss " << rep.initial_loss << " -> " << rep.ema_final << ", wrote " << out
                  << "\n";
    });

    auto* gen = app.add_subcommand("generate", "sample a synthetic target dataset");
    gen->add_option("--model", model_dir)->required();
    gen->add_option("--out", out)->required();
    gen->add_option("--n", n);
    gen->add_option("--mode", mode);
    gen->add_option("--classes", classes);
    gen->add_option("--seed", seed);
    gen->add_option("--hw", hw);
    gen->add_flag("--force-unpersonalized", force_unpersonalized);
    gen->callback([&] {
        GenerationConfig g;
        g.n = n;
        g.prompt_mode = prompt_mode_from_string(mode);
        g.class_list = split_list(classes);
        g.seed = seed;
        g.hw = hw;
        g.force_unpersonalized = force_unpersonalized;
        DatasetManifest m = generate_from_checkpoint(model_dir, g, out);
        std::cout << "wrote " << m.items.size() << " images to " << out << "\n";
    });

    auto add_adapt_flags = [&](CLI::App* sc) {
        sc->add_option("--seed", seed);
        sc->add_option("--iterations", iterations);
        sc->add_option("--lr", lr);
        sc->add_flag("--no-classmix", no_classmix);
        sc->add_option("--config", cfg_path);
    };
    auto adapt_config = [&](CLI::App* sc) {
        PipelineConfig pc = config_from(cfg_path);
        AdaptConfig a = pc.adapt;
        if (iterations >= 0) a.iterations = iterations;
        if (lr > 0) a.lr = lr;
        if (no_classmix) a.classmix = false;
        (void)sc;
        return a;
    };

    auto* ad = app.add_subcommand("adapt", "self-train on source plus pseudo-labeled target");
    ad->add_option("--source", source_dir)->required();
    ad->add_option("--target", target_dir)->required();
    ad->add_option("--out", out)->required();
    add_adapt_flags(ad);
    ad->callback([&] {
        SegNet<float> net =
            adapt(load_manifest(source_dir), load_manifest(target_dir), adapt_config(ad), seed);
        save_seg(out, net, {{"mode", "adapted"}});
        std::cout << "wrote " << out << "\n";
    });

    auto* so = app.add_subcommand("train-source-only", "supervised baseline on the source split");
    so->add_option("--source", source_dir)->required();
    so->add_option("--out", out)->required();
    add_adapt_flags(so);
    so->callback([&] {
        SegNet<float> net = train_source_only(load_manifest(source_dir), adapt_config(so), seed);
        save_seg(out, net, {{"mode", "source_only"}});
        std::cout << "wrote " << out << "\n";
    });

    auto* ev = app.add_subcommand("eval", "mIoU of a checkpoint on a labeled split");
    ev->add_option("--model", model_dir)->required();
    ev->add_option("--data", data_dir)->required();
    ev->callback([&] {
        SegNet<float> net = load_seg(model_dir);
        print_iou(evaluate(net, load_manifest(data_dir)));
    });

    auto* fd = app.add_subcommand("fid", "feature distance between two image sets");
    fd->add_option("--feature", feature_dir)->required();
    fd->add_option("--a", a_dir)->required();
    fd->add_option("--b", b_dir)->required();
    fd->callback([&] {
        FeatureNet net = load_feature_net(feature_dir);
        std::cout << std::fixed << std::setprecision(6)
                  << "fid=" << fid_between(net, load_manifest(a_dir), load_manifest(b_dir)) << "\n";
    });

    auto* rn = app.add_subcommand("run", "full pipeline: pretrain, personalize, generate, adapt");
    rn->add_option("--config", cfg_path);
    rn->add_option("--seed", seed);
    rn->add_option("--out", out);
    rn->callback([&] {
        PipelineConfig pc = config_from(cfg_path);
        if (rn->count("--seed")) pc.seed = seed;
        if (rn->count("--out")) pc.out_root = out;
        RunReport rep = run(pc);
        std::cout << std::fixed << std::setprecision(4);
        std::cout << "config " << rep.config_hash << "\n";
        std::cout << "source_only_miou=" << rep.source_only.miou << "\n";
        std::cout << "adapted_miou=" << rep.adapted.miou << "\n";
        std::cout << "delta=" << rep.adapted.miou - rep.source_only.miou << "\n";
        if (pc.with_fid) {
            std::cout << "fid_personalized=" << rep.fid_personalized << "\n";
            std::cout << "fid_unpersonalized=" << rep.fid_unpersonalized << "\n";
            std::cout << "diversity=" << rep.diversity << "\n";
        }
        std::cout << "report " << rep.artifacts.at("report") << "\n";
    });

    auto* ab = app.add_subcommand("ablate", "sweep one pipeline factor");
    ab->require_subcommand(1);
    auto* abs_ = ab->add_subcommand("shots", "datum count x personalization iterations");
    abs_->add_option("--config", cfg_path);
    abs_->add_option("--out", out)->required();
    abs_->add_option("--seeds", seeds);
    abs_->add_option("--shots", shots_list);
    abs_->add_option("--iters", iters_list);
    abs_->callback([&] {
        PipelineConfig pc = config_from(cfg_path);
        std::vector<int> its =
            iters_list.empty() ? std::vector<int>{pc.personalize.iterations} : int_list(iters_list);
        print_table(ablate_shots(pc, int_list(shots_list), its, seed_list(seeds), out));
    });
    auto* abp = ab->add_subcommand("prompts", "inference prompt construction variants");
    abp->add_option("--config", cfg_path);
    abp->add_option("--out", out)->required();
    abp->add_option("--seeds", seeds);
    abp->add_option("--variants", variants);
    abp->callback([&] {
        std::vector<PromptMode> modes;
        for (const std::string& v : split_list(variants)) modes.push_back(prompt_mode_from_string(v));
        print_table(ablate_prompts(config_from(cfg_path), modes, seed_list(seeds), out));
    });
    auto* abc = ab->add_subcommand("cardinality", "generated dataset size sweep");
    abc->add_option("--config", cfg_path);
    abc->add_option("--out", out)->required();
    abc->add_option("--seeds", seeds);
    abc->add_option("--sizes", sizes_list);
    abc->callback([&] {
        print_table(
            ablate_cardinality(config_from(cfg_path), int_list(sizes_list), seed_list(seeds), out));
    });

    auto* pr = app.add_subcommand("prompts", "prompt inspection");
    auto* prs = pr->add_subcommand("show", "print the prompt every mode builds per class");
    prs->add_option("--mode", mode, "restrict to one mode");
    prs->add_option("--classes", classes);
    prs->callback([&] {
        std::vector<std::string> all = {"class_wise", "class_agnostic", "things_and_stuff",
                                        "dashcam_suffix"};
        std::vector<std::string> wanted = prs->count("--mode") ? std::vector<std::string>{mode} : all;
        GenerationConfig g;
        g.class_list = split_list(classes);
        for (const std::string& m : wanted) {
            g.prompt_mode = prompt_mode_from_string(m);
            int k = g.prompt_mode == PromptMode::class_agnostic
                        ? 1
                        : static_cast<int>(g.class_list.size());
            for (int i = 0; i < k; ++i)
                std::cout << std::setw(16) << std::left << m << " " << prompt_for(g, i) << "\n";
        }
    });

    auto* ex = app.add_subcommand("export", "report json, tables and mask overlays");
    ex->add_option("--report", report_path)->required();
    ex->add_option("--out", out)->required();
    ex->callback([&] {
        export_report(load_report(report_path), {}, out);
        std::cout << "wrote " << out << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
