#include "datum/diffusion/diffusion.hpp"

#include <cmath>

#include "datum/text/text.hpp"

namespace datum {

DiffusionSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw Error("T must be at least 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw Error("betas must satisfy 0 < start <= end < 1");
    if (T > 1 && beta_start == beta_end) throw Error("flat schedule needs T=1");
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        s.betas[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
        s.alphas[i] = 1.0 - s.betas[i];
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

DiffusionSchedule default_schedule() { return build_schedule(200, 1e-4, 0.1); }

TrainSet load_captioned(const DatasetManifest& manifest, const Vocabulary& vocab) {
    DatasetReader reader(manifest);
    TrainSet set;
    if (manifest.items.empty()) throw Error("empty corpus");
    LabeledImage first = reader.load_image(0);
    set.h = first.height;
    set.w = first.width;
    const int hw = set.h * set.w;
    set.images = Planes<float>(3, static_cast<int>(manifest.items.size()), set.h, set.w);
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
        LabeledImage img = i == 0 ? first : reader.load_image(i);
        if (img.height != set.h || img.width != set.w) throw Error("mixed image sizes in corpus");
        set.images.m.middleCols(static_cast<int>(i) * hw, hw) = img.pixels;
        std::string prompt = provenance_value(manifest.items[i].provenance, "prompt");
        if (prompt.empty()) {
            std::string dominant = provenance_value(manifest.items[i].provenance, "dominant");
            if (dominant.empty()) throw Error("item lacks caption provenance");
            prompt = prior_caption(dominant);
        }
        set.tokens.push_back(vocab.tokenize(prompt));
    }
    return set;
}

PretrainReport pretrain(DiffusionModel<float>& model, const TrainSet& corpus,
                        const DiffusionSchedule& sched, const PretrainConfig& config,
                        std::uint64_t seed) {
    ParamRegistry<float> reg;
    model.reg(reg);
    Adam<float> opt;
    opt.lr = config.lr;
    opt.attach(reg);
    Rng rng(seed, 7);

    const int hw = corpus.h * corpus.w;
    const std::vector<int> pad_row(static_cast<std::size_t>(kMaxLen), 0);
    PretrainReport report;
    double ema = 0;
    for (int step = 1; step <= config.steps; ++step) {
        Planes<float> x0(3, config.batch, corpus.h, corpus.w);
        std::vector<int> tokens;
        tokens.reserve(static_cast<std::size_t>(config.batch) * kMaxLen);
        std::vector<int> ts(static_cast<std::size_t>(config.batch));
        for (int b = 0; b < config.batch; ++b) {
            int pick = rng.uniform_int(0, corpus.size() - 1);
            x0.m.middleCols(b * hw, hw) = corpus.images.m.middleCols(pick * hw, hw);
            const std::vector<int>& row =
                rng.bernoulli(config.pad_drop) ? pad_row : corpus.tokens[static_cast<std::size_t>(pick)];
            tokens.insert(tokens.end(), row.begin(), row.end());
            ts[static_cast<std::size_t>(b)] = rng.uniform_int(1, sched.T);
        }
        Planes<float> eps = x0;
        for (Eigen::Index i = 0; i < eps.m.size(); ++i)
            eps.m.data()[i] = static_cast<float>(rng.normal());

        reg.zero_grad();
        double loss;
        try {
            loss = dm_loss(model, sched, x0, tokens, ts, eps, true);
        } catch (const Error& e) {
            throw DivergenceError(std::string("training aborted: ") + e.what(), step);
        }
        reg.clip_grad_norm(1.0);
        opt.step(reg);

        if (step == 1) {
            report.initial_loss = loss;
            ema = loss;
        } else {
            ema = 0.98 * ema + 0.02 * loss;
        }
        if (loss > 10.0 * report.initial_loss)
            throw DivergenceError("loss exceeded 10x the initial value", step);
        if (step == 100) report.ema_at_100 = ema;
        if (step % config.log_every == 0) report.ema_trace.push_back(ema);
    }
    report.ema_final = ema;
    return report;
}

std::vector<Eigen::Matrix3Xf> sample(DiffusionModel<float>& model, const DiffusionSchedule& sched,
                                     const std::vector<int>& prompt_tokens, std::uint64_t seed,
                                     int n, int hw) {
    if (static_cast<int>(prompt_tokens.size()) != kMaxLen) throw Error("prompt must be tokenized");
    std::vector<Eigen::Matrix3Xf> out;
    out.reserve(static_cast<std::size_t>(n));
    const int chunk_max = 64;
    const int pixels = hw * hw;
    for (int start = 0; start < n; start += chunk_max) {
        const int chunk = std::min(chunk_max, n - start);
        std::vector<Rng> rngs;
        rngs.reserve(static_cast<std::size_t>(chunk));
        for (int i = 0; i < chunk; ++i)
            rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(start + i)), 2);

        Planes<float> x(3, chunk, hw, hw);
        for (int i = 0; i < chunk; ++i)
            for (int p = 0; p < pixels; ++p)
                for (int c = 0; c < 3; ++c)
                    x.m(c, i * pixels + p) = static_cast<float>(rngs[static_cast<std::size_t>(i)].normal());

        std::vector<int> tokens;
        for (int i = 0; i < chunk; ++i)
            tokens.insert(tokens.end(), prompt_tokens.begin(), prompt_tokens.end());

        for (int t = sched.T; t >= 1; --t) {
            std::vector<int> ts(static_cast<std::size_t>(chunk), t);
            Planes<float> pred = model.eps_forward(x, ts, tokens);
            if (!pred.m.allFinite()) throw Error("non-finite state at step " + std::to_string(t));
            const float c1 = static_cast<float>(1.0 / std::sqrt(sched.alpha(t)));
            const float c2 =
                static_cast<float>(sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t)));
            x.m = c1 * (x.m - c2 * pred.m);
            if (t > 1) {
                const float sigma = static_cast<float>(std::sqrt(
                    (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t)));
                for (int i = 0; i < chunk; ++i)
                    for (int p = 0; p < pixels; ++p)
                        for (int c = 0; c < 3; ++c)
                            x.m(c, i * pixels + p) +=
                                sigma * static_cast<float>(rngs[static_cast<std::size_t>(i)].normal());
            }
        }
        for (int i = 0; i < chunk; ++i)
            out.push_back(x.m.middleCols(i * pixels, pixels).cwiseMax(-1.0f).cwiseMin(1.0f));
    }
    return out;
}

void save_model(const std::string& dir, DiffusionModel<float>& model,
                const nlohmann::json& meta_extra) {
    ParamRegistry<float> reg;
    model.reg(reg);
    save_weights(dir, reg.to_tensors());
    nlohmann::json meta = meta_extra;
    meta["vocab"] = model.vocab.to_json();
    save_meta(dir, meta.dump(2));
}

void load_model(const std::string& dir, DiffusionModel<float>& model) {
    nlohmann::json meta = nlohmann::json::parse(load_meta_text(dir));
    Rng rng(0);
    model.init(rng, Vocabulary::from_json(meta.at("vocab")));
    ParamRegistry<float> reg;
    model.reg(reg);
    reg.from_tensors(load_weights(dir));
}

nlohmann::json model_meta(const std::string& dir) {
    return nlohmann::json::parse(load_meta_text(dir));
}

}  // namespace datum
