#include "datum/personalize/personalize.hpp"

#include <cmath>

namespace datum {

TargetDatum load_datum(const DatasetManifest& manifest, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw Error("datum needs at least one image index");
    TargetDatum datum;
    datum.source = manifest.root;
    datum.indices = indices;
    DatasetReader reader(manifest);
    for (std::size_t idx : indices) {
        if (idx >= manifest.size()) throw Error("datum index outside the manifest");
        datum.images.push_back(reader.load_image(idx));
    }
    return datum;
}

CropCycler::CropCycler(int image_h, int image_w, int size) {
    if (size < 1) throw Error("crop size must be positive");
    if (size > image_h || size > image_w) throw Error("crop size exceeds the image");
    order_.reserve(static_cast<std::size_t>(image_h - size + 1) * (image_w - size + 1));
    for (int y = 0; y + size <= image_h; ++y)
        for (int x = 0; x + size <= image_w; ++x) order_.emplace_back(x, y);
    cursor_ = order_.size();  // force a shuffle on the first draw
}

std::pair<int, int> CropCycler::next(Rng& rng) {
    if (cursor_ == order_.size()) {
        for (std::size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1],
                      order_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        cursor_ = 0;
    }
    return order_[cursor_++];
}

std::vector<LabeledImage> extract_crops(const TargetDatum& datum, int size, int n, Rng& rng) {
    if (datum.images.empty()) throw Error("datum has no images");
    const int h = datum.images[0].height, w = datum.images[0].width;
    for (const LabeledImage& img : datum.images)
        if (img.height != h || img.width != w) throw Error("datum images differ in size");
    CropCycler cycler(h, w, size);
    std::vector<LabeledImage> crops;
    crops.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        auto [x0, y0] = cycler.next(rng);
        crops.push_back(crop(datum.images[i % datum.images.size()], x0, y0, size));
    }
    return crops;
}

DiffusionModel<float> finetune(const DiffusionModel<float>& base, const DiffusionSchedule& sched,
                               const TargetDatum& datum, const TrainSet* prior,
                               const PersonalizationConfig& config, std::uint64_t seed,
                               PersonalizeReport* report) {
    if (config.iterations < 0) throw Error("iterations must be >= 0");
    if (datum.images.empty()) throw Error("datum has no images");
    if (config.shots != static_cast<int>(datum.images.size()))
        throw Error("shots does not match the datum image count");
    if (!std::isfinite(config.prior_weight) || config.prior_weight < 0)
        throw Error("prior weight must be finite and >= 0");
    if (config.prior_preservation && (!prior || prior->size() == 0))
        throw Error("prior preservation needs a prior corpus");

    const int h = datum.images[0].height, w = datum.images[0].width;
    for (const LabeledImage& img : datum.images)
        if (img.height != h || img.width != w) throw Error("datum images differ in size");

    DiffusionModel<float> model = base;
    ParamRegistry<float> reg;
    model.reg(reg);
    Adam<float> opt;
    opt.lr = static_cast<float>(config.lr);
    opt.attach(reg);
    Rng rng(seed, 11);

    const std::vector<int> prompt = model.vocab.tokenize(training_prompt());
    std::vector<int> prior_prompt;
    if (config.prior_preservation) prior_prompt = model.vocab.tokenize(prior_caption("none"));
    const int vstar = model.vocab.vstar_id();

    CropCycler cycler(h, w, config.crop_size);
    const int B = config.crops_per_step;
    const int chw = config.crop_size * config.crop_size;
    int draw = 0;

    PersonalizeReport rep;
    double ema = 0;
    for (int step = 1; step <= config.iterations; ++step) {
        Planes<float> x0(3, B, config.crop_size, config.crop_size);
        std::vector<int> tokens;
        tokens.reserve(static_cast<std::size_t>(B) * kMaxLen);
        std::vector<int> ts(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            const LabeledImage& img = datum.images[draw++ % datum.images.size()];
            auto [cx, cy] = cycler.next(rng);
            x0.m.middleCols(b * chw, chw) = crop(img, cx, cy, config.crop_size).pixels;
            tokens.insert(tokens.end(), prompt.begin(), prompt.end());
            ts[static_cast<std::size_t>(b)] = rng.uniform_int(1, sched.T);
        }
        Planes<float> eps = x0;
        for (Eigen::Index i = 0; i < eps.m.size(); ++i)
            eps.m.data()[i] = static_cast<float>(rng.normal());

        reg.zero_grad();
        double loss = 0, prior_loss = 0;
        try {
            loss = dm_loss(model, sched, x0, tokens, ts, eps, true);
            if (config.prior_preservation) {
                const int phw = prior->h * prior->w;
                Planes<float> p0(3, B, prior->h, prior->w);
                std::vector<int> ptokens;
                ptokens.reserve(static_cast<std::size_t>(B) * kMaxLen);
                std::vector<int> pts(static_cast<std::size_t>(B));
                for (int b = 0; b < B; ++b) {
                    int pick = rng.uniform_int(0, prior->size() - 1);
                    p0.m.middleCols(b * phw, phw) = prior->images.m.middleCols(pick * phw, phw);
                    ptokens.insert(ptokens.end(), prior_prompt.begin(), prior_prompt.end());
                    pts[static_cast<std::size_t>(b)] = rng.uniform_int(1, sched.T);
                }
                Planes<float> peps = p0;
                for (Eigen::Index i = 0; i < peps.m.size(); ++i)
                    peps.m.data()[i] = static_cast<float>(rng.normal());
                prior_loss =
                    dm_loss(model, sched, p0, ptokens, pts, peps, true, config.prior_weight);
            }
        } catch (const Error& e) {
            throw DivergenceError(std::string("personalization aborted: ") + e.what(), step);
        }

        if (config.train_token_only) {
            for (auto& p : reg.items) {
                if (p.name == "text.emb.table") {
                    for (Eigen::Index c = 0; c < p.grad->cols(); ++c)
                        if (c != vstar) p.grad->col(c).setZero();
                } else {
                    p.grad->setZero();
                }
            }
        }
        reg.clip_grad_norm(1.0f);
        opt.step(reg);

        double total = loss + (config.prior_preservation ? config.prior_weight * prior_loss : 0.0);
        if (step == 1) {
            rep.initial_loss = total;
            ema = total;
        } else {
            ema = 0.98 * ema + 0.02 * total;
        }
        if (total > 10.0 * rep.initial_loss)
            throw DivergenceError("loss exceeded 10x the initial value", step);
        rep.datum_trace.push_back(loss);
        if (config.prior_preservation) rep.prior_trace.push_back(prior_loss);
    }
    rep.ema_final = ema;
    if (report) *report = rep;
    return model;
}

void save_personalized(const std::string& dir, DiffusionModel<float>& model,
                       const PersonalizationConfig& config) {
    nlohmann::json meta;
    meta["kind"] = "diffusion";
    meta["personalized"] = true;
    meta["iterations"] = config.iterations;
    meta["shots"] = config.shots;
    meta["train_token_only"] = config.train_token_only;
    meta["prior_preservation"] = config.prior_preservation;
    save_model(dir, model, meta);
}

}  // namespace datum
