#include "datum/segadapt/segadapt.hpp"

#include <algorithm>
#include <cmath>

#include "datum/core/checkpoint.hpp"

namespace datum {

namespace {

int argmax_lowest(const Eigen::Ref<const Vec<float>>& col) {
    int best = 0;
    float top = col[0];
    for (int i = 1; i < static_cast<int>(col.size()); ++i)
        if (col[i] > top) {
            top = col[i];
            best = i;
        }
    return best;
}

}  // namespace

double supervised_loss(const Planes<float>& probs, const std::vector<MaskArray>& labels) {
    if (static_cast<int>(labels.size()) != probs.batch) throw Error("one mask per item");
    const int C = probs.ch();
    const int hw = probs.hw();
    double total = 0;
    for (int b = 0; b < probs.batch; ++b) {
        const MaskArray& mask = labels[static_cast<std::size_t>(b)];
        if (static_cast<int>(mask.size()) != hw) throw Error("mask size mismatch");
        for (int p = 0; p < hw; ++p) {
            if (mask[p] >= C) throw Error("label outside the class range");
            total += -std::log(
                std::max(probs.m(mask[p], b * hw + p), 1e-12f));
        }
    }
    return total / (static_cast<double>(probs.batch) * hw);
}

PseudoLabel pseudo_from_probs(const Mat<float>& probs, double conf_threshold) {
    PseudoLabel out;
    out.mask.resize(probs.cols());
    std::int64_t confident = 0;
    for (Eigen::Index p = 0; p < probs.cols(); ++p) {
        int arg = argmax_lowest(probs.col(p));
        out.mask[p] = static_cast<std::uint8_t>(arg);
        if (probs(arg, p) > conf_threshold) ++confident;
    }
    out.q = probs.cols() ? static_cast<double>(confident) / static_cast<double>(probs.cols()) : 0.0;
    return out;
}

std::vector<PseudoLabel> pseudo_label(SegNet<float>& teacher, const Planes<float>& images,
                                      double conf_threshold) {
    Planes<float> probs = predict(teacher, images);
    std::vector<PseudoLabel> out;
    const int hw = probs.hw();
    for (int b = 0; b < probs.batch; ++b)
        out.push_back(pseudo_from_probs(probs.m.middleCols(b * hw, hw), conf_threshold));
    return out;
}

void ema_update(ParamRegistry<float>& teacher, const ParamRegistry<float>& student, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw Error("ema alpha outside [0, 1]");
    if (teacher.items.size() != student.items.size()) throw Error("parameter layouts differ");
    const float a = static_cast<float>(alpha);
    for (std::size_t i = 0; i < teacher.items.size(); ++i) {
        const auto& t = teacher.items[i];
        const auto& s = student.items[i];
        if (t.name != s.name || t.value->rows() != s.value->rows() ||
            t.value->cols() != s.value->cols())
            throw Error("parameter layouts differ");
        *t.value = a * (*t.value) + (1.0f - a) * (*s.value);
    }
}

MixResult mix_pairs(const LabeledImage& source, const Eigen::Matrix3Xf& target_pixels,
                    const MaskArray& target_pseudo, Rng& rng) {
    if (!source.labeled) throw Error("mixing needs a labeled source image");
    if (target_pixels.cols() != source.pixels.cols() ||
        target_pseudo.size() != source.mask.size())
        throw Error("source and target shapes differ");

    std::vector<int> present;
    for (Eigen::Index p = 0; p < source.mask.size(); ++p) {
        int c = source.mask[p];
        if (std::find(present.begin(), present.end(), c) == present.end()) present.push_back(c);
    }
    std::sort(present.begin(), present.end());

    MixResult out;
    for (int c : present)
        if (rng.bernoulli(0.5)) out.chosen.push_back(c);

    out.mixed = LabeledImage(source.height, source.width);
    out.mixed.labeled = true;
    out.mixed.pixels = target_pixels;
    out.mixed.mask = target_pseudo;
    out.pasted = MaskArray::Zero(source.mask.size());
    for (Eigen::Index p = 0; p < source.mask.size(); ++p) {
        int c = source.mask[p];
        if (std::binary_search(out.chosen.begin(), out.chosen.end(), c)) {
            out.mixed.pixels.col(p) = source.pixels.col(p);
            out.mixed.mask[p] = source.mask[p];
            out.pasted[p] = 1;
        }
    }
    return out;
}

SegCorpus load_seg_corpus(const DatasetManifest& manifest, bool with_labels) {
    if (manifest.size() == 0) throw Error("empty manifest");
    if (with_labels && !manifest.labeled) throw Error("manifest has no labels");
    DatasetReader reader(manifest);
    SegCorpus corpus;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        LabeledImage img = with_labels ? reader.load_labeled(i) : reader.load_image(i);
        if (i == 0) {
            corpus.h = img.height;
            corpus.w = img.width;
            corpus.images = Planes<float>(3, static_cast<int>(manifest.size()), corpus.h, corpus.w);
        }
        if (img.height != corpus.h || img.width != corpus.w)
            throw Error("corpus images differ in size");
        corpus.images.m.middleCols(static_cast<int>(i) * corpus.h * corpus.w,
                                   corpus.h * corpus.w) = img.pixels;
        if (with_labels) corpus.masks.push_back(img.mask);
    }
    return corpus;
}

namespace {

void validate_config(const AdaptConfig& config) {
    if (config.iterations < 0) throw Error("iterations must be >= 0");
    if (config.batch_source < 1 || config.batch_target < 1) throw Error("batch sizes must be >= 1");
    if (config.conf_threshold <= 0.0 || config.conf_threshold >= 1.0)
        throw Error("confidence threshold outside (0, 1)");
    if (config.ema_alpha < 0.0 || config.ema_alpha > 1.0) throw Error("ema alpha outside [0, 1]");
}

LabeledImage corpus_item(const SegCorpus& corpus, int i) {
    LabeledImage img(corpus.h, corpus.w);
    img.pixels = corpus.images.m.middleCols(i * corpus.h * corpus.w, corpus.h * corpus.w);
    if (!corpus.masks.empty()) {
        img.labeled = true;
        img.mask = corpus.masks[static_cast<std::size_t>(i)];
    }
    return img;
}

// Self-training loop; without a target corpus this is plain supervised
// training on the source split.
SegNet<float> run_training(const SegCorpus& source, const SegCorpus* target,
                           const AdaptConfig& config, std::uint64_t seed, AdaptReport* report) {
    validate_config(config);
    Rng init_rng(seed, 19);
    SegNet<float> student;
    student.init(init_rng);
    SegNet<float> teacher = student;

    ParamRegistry<float> sreg, treg;
    student.reg(sreg);
    teacher.reg(treg);
    Adam<float> opt;
    opt.attach(sreg);
    Rng rng(seed, 13);

    const int hw = source.h * source.w;
    const int Bs = config.batch_source;
    const int Bt = config.batch_target;
    const std::vector<float> unit(static_cast<std::size_t>(Bs) * hw, 1.0f);

    AdaptReport rep;
    double ema = 0;
    for (int step = 1; step <= config.iterations; ++step) {
        double ramp = config.warmup > 0 ? std::min(1.0, static_cast<double>(step) / config.warmup)
                                        : 1.0;
        opt.lr = static_cast<float>(config.lr * ramp);

        Planes<float> xs(3, Bs, source.h, source.w);
        std::vector<int> src_labels(static_cast<std::size_t>(Bs) * hw);
        std::vector<int> src_picks(static_cast<std::size_t>(Bs));
        for (int b = 0; b < Bs; ++b) {
            int pick = rng.uniform_int(0, source.size() - 1);
            src_picks[static_cast<std::size_t>(b)] = pick;
            xs.m.middleCols(b * hw, hw) = source.images.m.middleCols(pick * hw, hw);
            const MaskArray& mask = source.masks[static_cast<std::size_t>(pick)];
            for (int p = 0; p < hw; ++p) src_labels[static_cast<std::size_t>(b * hw + p)] = mask[p];
        }

        sreg.zero_grad();
        double loss_src = 0, loss_tgt = 0, mean_q = 0;
        try {
            Planes<float> logits = student.forward(xs);
            if (!logits.m.allFinite()) throw Error("non-finite logits");
            Mat<float> dlogits;
            loss_src = softmax_cross_entropy(logits.m, src_labels, unit, dlogits);
            Planes<float> dl = logits;
            dl.m = dlogits;
            student.backward(dl);

            if (target) {
                Planes<float> xt(3, Bt, target->h, target->w);
                for (int b = 0; b < Bt; ++b) {
                    int pick = rng.uniform_int(0, target->size() - 1);
                    xt.m.middleCols(b * hw, hw) = target->images.m.middleCols(pick * hw, hw);
                }
                std::vector<PseudoLabel> pseudo =
                    pseudo_label(teacher, xt, config.conf_threshold);

                Planes<float> xm = xt;
                std::vector<int> tgt_labels(static_cast<std::size_t>(Bt) * hw);
                std::vector<float> tgt_weights(static_cast<std::size_t>(Bt) * hw);
                for (int b = 0; b < Bt; ++b) {
                    const PseudoLabel& pl = pseudo[static_cast<std::size_t>(b)];
                    mean_q += pl.q / Bt;
                    if (config.classmix) {
                        LabeledImage src_img =
                            corpus_item(source, src_picks[static_cast<std::size_t>(b % Bs)]);
                        MixResult mix =
                            mix_pairs(src_img, xt.m.middleCols(b * hw, hw), pl.mask, rng);
                        xm.m.middleCols(b * hw, hw) = mix.mixed.pixels;
                        for (int p = 0; p < hw; ++p) {
                            tgt_labels[static_cast<std::size_t>(b * hw + p)] = mix.mixed.mask[p];
                            tgt_weights[static_cast<std::size_t>(b * hw + p)] =
                                mix.pasted[p] ? 1.0f : static_cast<float>(pl.q);
                        }
                    } else {
                        for (int p = 0; p < hw; ++p) {
                            tgt_labels[static_cast<std::size_t>(b * hw + p)] = pl.mask[p];
                            tgt_weights[static_cast<std::size_t>(b * hw + p)] =
                                static_cast<float>(pl.q);
                        }
                    }
                }
                Planes<float> tlogits = student.forward(xm);
                if (!tlogits.m.allFinite()) throw Error("non-finite logits");
                Mat<float> dtl;
                loss_tgt = softmax_cross_entropy(tlogits.m, tgt_labels, tgt_weights, dtl);
                Planes<float> dl2 = tlogits;
                dl2.m = dtl;
                student.backward(dl2);
            }
        } catch (const Error& e) {
            throw DivergenceError(std::string("training aborted: ") + e.what(), step);
        }

        sreg.clip_grad_norm(1.0f);
        opt.step(sreg);
        if (target) ema_update(treg, sreg, config.ema_alpha);

        double total = loss_src + loss_tgt;
        if (step == 1) {
            rep.initial_loss = total;
            ema = total;
        } else {
            ema = 0.98 * ema + 0.02 * total;
        }
        if (total > 10.0 * rep.initial_loss && total > 1e-6)
            throw DivergenceError("loss exceeded 10x the initial value", step);
        if (config.log_every > 0 && step % config.log_every == 0) {
            rep.loss_trace.push_back(ema);
            rep.q_trace.push_back(mean_q);
        }
    }
    rep.ema_final = ema;
    if (report) *report = rep;
    return student;
}

}  // namespace

SegNet<float> adapt(const DatasetManifest& source, const DatasetManifest& pseudo_target,
                    const AdaptConfig& config, std::uint64_t seed, AdaptReport* report) {
    if (pseudo_target.labeled)
        throw Error("pseudo-target manifest must be unlabeled");
    SegCorpus src = load_seg_corpus(source, true);
    SegCorpus tgt = load_seg_corpus(pseudo_target, false);
    if (src.h != tgt.h || src.w != tgt.w) throw Error("source and target sizes differ");
    return run_training(src, &tgt, config, seed, report);
}

SegNet<float> train_source_only(const DatasetManifest& source, const AdaptConfig& config,
                                std::uint64_t seed, AdaptReport* report) {
    SegCorpus src = load_seg_corpus(source, true);
    return run_training(src, nullptr, config, seed, report);
}

MaskArray predict_labels(SegNet<float>& net, const LabeledImage& image) {
    Planes<float> x(3, 1, image.height, image.width);
    x.m = image.pixels;
    Planes<float> logits = net.forward(x);
    MaskArray out(logits.hw());
    for (int p = 0; p < logits.hw(); ++p)
        out[p] = static_cast<std::uint8_t>(argmax_lowest(logits.m.col(p)));
    return out;
}

IouReport evaluate(SegNet<float>& net, const DatasetManifest& labeled,
                   const std::vector<int>& subset) {
    SegCorpus corpus = load_seg_corpus(labeled, true);
    ConfusionMatrix cm;
    cm.counts.setZero(kNumClasses, kNumClasses);
    const int hw = corpus.h * corpus.w;
    const int chunk = 16;
    for (int start = 0; start < corpus.size(); start += chunk) {
        int count = std::min(chunk, corpus.size() - start);
        Planes<float> x(3, count, corpus.h, corpus.w);
        x.m = corpus.images.m.middleCols(start * hw, count * hw);
        Planes<float> logits = net.forward(x);
        for (int b = 0; b < count; ++b) {
            MaskArray pred(hw);
            for (int p = 0; p < hw; ++p)
                pred[p] = static_cast<std::uint8_t>(argmax_lowest(logits.m.col(b * hw + p)));
            accumulate_confusion(cm, pred, corpus.masks[static_cast<std::size_t>(start + b)]);
        }
    }
    return iou_report(cm, subset);
}

void save_seg(const std::string& dir, SegNet<float>& net, const nlohmann::json& meta_extra) {
    ParamRegistry<float> reg;
    net.reg(reg);
    save_weights(dir, reg.to_tensors());
    nlohmann::json meta = meta_extra;
    meta["kind"] = "segmentation";
    save_meta(dir, meta.dump(2));
}

SegNet<float> load_seg(const std::string& dir) {
    SegNet<float> net;
    Rng rng(0);
    net.init(rng);
    ParamRegistry<float> reg;
    net.reg(reg);
    reg.from_tensors(load_weights(dir));
    return net;
}

}  // namespace datum
