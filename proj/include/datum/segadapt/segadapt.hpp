#ifndef DATUM_SEGADAPT_SEGADAPT_HPP
#define DATUM_SEGADAPT_SEGADAPT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datum/core/manifest.hpp"
#include "datum/metrics/metrics.hpp"
#include "datum/nn/nn.hpp"
#include "datum/scenegen/scenegen.hpp"

namespace datum {

// conv -> groupnorm -> relu
template <typename S>
struct SegBlock {
    Conv3<S> conv;
    GroupNorm<S> gn;
    ReLU<S> act;

    void init(Rng& rng, int out_ch, int in_ch) {
        conv.init(rng, out_ch, in_ch);
        gn.init(out_ch);
    }
    void reg(ParamRegistry<S>& r, const std::string& p) {
        conv.reg(r, p + ".conv");
        gn.reg(r, p + ".gn");
    }
    Planes<S> forward(const Planes<S>& x) {
        Planes<S> h = gn.forward(conv.forward(x));
        h.m = act.forward(h.m);
        return h;
    }
    Planes<S> backward(const Planes<S>& dy) {
        Planes<S> dh = dy;
        dh.m = act.backward(dy.m);
        return conv.backward(gn.backward(dh));
    }
};

// Encoder-decoder over widths 32/64/128/128 with additive skips; per-pixel
// logits for the six scene classes at the input resolution.
template <typename S>
struct SegNet {
    SegBlock<S> e1, e2, e3, e4;
    SegBlock<S> d1, d2, d3, d4;
    Conv3<S> head;

    Planes<S> s1_, s2_, s3_;

    void init(Rng& rng) {
        e1.init(rng, 32, 3);
        e2.init(rng, 64, 32);
        e3.init(rng, 128, 64);
        e4.init(rng, 128, 128);
        d1.init(rng, 128, 128);
        d2.init(rng, 64, 128);
        d3.init(rng, 32, 64);
        d4.init(rng, 32, 32);
        head.init(rng, kNumClasses, 32);
    }

    void reg(ParamRegistry<S>& r, const std::string& p = "seg") {
        e1.reg(r, p + ".e1");
        e2.reg(r, p + ".e2");
        e3.reg(r, p + ".e3");
        e4.reg(r, p + ".e4");
        d1.reg(r, p + ".d1");
        d2.reg(r, p + ".d2");
        d3.reg(r, p + ".d3");
        d4.reg(r, p + ".d4");
        head.reg(r, p + ".head");
    }

    Planes<S> forward(const Planes<S>& x) {
        if (x.h % 8 || x.w % 8) throw Error("input size must be divisible by 8");
        s1_ = e1.forward(x);
        s2_ = e2.forward(avg_pool2(s1_));
        s3_ = e3.forward(avg_pool2(s2_));
        Planes<S> h = e4.forward(avg_pool2(s3_));
        h = d1.forward(upsample2(h));
        h.m += s3_.m;
        h = d2.forward(upsample2(h));
        h.m += s2_.m;
        h = d3.forward(upsample2(h));
        h.m += s1_.m;
        h = d4.forward(h);
        return head.forward(h);
    }

    Planes<S> backward(const Planes<S>& dout) {
        Planes<S> dh = head.backward(dout);
        dh = d4.backward(dh);
        Planes<S> dskip1 = dh;
        dh = d3.backward(dh);
        dh = upsample2_backward(dh);
        Planes<S> dskip2 = dh;
        dh = d2.backward(dh);
        dh = upsample2_backward(dh);
        Planes<S> dskip3 = dh;
        dh = d1.backward(dh);
        dh = upsample2_backward(dh);
        dh = e4.backward(dh);
        dh = avg_pool2_backward(dh, s3_.h, s3_.w);
        dh.m += dskip3.m;
        dh = e3.backward(dh);
        dh = avg_pool2_backward(dh, s2_.h, s2_.w);
        dh.m += dskip2.m;
        dh = e2.backward(dh);
        dh = avg_pool2_backward(dh, s1_.h, s1_.w);
        dh.m += dskip1.m;
        return e1.backward(dh);
    }
};

// Per-pixel class probabilities (softmax over the logits).
template <typename S>
Planes<S> predict(SegNet<S>& net, const Planes<S>& images) {
    Planes<S> p = net.forward(images);
    p.m = softmax_columns(p.m);
    return p;
}

// Mean negative log-probability of the true class over every pixel.
double supervised_loss(const Planes<float>& probs, const std::vector<MaskArray>& labels);

struct PseudoLabel {
    MaskArray mask;
    double q = 0;  // fraction of pixels with max prob above the threshold
};

// Argmax labels from one item's probability columns; ties go to the lower
// class index. q counts strictly-above-threshold pixels.
PseudoLabel pseudo_from_probs(const Mat<float>& probs, double conf_threshold);

std::vector<PseudoLabel> pseudo_label(SegNet<float>& teacher, const Planes<float>& images,
                                      double conf_threshold);

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, entry by entry.
void ema_update(ParamRegistry<float>& teacher, const ParamRegistry<float>& student, double alpha);

struct MixResult {
    LabeledImage mixed;
    MaskArray pasted;          // 1 where source pixels were pasted
    std::vector<int> chosen;   // source classes that were pasted
};

// ClassMix: each class present in the source mask is pasted onto the target
// with probability one half, pixels and labels together.
MixResult mix_pairs(const LabeledImage& source, const Eigen::Matrix3Xf& target_pixels,
                    const MaskArray& target_pseudo, Rng& rng);

struct AdaptConfig {
    int iterations = 4000;
    int batch_source = 4;
    int batch_target = 4;
    double lr = 6e-4;
    int warmup = 250;  // linear learning-rate ramp, in steps
    double ema_alpha = 0.99;
    double conf_threshold = 0.9;
    bool classmix = true;
    int log_every = 50;
};

struct AdaptReport {
    double initial_loss = 0;
    double ema_final = 0;
    std::vector<double> loss_trace;  // one entry per log_every steps
    std::vector<double> q_trace;     // mean pseudo-label quality, same cadence
};

// In-memory split: every image, plus masks when labeled.
struct SegCorpus {
    Planes<float> images;
    std::vector<MaskArray> masks;
    int h = 0, w = 0;
    int size() const { return images.batch; }
};

SegCorpus load_seg_corpus(const DatasetManifest& manifest, bool with_labels);

SegNet<float> adapt(const DatasetManifest& source, const DatasetManifest& pseudo_target,
                    const AdaptConfig& config, std::uint64_t seed, AdaptReport* report = nullptr);

SegNet<float> train_source_only(const DatasetManifest& source, const AdaptConfig& config,
                                std::uint64_t seed, AdaptReport* report = nullptr);

// Argmax prediction for one image.
MaskArray predict_labels(SegNet<float>& net, const LabeledImage& image);

// Confusion-based scores of a model over a labeled manifest.
IouReport evaluate(SegNet<float>& net, const DatasetManifest& labeled,
                   const std::vector<int>& subset = {3, 4, 5});

void save_seg(const std::string& dir, SegNet<float>& net, const nlohmann::json& meta_extra);
SegNet<float> load_seg(const std::string& dir);

}  // namespace datum

#endif
