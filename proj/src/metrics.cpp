#include "datum/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "datum/core/checkpoint.hpp"
#include "datum/core/error.hpp"

namespace datum {

void accumulate_confusion(ConfusionMatrix& cm, const MaskArray& pred, const MaskArray& gt) {
    if (pred.size() != gt.size()) throw Error("prediction and ground truth differ in size");
    const int C = cm.num_classes();
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        if (pred[i] >= C || gt[i] >= C) throw Error("class id outside the confusion matrix");
        ++cm.counts(gt[i], pred[i]);
    }
}

ConfusionMatrix confusion(const std::vector<MaskArray>& preds, const std::vector<MaskArray>& gts,
                          int num_classes) {
    if (preds.size() != gts.size()) throw Error("prediction and ground truth counts differ");
    if (num_classes < 1) throw Error("need at least one class");
    ConfusionMatrix cm;
    cm.counts.setZero(num_classes, num_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) accumulate_confusion(cm, preds[i], gts[i]);
    return cm;
}

IouReport iou_report(const ConfusionMatrix& cm, const std::vector<int>& subset) {
    if (subset.empty()) throw Error("subset must name at least one class");
    const int C = cm.num_classes();
    for (int c : subset)
        if (c < 0 || c >= C) throw Error("subset class outside the matrix");

    IouReport rep;
    rep.subset = subset;
    rep.per_class.assign(static_cast<std::size_t>(C), std::nan(""));
    for (int c = 0; c < C; ++c) {
        double tp = static_cast<double>(cm.counts(c, c));
        double fp = static_cast<double>(cm.counts.col(c).sum()) - tp;
        double fn = static_cast<double>(cm.counts.row(c).sum()) - tp;
        double uni = tp + fp + fn;
        if (uni > 0) rep.per_class[static_cast<std::size_t>(c)] = tp / uni;
    }
    double sum = 0, ssum = 0;
    int defined = 0, sdefined = 0;
    for (int c = 0; c < C; ++c) {
        double v = rep.per_class[static_cast<std::size_t>(c)];
        if (std::isnan(v)) continue;
        sum += v;
        ++defined;
    }
    for (int c : subset) {
        double v = rep.per_class[static_cast<std::size_t>(c)];
        if (std::isnan(v)) continue;
        ssum += v;
        ++sdefined;
    }
    rep.miou = defined ? sum / defined : std::nan("");
    rep.subset_miou = sdefined ? ssum / sdefined : std::nan("");
    return rep;
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
    const Eigen::Index n = features.rows();
    if (n < 2) throw Error("need at least two samples for moment estimates");
    GaussianStats st;
    st.n = static_cast<int>(n);
    st.mu = features.colwise().mean();
    Eigen::MatrixXd centered = features.rowwise() - st.mu.transpose();
    st.sigma = centered.transpose() * centered / static_cast<double>(n - 1);
    st.sigma = 0.5 * (st.sigma + st.sigma.transpose().eval());
    return st;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
    if (a.mu.size() != b.mu.size()) throw Error("feature dimensions differ");
    Eigen::MatrixXd root_a = psd_sqrt(a.sigma);
    Eigen::MatrixXd inner = root_a * b.sigma * root_a;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double d2 = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, d2);
}

double diversity(const std::vector<Eigen::Matrix3Xf>& images) {
    if (images.size() < 2) throw Error("diversity needs at least two images");
    for (const auto& img : images)
        if (img.cols() != images[0].cols()) throw Error("images differ in shape");
    double sum = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = i + 1; j < images.size(); ++j) {
            sum += std::sqrt(static_cast<double>((images[i] - images[j]).squaredNorm()));
            ++pairs;
        }
    return sum / static_cast<double>(pairs);
}

void FeatureNet::init(Rng& rng, int num_styles) {
    c1.init(rng, 32, 3);
    c2.init(rng, 64, 32);
    c3.init(rng, 64, 64);
    head_dom.init(rng, 4, 64);
    head_style.init(rng, num_styles, 64);
}

void FeatureNet::reg(ParamRegistry<float>& r) {
    c1.reg(r, "fnet.c1");
    c2.reg(r, "fnet.c2");
    c3.reg(r, "fnet.c3");
    head_dom.reg(r, "fnet.head_dom");
    head_style.reg(r, "fnet.head_style");
}

Mat<float> FeatureNet::features(const Planes<float>& x, bool keep_cache) {
    in_h_ = x.h;
    in_w_ = x.w;
    Planes<float> h = c1.forward(x, keep_cache);
    h.m = r1.forward(h.m);
    h = avg_pool2(h);
    h = c2.forward(h, keep_cache);
    h.m = r2.forward(h.m);
    h = avg_pool2(h);
    h = c3.forward(h, keep_cache);
    h.m = r3.forward(h.m);
    if (keep_cache) h3_ = h;
    Mat<float> feat(h.ch(), h.batch);
    const int hw = h.hw();
    for (int b = 0; b < h.batch; ++b) feat.col(b) = h.m.middleCols(b * hw, hw).rowwise().mean();
    return feat;
}

void FeatureNet::backward_features(const Mat<float>& dfeat) {
    Planes<float> dh = h3_;
    const int hw = h3_.hw();
    for (int b = 0; b < h3_.batch; ++b)
        dh.m.middleCols(b * hw, hw) = (dfeat.col(b) / static_cast<float>(hw)).replicate(1, hw);
    dh.m = r3.backward(dh.m);
    dh = c3.backward(dh);
    dh = avg_pool2_backward(dh, in_h_ / 2, in_w_ / 2);
    dh.m = r2.backward(dh.m);
    dh = c2.backward(dh);
    dh = avg_pool2_backward(dh, in_h_, in_w_);
    dh.m = r1.backward(dh.m);
    c1.backward(dh);
}

namespace {

int dominant_label(const std::string& provenance) {
    std::string name = provenance_value(provenance, "dominant");
    if (name.empty() || name == "none") return 0;
    if (name == "car") return 1;
    if (name == "pedestrian") return 2;
    if (name == "sign") return 3;
    throw Error("unknown dominant class in provenance: " + name);
}

struct FeatureCorpus {
    Planes<float> images;
    std::vector<int> dom, style_idx;
    std::vector<int> style_ids;
    int h = 0, w = 0;
};

FeatureCorpus load_feature_corpus(const DatasetManifest& mf) {
    if (mf.size() == 0) throw Error("empty corpus");
    DatasetReader reader(mf);
    FeatureCorpus fc;
    std::vector<int> styles;
    for (std::size_t i = 0; i < mf.size(); ++i) {
        std::string s = provenance_value(mf.items[i].provenance, "style");
        if (s.empty()) throw Error("corpus item lacks a style id");
        styles.push_back(std::stoi(s));
    }
    fc.style_ids = styles;
    std::sort(fc.style_ids.begin(), fc.style_ids.end());
    fc.style_ids.erase(std::unique(fc.style_ids.begin(), fc.style_ids.end()), fc.style_ids.end());

    for (std::size_t i = 0; i < mf.size(); ++i) {
        LabeledImage img = reader.load_image(i);
        if (i == 0) {
            fc.h = img.height;
            fc.w = img.width;
            fc.images = Planes<float>(3, static_cast<int>(mf.size()), fc.h, fc.w);
        }
        if (img.height != fc.h || img.width != fc.w) throw Error("corpus images differ in size");
        fc.images.m.middleCols(static_cast<int>(i) * fc.h * fc.w, fc.h * fc.w) = img.pixels;
        fc.dom.push_back(dominant_label(mf.items[i].provenance));
        fc.style_idx.push_back(static_cast<int>(
            std::lower_bound(fc.style_ids.begin(), fc.style_ids.end(), styles[i]) -
            fc.style_ids.begin()));
    }
    return fc;
}

double head_accuracy(FeatureNet& net, Dense<float>& head, const FeatureCorpus& fc,
                     const std::vector<int>& labels, const std::vector<std::size_t>& eval_set) {
    const int hw = fc.h * fc.w;
    int hits = 0;
    for (std::size_t start = 0; start < eval_set.size(); start += 64) {
        std::size_t count = std::min<std::size_t>(64, eval_set.size() - start);
        Planes<float> x(3, static_cast<int>(count), fc.h, fc.w);
        for (std::size_t j = 0; j < count; ++j)
            x.m.middleCols(static_cast<int>(j) * hw, hw) =
                fc.images.m.middleCols(static_cast<int>(eval_set[start + j]) * hw, hw);
        Mat<float> logits = head.apply(net.features(x, false));
        for (std::size_t j = 0; j < count; ++j) {
            Eigen::Index arg;
            logits.col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
            if (static_cast<int>(arg) == labels[eval_set[start + j]]) ++hits;
        }
    }
    return eval_set.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

}  // namespace

FeatureNet train_feature_net(const DatasetManifest& prior, const FeatureTrainConfig& config,
                             std::uint64_t seed, FeatureReport* report) {
    if (config.holdout_every < 2) throw Error("holdout_every must be at least 2");
    FeatureCorpus fc = load_feature_corpus(prior);

    std::vector<std::size_t> train_set, holdout;
    for (std::size_t i = 0; i < static_cast<std::size_t>(fc.images.batch); ++i)
        (static_cast<int>(i % static_cast<std::size_t>(config.holdout_every)) ==
                 config.holdout_every - 1
             ? holdout
             : train_set)
            .push_back(i);
    if (train_set.empty() || holdout.empty()) throw Error("corpus too small to split");

    FeatureNet net;
    Rng rng(seed, 17);
    net.init(rng, static_cast<int>(fc.style_ids.size()));
    net.style_ids = fc.style_ids;

    ParamRegistry<float> reg;
    net.reg(reg);
    Adam<float> opt;
    opt.lr = static_cast<float>(config.lr);
    opt.attach(reg);

    const int hw = fc.h * fc.w;
    const std::vector<float> ones(static_cast<std::size_t>(config.batch), 1.0f);
    for (int step = 1; step <= config.steps; ++step) {
        Planes<float> x(3, config.batch, fc.h, fc.w);
        std::vector<int> dom(static_cast<std::size_t>(config.batch));
        std::vector<int> sty(static_cast<std::size_t>(config.batch));
        for (int b = 0; b < config.batch; ++b) {
            std::size_t pick = train_set[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(train_set.size()) - 1))];
            x.m.middleCols(b * hw, hw) = fc.images.m.middleCols(static_cast<int>(pick) * hw, hw);
            dom[static_cast<std::size_t>(b)] = fc.dom[pick];
            sty[static_cast<std::size_t>(b)] = fc.style_idx[pick];
        }
        if (config.noise_sd > 0)
            for (Eigen::Index i = 0; i < x.m.size(); ++i)
                x.m.data()[i] += static_cast<float>(config.noise_sd * rng.normal());

        reg.zero_grad();
        Mat<float> feat = net.features(x, true);
        Mat<float> ddom, dsty;
        softmax_cross_entropy(net.head_dom.forward(feat), dom, ones, ddom);
        softmax_cross_entropy(net.head_style.forward(feat), sty, ones, dsty);
        Mat<float> dfeat = net.head_dom.backward(ddom) + net.head_style.backward(dsty);
        net.backward_features(dfeat);
        reg.clip_grad_norm(1.0f);
        opt.step(reg);
    }

    FeatureReport rep;
    rep.dominant_accuracy = head_accuracy(net, net.head_dom, fc, fc.dom, holdout);
    rep.style_accuracy = head_accuracy(net, net.head_style, fc, fc.style_idx, holdout);
    if (report) *report = rep;
    if (config.enforce_floor && rep.dominant_accuracy < config.floor)
        throw Error("feature net accuracy " + std::to_string(rep.dominant_accuracy) +
                    " is below the " + std::to_string(config.floor) + " floor");
    return net;
}

void save_feature_net(const std::string& dir, FeatureNet& net, const FeatureReport& report) {
    ParamRegistry<float> reg;
    net.reg(reg);
    save_weights(dir, reg.to_tensors());
    nlohmann::json meta;
    meta["kind"] = "feature_net";
    meta["style_ids"] = net.style_ids;
    meta["dominant_accuracy"] = report.dominant_accuracy;
    meta["style_accuracy"] = report.style_accuracy;
    save_meta(dir, meta.dump(2));
}

FeatureNet load_feature_net(const std::string& dir) {
    nlohmann::json meta = nlohmann::json::parse(load_meta_text(dir));
    FeatureNet net;
    net.style_ids = meta.at("style_ids").get<std::vector<int>>();
    Rng rng(0);
    net.init(rng, static_cast<int>(net.style_ids.size()));
    ParamRegistry<float> reg;
    net.reg(reg);
    reg.from_tensors(load_weights(dir));
    return net;
}

Eigen::MatrixXd manifest_features(FeatureNet& net, const DatasetManifest& manifest) {
    if (manifest.size() == 0) throw Error("empty manifest");
    DatasetReader reader(manifest);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(manifest.size()), 64);
    std::size_t done = 0;
    while (done < manifest.size()) {
        std::size_t count = std::min<std::size_t>(64, manifest.size() - done);
        Planes<float> x;
        int hw = 0;
        for (std::size_t j = 0; j < count; ++j) {
            LabeledImage img = reader.load_image(done + j);
            if (j == 0) {
                hw = img.height * img.width;
                x = Planes<float>(3, static_cast<int>(count), img.height, img.width);
            }
            x.m.middleCols(static_cast<int>(j) * hw, hw) = img.pixels;
        }
        Mat<float> feat = net.features(x, false);
        for (std::size_t j = 0; j < count; ++j)
            rows.row(static_cast<Eigen::Index>(done + j)) =
                feat.col(static_cast<Eigen::Index>(j)).cast<double>().transpose();
        done += count;
    }
    return rows;
}

int dominant_prediction(FeatureNet& net, const Eigen::Matrix3Xf& pixels, int h, int w) {
    if (pixels.cols() != static_cast<Eigen::Index>(h) * w) throw Error("pixel count mismatch");
    Planes<float> x(3, 1, h, w);
    x.m = pixels;
    Mat<float> logits = net.head_dom.apply(net.features(x, false));
    Eigen::Index arg;
    logits.col(0).maxCoeff(&arg);
    return static_cast<int>(arg);
}

double fid_between(FeatureNet& net, const DatasetManifest& a, const DatasetManifest& b) {
    if (a.size() < 200 || b.size() < 200)
        std::fprintf(stderr, "fid: fewer than 200 samples on a side (%zu vs %zu)\n", a.size(),
                     b.size());
    return fid(gaussian_stats(manifest_features(net, a)), gaussian_stats(manifest_features(net, b)));
}

}  // namespace datum
