#ifndef DATUM_METRICS_METRICS_HPP
#define DATUM_METRICS_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "datum/core/manifest.hpp"
#include "datum/nn/nn.hpp"

namespace datum {

struct ConfusionMatrix {
    // rows = ground truth, cols = prediction
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

    int num_classes() const { return static_cast<int>(counts.rows()); }
    std::int64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion(const std::vector<MaskArray>& preds, const std::vector<MaskArray>& gts,
                          int num_classes);
void accumulate_confusion(ConfusionMatrix& cm, const MaskArray& pred, const MaskArray& gt);

struct IouReport {
    std::vector<double> per_class;  // NaN where the union is empty
    double miou = 0;
    double subset_miou = 0;
    std::vector<int> subset;
};

// Classes with zero union are excluded from both means.
IouReport iou_report(const ConfusionMatrix& cm, const std::vector<int>& subset = {3, 4, 5});

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    int n = 0;
};

// rows = samples; covariance uses the n-1 denominator.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), matrix root by symmetric
// eigendecomposition with negative eigenvalues clamped at zero.
double fid(const GaussianStats& a, const GaussianStats& b);

// Mean L2 distance over unordered image pairs.
double diversity(const std::vector<Eigen::Matrix3Xf>& images);

// Oracle classifier over the prior corpus: penultimate 64-d features feed the
// Frechet distance, the dominant-thing head checks prompted-class presence.
// Dominant labels come from provenance: none=0, car=1, pedestrian=2, sign=3.
struct FeatureNet {
    Conv3<float> c1, c2, c3;
    ReLU<float> r1, r2, r3;
    Dense<float> head_dom, head_style;
    std::vector<int> style_ids;  // provenance style id per style-head index

    void init(Rng& rng, int num_styles);
    void reg(ParamRegistry<float>& r);

    // 64 x batch pooled features; keep_cache only during training
    Mat<float> features(const Planes<float>& x, bool keep_cache = false);
    void backward_features(const Mat<float>& dfeat);

  private:
    Planes<float> h3_;
    int in_h_ = 0, in_w_ = 0;
};

struct FeatureTrainConfig {
    int steps = 1500;
    int batch = 32;
    double lr = 1e-3;
    double noise_sd = 0.03;  // input jitter during training
    int holdout_every = 5;   // every k-th item is held out
    bool enforce_floor = true;
    double floor = 0.85;  // required held-out dominant accuracy
};

struct FeatureReport {
    double dominant_accuracy = 0;
    double style_accuracy = 0;
};

FeatureNet train_feature_net(const DatasetManifest& prior, const FeatureTrainConfig& config,
                             std::uint64_t seed, FeatureReport* report = nullptr);

void save_feature_net(const std::string& dir, FeatureNet& net, const FeatureReport& report);
FeatureNet load_feature_net(const std::string& dir);

// One row of features per manifest image.
Eigen::MatrixXd manifest_features(FeatureNet& net, const DatasetManifest& manifest);

// Predicted dominant-thing index (0 none, 1 car, 2 pedestrian, 3 sign).
int dominant_prediction(FeatureNet& net, const Eigen::Matrix3Xf& pixels, int h, int w);

// Warns to stderr when either side has fewer than 200 samples.
double fid_between(FeatureNet& net, const DatasetManifest& a, const DatasetManifest& b);

}  // namespace datum

#endif
