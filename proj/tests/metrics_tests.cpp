#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "datum/metrics/metrics.hpp"
#include "datum/scenegen/scenegen.hpp"

using namespace datum;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("datum_met_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

MaskArray mask_of(std::initializer_list<int> vals) {
    MaskArray m(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (int v : vals) m[i++] = static_cast<std::uint8_t>(v);
    return m;
}

MaskArray random_mask(Rng& rng, int n, int C) {
    MaskArray m(n);
    for (int i = 0; i < n; ++i) m[i] = static_cast<std::uint8_t>(rng.uniform_int(0, C - 1));
    return m;
}

GaussianStats stats_of(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
    GaussianStats st;
    st.mu = mu;
    st.sigma = sigma;
    st.n = 1000;
    return st;
}

}  // namespace

TEST_CASE("confusion counts match hand tallies") {
    MaskArray gt = mask_of({0, 0, 1, 1});
    MaskArray pred = mask_of({0, 0, 0, 0});
    ConfusionMatrix cm = confusion({pred}, {gt}, 2);
    CHECK(cm.counts(0, 0) == 2);
    CHECK(cm.counts(1, 0) == 2);
    CHECK(cm.counts(0, 1) == 0);
    CHECK(cm.counts(1, 1) == 0);
    CHECK(cm.total() == 4);

    ConfusionMatrix diag = confusion({gt}, {gt}, 2);
    CHECK(diag.counts(0, 0) == 2);
    CHECK(diag.counts(1, 1) == 2);
    CHECK(diag.counts(0, 1) == 0);
}

TEST_CASE("confusion is additive over the batch") {
    Rng rng(4);
    MaskArray a_pred = random_mask(rng, 30, 6), a_gt = random_mask(rng, 30, 6);
    MaskArray b_pred = random_mask(rng, 30, 6), b_gt = random_mask(rng, 30, 6);
    ConfusionMatrix both = confusion({a_pred, b_pred}, {a_gt, b_gt}, 6);
    ConfusionMatrix sum;
    sum.counts = confusion({a_pred}, {a_gt}, 6).counts + confusion({b_pred}, {b_gt}, 6).counts;
    CHECK(both.counts == sum.counts);
}

TEST_CASE("confusion rejects malformed input") {
    MaskArray four = mask_of({0, 1, 0, 1});
    MaskArray three = mask_of({0, 1, 0});
    CHECK_THROWS_AS(confusion({four}, {four, four}, 2), Error);
    CHECK_THROWS_AS(confusion({four}, {three}, 2), Error);
    CHECK_THROWS_AS(confusion({mask_of({2, 0})}, {mask_of({0, 0})}, 2), Error);
}

TEST_CASE("iou report reproduces the hand-count case") {
    // six classes, pixels touch only classes 0 and 1, the rest stay undefined
    MaskArray gt = mask_of({0, 0, 1, 1});
    MaskArray pred = mask_of({0, 0, 0, 0});
    IouReport rep = iou_report(confusion({pred}, {gt}, 6));
    CHECK(rep.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_class[1] == doctest::Approx(0.0).epsilon(1e-12));
    for (int c = 2; c < 6; ++c) CHECK(std::isnan(rep.per_class[static_cast<std::size_t>(c)]));
    CHECK(rep.miou == doctest::Approx(0.25).epsilon(1e-12));

    IouReport perfect = iou_report(confusion({gt}, {gt}, 6));
    CHECK(perfect.miou == doctest::Approx(1.0));
}

TEST_CASE("subset miou isolates the requested classes") {
    // things (3,4,5) predicted perfectly, stuff scrambled
    MaskArray gt = mask_of({0, 1, 2, 3, 4, 5});
    MaskArray pred = mask_of({1, 2, 0, 3, 4, 5});
    IouReport rep = iou_report(confusion({pred}, {gt}, 6));
    CHECK(rep.subset_miou == doctest::Approx(1.0));
    CHECK(rep.miou < 1.0);

    CHECK_THROWS_AS(iou_report(confusion({pred}, {gt}, 6), {}), Error);
    CHECK_THROWS_AS(iou_report(confusion({pred}, {gt}, 6), {7}), Error);
}

TEST_CASE("confusion-matrix iou agrees with a brute-force count") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        MaskArray gt = random_mask(rng, 64, 6), pred = random_mask(rng, 64, 6);
        IouReport rep = iou_report(confusion({pred}, {gt}, 6));
        for (int c = 0; c < 6; ++c) {
            int tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < 64; ++i) {
                if (gt[i] == c && pred[i] == c) ++tp;
                if (gt[i] != c && pred[i] == c) ++fp;
                if (gt[i] == c && pred[i] != c) ++fn;
            }
            if (tp + fp + fn == 0) {
                CHECK(std::isnan(rep.per_class[static_cast<std::size_t>(c)]));
            } else {
                CHECK(rep.per_class[static_cast<std::size_t>(c)] ==
                      doctest::Approx(static_cast<double>(tp) / (tp + fp + fn)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("gaussian stats use the n-1 covariance") {
    Eigen::MatrixXd x(2, 2);
    x << 0, 0, 2, 2;
    GaussianStats st = gaussian_stats(x);
    CHECK(st.mu(0) == doctest::Approx(1.0));
    CHECK(st.mu(1) == doctest::Approx(1.0));
    CHECK(st.sigma(0, 0) == doctest::Approx(2.0));
    CHECK(st.sigma(0, 1) == doctest::Approx(2.0));
    CHECK(st.sigma(1, 0) == doctest::Approx(2.0));
    CHECK(st.sigma(1, 1) == doctest::Approx(2.0));
    CHECK(st.n == 2);

    Eigen::MatrixXd same(3, 2);
    same << 1, 2, 1, 2, 1, 2;
    CHECK(gaussian_stats(same).sigma.cwiseAbs().maxCoeff() == doctest::Approx(0.0));

    Eigen::MatrixXd one(1, 2);
    CHECK_THROWS_AS(gaussian_stats(one), Error);
}

TEST_CASE("gaussian stats ignore row order") {
    Rng rng(7);
    Eigen::MatrixXd x(40, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::MatrixXd shuffled = x;
    for (Eigen::Index i = x.rows() - 1; i > 0; --i)
        shuffled.row(i).swap(shuffled.row(rng.uniform_int(0, static_cast<int>(i))));
    GaussianStats a = gaussian_stats(x), b = gaussian_stats(shuffled);
    CHECK((a.mu - b.mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.sigma - b.sigma).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fid closed forms") {
    Eigen::MatrixXd eye2 = Eigen::MatrixXd::Identity(2, 2);
    GaussianStats a = stats_of(Eigen::Vector2d(0, 0), eye2);
    GaussianStats b = stats_of(Eigen::Vector2d(3, 4), eye2);
    CHECK(fid(a, b) == doctest::Approx(25.0).epsilon(1e-9));
    CHECK(fid(a, a) == doctest::Approx(0.0).epsilon(1e-6));

    GaussianStats v4 = stats_of(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0));
    GaussianStats v1 = stats_of(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0));
    CHECK(fid(v4, v1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fid is symmetric, nonnegative, and monotone in the mean gap") {
    Rng rng(13);
    Eigen::MatrixXd xa(60, 4), xb(60, 4);
    for (Eigen::Index i = 0; i < xa.size(); ++i) xa.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] = 0.5 + 1.3 * rng.normal();
    GaussianStats a = gaussian_stats(xa), b = gaussian_stats(xb);
    CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-9));
    CHECK(fid(a, b) >= 0.0);

    GaussianStats near = b, far = b;
    near.mu = a.mu + Eigen::VectorXd::Constant(4, 0.5);
    far.mu = a.mu + Eigen::VectorXd::Constant(4, 2.0);
    CHECK(fid(a, far) > fid(a, near));

    GaussianStats wrong = stats_of(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(fid(a, wrong), Error);
}

TEST_CASE("diversity closed forms and invariances") {
    Eigen::Matrix3Xf base = Eigen::Matrix3Xf::Random(3, 16);
    CHECK(diversity({base, base}) == doctest::Approx(0.0));

    Eigen::Matrix3Xf shifted = base.array() + 1.0f;
    CHECK(diversity({base, shifted}) == doctest::Approx(std::sqrt(3.0 * 16.0)).epsilon(1e-6));

    Eigen::Matrix3Xf third = base.array() - 0.3f;
    CHECK(diversity({base, shifted, third}) ==
          doctest::Approx(diversity({third, base, shifted})).epsilon(1e-9));

    CHECK_THROWS_AS(diversity({base}), Error);
    Eigen::Matrix3Xf small = Eigen::Matrix3Xf::Zero(3, 8);
    CHECK_THROWS_AS(diversity({base, small}), Error);
}

TEST_CASE("feature net learns the prior corpus and stays deterministic") {
    TmpDir tmp("fnet_small");
    DomainSpec spec;
    spec.tag = DomainTag::prior;
    spec.labeled = true;
    spec.n = 160;
    spec.style_rotation = prior_styles();
    spec.rotate_dominant = true;
    spec.layout.height = spec.layout.width = 16;
    DatasetManifest mf = make_dataset(spec, 90, tmp.str());

    FeatureTrainConfig cfg;
    cfg.steps = 0;
    cfg.batch = 16;
    cfg.enforce_floor = false;
    FeatureReport untrained;
    train_feature_net(mf, cfg, 1, &untrained);
    CHECK(untrained.dominant_accuracy < 0.6);

    cfg.steps = 300;
    FeatureReport trained;
    FeatureNet net = train_feature_net(mf, cfg, 1, &trained);
    CHECK(trained.dominant_accuracy > untrained.dominant_accuracy);
    CHECK(net.style_ids.size() == 8);

    FeatureNet again = train_feature_net(mf, cfg, 1, nullptr);
    Eigen::MatrixXd fa = manifest_features(net, mf), fb = manifest_features(again, mf);
    CHECK(fa.rows() == 160);
    CHECK(fa.cols() == 64);
    CHECK((fa - fb).cwiseAbs().maxCoeff() == 0.0);

    TmpDir saved("fnet_ckpt");
    save_feature_net(saved.str(), net, trained);
    FeatureNet loaded = load_feature_net(saved.str());
    Eigen::MatrixXd fc = manifest_features(loaded, mf);
    CHECK((fa - fc).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.style_ids == net.style_ids);

    DatasetReader reader(mf);
    LabeledImage img = reader.load_image(0);
    int dom = dominant_prediction(loaded, img.pixels, img.height, img.width);
    CHECK(dom >= 0);
    CHECK(dom < 4);

    CHECK(fid_between(loaded, mf, mf) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("frozen defaults clear the oracle accuracy floor") {
    TmpDir tmp("fnet_full");
    DomainSpec spec;
    spec.tag = DomainTag::prior;
    spec.labeled = true;
    spec.n = 1200;
    spec.style_rotation = prior_styles();
    spec.rotate_dominant = true;
    DatasetManifest mf = make_dataset(spec, 91, tmp.str());

    FeatureReport rep;
    train_feature_net(mf, FeatureTrainConfig{}, 2, &rep);
    MESSAGE("dominant accuracy " << rep.dominant_accuracy << ", style " << rep.style_accuracy);
    CHECK(rep.dominant_accuracy >= 0.85);
    CHECK(rep.style_accuracy > 0.5);
}
