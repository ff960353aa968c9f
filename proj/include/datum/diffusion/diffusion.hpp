#ifndef DATUM_DIFFUSION_DIFFUSION_HPP
#define DATUM_DIFFUSION_DIFFUSION_HPP

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datum/core/error.hpp"
#include "datum/core/manifest.hpp"
#include "datum/nn/nn.hpp"
#include "datum/text/text.hpp"

namespace datum {

struct DiffusionSchedule {
    int T = 0;
    Eigen::VectorXd betas, alphas, alpha_bars;

    // Step index convention: arrays hold steps 1..T at [t-1]; alpha_bar(0)=1.
    double alpha_bar(int t) const {
        if (t < 0 || t > T) throw Error("step index out of range");
        return t == 0 ? 1.0 : alpha_bars[t - 1];
    }
    double beta(int t) const {
        if (t < 1 || t > T) throw Error("step index out of range");
        return betas[t - 1];
    }
    double alpha(int t) const {
        if (t < 1 || t > T) throw Error("step index out of range");
        return alphas[t - 1];
    }
};

DiffusionSchedule build_schedule(int T, double beta_start, double beta_end);
DiffusionSchedule default_schedule();  // T=200, linear 1e-4 .. 0.1

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps, elementwise; t=0 returns x0.
template <typename S>
Mat<S> q_sample(const Mat<S>& x0, int t, const Mat<S>& eps, const DiffusionSchedule& sched) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw Error("shape mismatch");
    double ab = sched.alpha_bar(t);
    return static_cast<S>(std::sqrt(ab)) * x0 + static_cast<S>(std::sqrt(1.0 - ab)) * eps;
}

// Batched variant with one step index per item.
template <typename S>
Planes<S> q_sample(const Planes<S>& x0, const std::vector<int>& ts, const Planes<S>& eps,
                   const DiffusionSchedule& sched) {
    if (static_cast<int>(ts.size()) != x0.batch) throw Error("one step index per item");
    if (x0.m.rows() != eps.m.rows() || x0.m.cols() != eps.m.cols()) throw Error("shape mismatch");
    Planes<S> xt = x0;
    const int hw = x0.hw();
    for (int b = 0; b < x0.batch; ++b) {
        double ab = sched.alpha_bar(ts[static_cast<std::size_t>(b)]);
        xt.m.middleCols(b * hw, hw) =
            static_cast<S>(std::sqrt(ab)) * x0.m.middleCols(b * hw, hw) +
            static_cast<S>(std::sqrt(1.0 - ab)) * eps.m.middleCols(b * hw, hw);
    }
    return xt;
}

// Mean squared error over every element; dpred (optional) receives d(loss)/d(pred).
template <typename S>
S mse_loss(const Planes<S>& pred, const Planes<S>& target, Planes<S>* dpred = nullptr) {
    if (pred.m.rows() != target.m.rows() || pred.m.cols() != target.m.cols())
        throw Error("shape mismatch");
    Mat<S> diff = pred.m - target.m;
    S loss = diff.squaredNorm() / static_cast<S>(diff.size());
    if (dpred) {
        *dpred = pred;
        dpred->m = diff * static_cast<S>(2.0 / diff.size());
    }
    return loss;
}

namespace detail {

template <typename S>
void add_per_item(Planes<S>& h, const Mat<S>& bias) {
    const int hw = h.hw();
    for (int b = 0; b < h.batch; ++b)
        h.m.middleCols(b * hw, hw).colwise() += bias.col(b);
}

template <typename S>
Mat<S> per_item_sum(const Planes<S>& dy) {
    Mat<S> out(dy.ch(), dy.batch);
    const int hw = dy.hw();
    for (int b = 0; b < dy.batch; ++b) out.col(b) = dy.m.middleCols(b * hw, hw).rowwise().sum();
    return out;
}

}  // namespace detail

// norm -> silu -> conv + timestep bias, with identity skip.
template <typename S>
struct ResBlock {
    GroupNorm<S> gn;
    SiLU<S> act;
    Conv3<S> conv;
    Dense<S> temb;

    void init(Rng& rng, int ch, int temb_dim) {
        gn.init(ch);
        conv.init(rng, ch, ch);
        temb.init(rng, ch, temb_dim, 0.5);
    }
    void reg(ParamRegistry<S>& r, const std::string& p) {
        gn.reg(r, p + ".gn");
        conv.reg(r, p + ".conv");
        temb.reg(r, p + ".temb");
    }
    Planes<S> forward(const Planes<S>& x, const Mat<S>& tv) {
        Planes<S> h = gn.forward(x);
        h.m = act.forward(h.m);
        h = conv.forward(h);
        detail::add_per_item(h, temb.forward(tv));
        h.m += x.m;
        return h;
    }
    Planes<S> backward(const Planes<S>& dy, Mat<S>& dtv) {
        dtv += temb.backward(detail::per_item_sum(dy));
        Planes<S> dh = conv.backward(dy);
        dh.m = act.backward(dh.m);
        dh = gn.backward(dh);
        dh.m += dy.m;
        return dh;
    }
};

// norm -> silu -> conv + timestep bias; changes channel count, no skip.
template <typename S>
struct TransBlock {
    GroupNorm<S> gn;
    SiLU<S> act;
    Conv3<S> conv;
    Dense<S> temb;

    void init(Rng& rng, int out_ch, int in_ch, int temb_dim) {
        gn.init(in_ch);
        conv.init(rng, out_ch, in_ch);
        temb.init(rng, out_ch, temb_dim, 0.5);
    }
    void reg(ParamRegistry<S>& r, const std::string& p) {
        gn.reg(r, p + ".gn");
        conv.reg(r, p + ".conv");
        temb.reg(r, p + ".temb");
    }
    Planes<S> forward(const Planes<S>& x, const Mat<S>& tv) {
        Planes<S> h = gn.forward(x);
        h.m = act.forward(h.m);
        h = conv.forward(h);
        detail::add_per_item(h, temb.forward(tv));
        return h;
    }
    Planes<S> backward(const Planes<S>& dy, Mat<S>& dtv) {
        dtv += temb.backward(detail::per_item_sum(dy));
        Planes<S> dh = conv.backward(dy);
        dh.m = act.backward(dh.m);
        return gn.backward(dh);
    }
};

// norm then residual attention over the text sequence.
template <typename S>
struct AttnBlock {
    GroupNorm<S> gn;
    Attention<S> attn;

    void init(Rng& rng, int ch, int d_ctx) {
        gn.init(ch);
        attn.init(rng, ch, d_ctx, 64, 64);
    }
    void reg(ParamRegistry<S>& r, const std::string& p) {
        gn.reg(r, p + ".gn");
        attn.reg(r, p + ".attn");
    }
    Planes<S> forward(const Planes<S>& x, const Mat<S>& ctx, int batch) {
        Planes<S> h = gn.forward(x);
        h.m = attn.forward(h.m, ctx, batch);
        return h;
    }
    Planes<S> backward(const Planes<S>& dy, Mat<S>& dctx, int batch) {
        Planes<S> dh = dy;
        dh.m = attn.backward(dy.m, dctx, batch);
        return gn.backward(dh);
    }
};

// 32x32 encoder/decoder with widths (32, 64, 128), cross-attention to the
// text sequence at 16x16 and 8x8, additive skips, and a zero-initialized head
// so the initial prediction is exactly zero noise.
template <typename S>
struct UNet {
    Dense<S> tmlp1, tmlp2;
    SiLU<S> tact;
    Conv3<S> stem;
    ResBlock<S> b1;
    TransBlock<S> d1, d2;
    AttnBlock<S> a1, a2;
    ResBlock<S> mid;
    Conv1<S> r1, r2;
    ResBlock<S> ub1, ub2;
    GroupNorm<S> gn_out;
    SiLU<S> act_out;
    Conv3<S> head;

    Planes<S> skip1_, skip2_;
    int batch_ = 0;

    void init(Rng& rng) {
        tmlp1.init(rng, 128, 64);
        tmlp2.init(rng, 128, 128);
        stem.init(rng, 32, 3);
        b1.init(rng, 32, 128);
        d1.init(rng, 64, 32, 128);
        a1.init(rng, 64, kTextDim);
        d2.init(rng, 128, 64, 128);
        a2.init(rng, 128, kTextDim);
        mid.init(rng, 128, 128);
        r1.init(rng, 64, 128);
        ub1.init(rng, 64, 128);
        r2.init(rng, 32, 64);
        ub2.init(rng, 32, 128);
        gn_out.init(32);
        head.init(rng, 3, 32, 0.0);
    }

    void reg(ParamRegistry<S>& r, const std::string& p) {
        tmlp1.reg(r, p + ".tmlp1");
        tmlp2.reg(r, p + ".tmlp2");
        stem.reg(r, p + ".stem");
        b1.reg(r, p + ".b1");
        d1.reg(r, p + ".d1");
        a1.reg(r, p + ".a1");
        d2.reg(r, p + ".d2");
        a2.reg(r, p + ".a2");
        mid.reg(r, p + ".mid");
        r1.reg(r, p + ".r1");
        ub1.reg(r, p + ".ub1");
        r2.reg(r, p + ".r2");
        ub2.reg(r, p + ".ub2");
        gn_out.reg(r, p + ".gn_out");
        head.reg(r, p + ".head");
    }

    // xt: 3 x (B*32*32); ts: B step indices; ctx: d_text x (B*max_len).
    Planes<S> forward(const Planes<S>& xt, const std::vector<int>& ts, const Mat<S>& ctx) {
        batch_ = xt.batch;
        Mat<S> tv = tmlp2.forward(tact.forward(tmlp1.forward(sinusoidal_embedding<S>(ts, 64))));
        Planes<S> h = stem.forward(xt);
        skip1_ = b1.forward(h, tv);
        h = avg_pool2(skip1_);
        h = d1.forward(h, tv);
        skip2_ = a1.forward(h, ctx, batch_);
        h = avg_pool2(skip2_);
        h = d2.forward(h, tv);
        h = a2.forward(h, ctx, batch_);
        h = mid.forward(h, tv);
        h = r1.forward(h);
        h = upsample2(h);
        h.m += skip2_.m;
        h = ub1.forward(h, tv);
        h = r2.forward(h);
        h = upsample2(h);
        h.m += skip1_.m;
        h = ub2.forward(h, tv);
        h = gn_out.forward(h);
        h.m = act_out.forward(h.m);
        return head.forward(h);
    }

    // Returns gradient w.r.t. xt; accumulates into dctx.
    Planes<S> backward(const Planes<S>& dout, Mat<S>& dctx) {
        Mat<S> dtv = Mat<S>::Zero(128, batch_);
        Planes<S> dh = head.backward(dout);
        dh.m = act_out.backward(dh.m);
        dh = gn_out.backward(dh);
        dh = ub2.backward(dh, dtv);
        Planes<S> dskip1 = dh;
        dh = upsample2_backward(dh);
        dh = r2.backward(dh);
        dh = ub1.backward(dh, dtv);
        Planes<S> dskip2 = dh;
        dh = upsample2_backward(dh);
        dh = r1.backward(dh);
        dh = mid.backward(dh, dtv);
        dh = a2.backward(dh, dctx, batch_);
        dh = d2.backward(dh, dtv);
        dh = avg_pool2_backward(dh, skip2_.h, skip2_.w);
        dh.m += dskip2.m;
        dh = a1.backward(dh, dctx, batch_);
        dh = d1.backward(dh, dtv);
        dh = avg_pool2_backward(dh, skip1_.h, skip1_.w);
        dh.m += dskip1.m;
        dh = b1.backward(dh, dtv);
        dh = stem.backward(dh);
        tmlp1.backward(tact.backward(tmlp2.backward(dtv)));
        return dh;
    }
};

template <typename S>
struct DiffusionModel {
    Vocabulary vocab;
    TextEncoder<S> text;
    UNet<S> unet;

    void init(Rng& rng, const Vocabulary& v) {
        vocab = v;
        text.init(rng, v.size());
        unet.init(rng);
    }

    void reg(ParamRegistry<S>& r) {
        unet.reg(r, "unet");
        text.reg(r, "text");
    }

    // tokens: flattened batch*max_len ids.
    Planes<S> eps_forward(const Planes<S>& xt, const std::vector<int>& ts,
                          const std::vector<int>& tokens) {
        Mat<S> ctx = text.forward(tokens, xt.batch);
        return unet.forward(xt, ts, ctx);
    }

    void backward(const Planes<S>& dpred) {
        Mat<S> dctx = Mat<S>::Zero(kTextDim, batch() * kMaxLen);
        unet.backward(dpred, dctx);
        text.backward(dctx, batch());
    }

    int batch() const { return unet.batch_; }
};

// Same objective with a pluggable noise predictor, for oracles and tests.
template <typename S, typename F>
S dm_loss_with(F&& eps_model, const DiffusionSchedule& sched, const Planes<S>& x0,
               const std::vector<int>& ts, const Planes<S>& eps) {
    Planes<S> xt = q_sample(x0, ts, eps, sched);
    Planes<S> pred = eps_model(xt, ts);
    return mse_loss(pred, eps);
}

// Training objective: mse(eps, model(q_sample(x0, t, eps), t, ctx)).
// Backpropagates into the model when `train` is set; the gradient (not the
// returned loss) is multiplied by grad_scale so callers can weight terms.
// Throws on non-finite activations so callers can attach step context.
template <typename S>
S dm_loss(DiffusionModel<S>& model, const DiffusionSchedule& sched, const Planes<S>& x0,
          const std::vector<int>& tokens, const std::vector<int>& ts, const Planes<S>& eps,
          bool train = true, double grad_scale = 1.0) {
    for (int t : ts)
        if (t < 1 || t > sched.T) throw Error("step index outside 1..T");
    Planes<S> xt = q_sample(x0, ts, eps, sched);
    Planes<S> pred = model.eps_forward(xt, ts, tokens);
    if (!pred.m.allFinite()) throw Error("non-finite model output");
    Planes<S> dpred;
    S loss = mse_loss(pred, eps, train ? &dpred : nullptr);
    if (train) {
        if (grad_scale != 1.0) dpred.m *= static_cast<S>(grad_scale);
        model.backward(dpred);
    }
    return loss;
}

struct PretrainConfig {
    int steps = 20000;
    int batch = 32;
    double lr = 2e-4;
    double pad_drop = 0.1;  // train a fraction of batches unconditioned
    int log_every = 100;
};

struct PretrainReport {
    double initial_loss = 0, ema_at_100 = 0, ema_final = 0;
    std::vector<double> ema_trace;  // one entry per log_every steps
};

// In-memory training corpus: images plus tokenized captions.
struct TrainSet {
    Planes<float> images;             // 3 x (n*h*w)
    std::vector<std::vector<int>> tokens;
    int h = 0, w = 0;
    int size() const { return images.batch; }
};

TrainSet load_captioned(const DatasetManifest& manifest, const Vocabulary& vocab);

PretrainReport pretrain(DiffusionModel<float>& model, const TrainSet& corpus,
                        const DiffusionSchedule& sched, const PretrainConfig& config,
                        std::uint64_t seed);

// Ancestral reverse process over all T steps; per-image noise streams are
// derived from (seed, image index), so results do not depend on batching.
std::vector<Eigen::Matrix3Xf> sample(DiffusionModel<float>& model, const DiffusionSchedule& sched,
                                     const std::vector<int>& prompt_tokens, std::uint64_t seed,
                                     int n, int hw = 32);

void save_model(const std::string& dir, DiffusionModel<float>& model,
                const nlohmann::json& meta_extra);
void load_model(const std::string& dir, DiffusionModel<float>& model);
nlohmann::json model_meta(const std::string& dir);

}  // namespace datum

#endif
