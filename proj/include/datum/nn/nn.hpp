#ifndef DATUM_NN_NN_HPP
#define DATUM_NN_NN_HPP

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "datum/core/checkpoint.hpp"
#include "datum/core/error.hpp"
#include "datum/core/rng.hpp"

namespace datum {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Activations live as channel-by-position matrices: column b*(h*w) + y*w + x
// holds the channel vector at pixel (x, y) of batch item b. GEMM-friendly and
// batch size stays a runtime property.
template <typename S>
struct Planes {
    Mat<S> m;
    int batch = 0, h = 0, w = 0;

    Planes() = default;
    Planes(int ch, int batch_, int h_, int w_) : m(ch, batch_ * h_ * w_), batch(batch_), h(h_), w(w_) {}
    int ch() const { return static_cast<int>(m.rows()); }
    int hw() const { return h * w; }
};

template <typename S>
struct ParamRef {
    std::string name;
    Mat<S>* value;
    Mat<S>* grad;
};

template <typename S>
struct ParamRegistry {
    std::vector<ParamRef<S>> items;

    void add(const std::string& name, Mat<S>* value, Mat<S>* grad) {
        items.push_back({name, value, grad});
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : items) n += static_cast<std::size_t>(p.value->size());
        return n;
    }

    void zero_grad() {
        for (auto& p : items) p.grad->setZero();
    }

    double grad_norm() const {
        double sq = 0;
        for (const auto& p : items) sq += p.grad->template cast<double>().squaredNorm();
        return std::sqrt(sq);
    }

    void clip_grad_norm(double max_norm) {
        double n = grad_norm();
        if (n > max_norm && n > 0) {
            S scale = static_cast<S>(max_norm / n);
            for (auto& p : items) *p.grad *= scale;
        }
    }

    NamedTensors to_tensors() const {
        NamedTensors out;
        for (const auto& p : items) {
            TensorBlob blob;
            blob.shape = {p.value->rows(), p.value->cols()};
            blob.data.resize(static_cast<std::size_t>(p.value->size()));
            Eigen::Map<Eigen::MatrixXf>(blob.data.data(), p.value->rows(), p.value->cols()) =
                p.value->template cast<float>();
            if (!out.emplace(p.name, std::move(blob)).second)
                throw Error("duplicate parameter name " + p.name);
        }
        return out;
    }

    void from_tensors(const NamedTensors& t) {
        for (auto& p : items) {
            auto it = t.find(p.name);
            if (it == t.end()) throw Error("missing parameter " + p.name);
            const TensorBlob& blob = it->second;
            if (blob.shape.size() != 2 || blob.shape[0] != p.value->rows() ||
                blob.shape[1] != p.value->cols())
                throw Error("shape mismatch for parameter " + p.name);
            *p.value = Eigen::Map<const Eigen::MatrixXf>(blob.data.data(), p.value->rows(),
                                                         p.value->cols())
                           .cast<S>();
        }
        if (t.size() != items.size()) throw Error("checkpoint has extra parameters");
    }
};

template <typename S>
Mat<S> normal_matrix(Rng& rng, int rows, int cols, double sd) {
    Mat<S> m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(sd * rng.normal());
    return m;
}

// ---- dense ----------------------------------------------------------------

template <typename S>
struct Dense {
    Mat<S> W, b, dW, db;
    Mat<S> x_;

    void init(Rng& rng, int out, int in, double sd_scale = 1.0) {
        W = normal_matrix<S>(rng, out, in, sd_scale * std::sqrt(2.0 / in));
        b = Mat<S>::Zero(out, 1);
        dW = Mat<S>::Zero(out, in);
        db = Mat<S>::Zero(out, 1);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        r.add(prefix + ".W", &W, &dW);
        r.add(prefix + ".b", &b, &db);
    }

    Mat<S> forward(const Mat<S>& x) {
        x_ = x;
        return (W * x).colwise() + b.col(0);
    }

    // Forward without caching, for inference-only paths.
    Mat<S> apply(const Mat<S>& x) const { return (W * x).colwise() + b.col(0); }

    Mat<S> backward(const Mat<S>& dy) {
        dW += dy * x_.transpose();
        db += dy.rowwise().sum();
        return W.transpose() * dy;
    }
};

// ---- convolutions ---------------------------------------------------------

// 3x3, stride 1, zero-padded. Lowered to GEMM over an im2col patch matrix.
template <typename S>
struct Conv3 {
    Mat<S> W, b, dW, db;  // W: out_ch x in_ch*9
    Mat<S> patches_;
    int in_ch_ = 0;

    void init(Rng& rng, int out_ch, int in_ch, double sd_scale = 1.0) {
        in_ch_ = in_ch;
        W = normal_matrix<S>(rng, out_ch, in_ch * 9, sd_scale * std::sqrt(2.0 / (in_ch * 9)));
        b = Mat<S>::Zero(out_ch, 1);
        dW = Mat<S>::Zero(out_ch, in_ch * 9);
        db = Mat<S>::Zero(out_ch, 1);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        r.add(prefix + ".W", &W, &dW);
        r.add(prefix + ".b", &b, &db);
    }

    static void im2col(const Planes<S>& x, Mat<S>& out) {
        const int C = x.ch(), H = x.h, W_ = x.w, hw = x.hw();
        out.setZero(C * 9, x.batch * hw);
        for (int bb = 0; bb < x.batch; ++bb) {
            const int base = bb * hw;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    const int krow = ((ky + 1) * 3 + (kx + 1)) * C;
                    const int y0 = std::max(0, -ky), y1 = std::min(H, H - ky);
                    const int x0 = std::max(0, -kx), x1 = std::min(W_, W_ - kx);
                    for (int y = y0; y < y1; ++y) {
                        out.block(krow, base + y * W_ + x0, C, x1 - x0) =
                            x.m.block(0, base + (y + ky) * W_ + (x0 + kx), C, x1 - x0);
                    }
                }
            }
        }
    }

    Planes<S> forward(const Planes<S>& x, bool keep_cache = true) {
        im2col(x, patches_);
        Planes<S> y(static_cast<int>(W.rows()), x.batch, x.h, x.w);
        y.m = (W * patches_).colwise() + b.col(0);
        if (!keep_cache) patches_.resize(0, 0);
        return y;
    }

    Planes<S> backward(const Planes<S>& dy) {
        dW += dy.m * patches_.transpose();
        db += dy.m.rowwise().sum();
        Mat<S> dpatches = W.transpose() * dy.m;
        Planes<S> dx(in_ch_, dy.batch, dy.h, dy.w);
        dx.m.setZero();
        const int C = in_ch_, H = dy.h, W_ = dy.w, hw = dy.hw();
        for (int bb = 0; bb < dy.batch; ++bb) {
            const int base = bb * hw;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    const int krow = ((ky + 1) * 3 + (kx + 1)) * C;
                    const int y0 = std::max(0, -ky), y1 = std::min(H, H - ky);
                    const int x0 = std::max(0, -kx), x1 = std::min(W_, W_ - kx);
                    for (int y = y0; y < y1; ++y) {
                        dx.m.block(0, base + (y + ky) * W_ + (x0 + kx), C, x1 - x0) +=
                            dpatches.block(krow, base + y * W_ + x0, C, x1 - x0);
                    }
                }
            }
        }
        return dx;
    }
};

// 1x1 convolution is a dense map over columns.
template <typename S>
struct Conv1 {
    Dense<S> lin;

    void init(Rng& rng, int out_ch, int in_ch, double sd_scale = 1.0) {
        lin.init(rng, out_ch, in_ch, sd_scale);
    }
    void reg(ParamRegistry<S>& r, const std::string& prefix) { lin.reg(r, prefix); }

    Planes<S> forward(const Planes<S>& x) {
        Planes<S> y;
        y.batch = x.batch;
        y.h = x.h;
        y.w = x.w;
        y.m = lin.forward(x.m);
        return y;
    }
    Planes<S> backward(const Planes<S>& dy) {
        Planes<S> dx;
        dx.batch = dy.batch;
        dx.h = dy.h;
        dx.w = dy.w;
        dx.m = lin.backward(dy.m);
        return dx;
    }
};

// ---- normalization --------------------------------------------------------

template <typename S>
struct GroupNorm {
    Mat<S> gamma, beta, dgamma, dbeta;
    int groups = 8;
    Planes<S> xhat_;
    Mat<S> inv_std_;  // groups x batch

    void init(int channels, int groups_ = 8) {
        groups = groups_;
        if (channels % groups != 0) throw Error("channels not divisible by groups");
        gamma = Mat<S>::Ones(channels, 1);
        beta = Mat<S>::Zero(channels, 1);
        dgamma = Mat<S>::Zero(channels, 1);
        dbeta = Mat<S>::Zero(channels, 1);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        r.add(prefix + ".gamma", &gamma, &dgamma);
        r.add(prefix + ".beta", &beta, &dbeta);
    }

    Planes<S> forward(const Planes<S>& x) {
        const int C = x.ch(), gc = C / groups, hw = x.hw();
        const S eps = static_cast<S>(1e-5);
        xhat_ = x;
        inv_std_.resize(groups, x.batch);
        for (int bb = 0; bb < x.batch; ++bb) {
            for (int g = 0; g < groups; ++g) {
                auto blk = xhat_.m.block(g * gc, bb * hw, gc, hw);
                S mean = blk.mean();
                blk.array() -= mean;
                S var = blk.squaredNorm() / static_cast<S>(blk.size());
                S is = S(1) / std::sqrt(var + eps);
                blk *= is;
                inv_std_(g, bb) = is;
            }
        }
        Planes<S> y = xhat_;
        y.m = (xhat_.m.array().colwise() * gamma.col(0).array()).colwise() +
              beta.col(0).array();
        return y;
    }

    Planes<S> backward(const Planes<S>& dy) {
        const int C = dy.ch(), gc = C / groups, hw = dy.hw();
        dgamma += (dy.m.array() * xhat_.m.array()).rowwise().sum().matrix();
        dbeta += dy.m.rowwise().sum();
        Planes<S> dx = dy;
        for (int bb = 0; bb < dy.batch; ++bb) {
            for (int g = 0; g < groups; ++g) {
                Mat<S> dxhat = dy.m.block(g * gc, bb * hw, gc, hw).array().colwise() *
                               gamma.col(0).segment(g * gc, gc).array();
                auto xh = xhat_.m.block(g * gc, bb * hw, gc, hw);
                S m1 = dxhat.mean();
                S m2 = (dxhat.array() * xh.array()).mean();
                dx.m.block(g * gc, bb * hw, gc, hw) =
                    inv_std_(g, bb) * (dxhat.array() - m1 - xh.array() * m2).matrix();
            }
        }
        return dx;
    }
};

// ---- activations ----------------------------------------------------------

template <typename S>
struct SiLU {
    Mat<S> x_;
    Mat<S> forward(const Mat<S>& x) {
        x_ = x;
        return x.array() / (S(1) + (-x.array()).exp());
    }
    Mat<S> backward(const Mat<S>& dy) const {
        auto sig = S(1) / (S(1) + (-x_.array()).exp());
        return (dy.array() * sig * (S(1) + x_.array() * (S(1) - sig))).matrix();
    }
};

template <typename S>
struct ReLU {
    Mat<S> x_;
    Mat<S> forward(const Mat<S>& x) {
        x_ = x;
        return x.cwiseMax(S(0));
    }
    Mat<S> backward(const Mat<S>& dy) const {
        return (x_.array() > S(0)).select(dy, Mat<S>::Zero(dy.rows(), dy.cols()));
    }
};

// ---- resampling -----------------------------------------------------------

template <typename S>
inline Planes<S> avg_pool2(const Planes<S>& x) {
    Planes<S> y(x.ch(), x.batch, x.h / 2, x.w / 2);
    const int hw_in = x.hw(), hw_out = y.hw();
    for (int bb = 0; bb < x.batch; ++bb)
        for (int yy = 0; yy < y.h; ++yy)
            for (int xx = 0; xx < y.w; ++xx) {
                int src = bb * hw_in + 2 * yy * x.w + 2 * xx;
                y.m.col(bb * hw_out + yy * y.w + xx) =
                    (x.m.col(src) + x.m.col(src + 1) + x.m.col(src + x.w) +
                     x.m.col(src + x.w + 1)) *
                    S(0.25);
            }
    return y;
}

template <typename S>
inline Planes<S> avg_pool2_backward(const Planes<S>& dy, int in_h, int in_w) {
    Planes<S> dx(dy.ch(), dy.batch, in_h, in_w);
    dx.m.setZero();
    const int hw_in = in_h * in_w, hw_out = dy.hw();
    for (int bb = 0; bb < dy.batch; ++bb)
        for (int yy = 0; yy < dy.h; ++yy)
            for (int xx = 0; xx < dy.w; ++xx) {
                Vec<S> g = dy.m.col(bb * hw_out + yy * dy.w + xx) * S(0.25);
                int dst = bb * hw_in + 2 * yy * in_w + 2 * xx;
                dx.m.col(dst) += g;
                dx.m.col(dst + 1) += g;
                dx.m.col(dst + in_w) += g;
                dx.m.col(dst + in_w + 1) += g;
            }
    return dx;
}

template <typename S>
inline Planes<S> upsample2(const Planes<S>& x) {
    Planes<S> y(x.ch(), x.batch, x.h * 2, x.w * 2);
    const int hw_in = x.hw(), hw_out = y.hw();
    for (int bb = 0; bb < x.batch; ++bb)
        for (int yy = 0; yy < x.h; ++yy)
            for (int xx = 0; xx < x.w; ++xx) {
                auto src = x.m.col(bb * hw_in + yy * x.w + xx);
                int dst = bb * hw_out + 2 * yy * y.w + 2 * xx;
                y.m.col(dst) = src;
                y.m.col(dst + 1) = src;
                y.m.col(dst + y.w) = src;
                y.m.col(dst + y.w + 1) = src;
            }
    return y;
}

template <typename S>
inline Planes<S> upsample2_backward(const Planes<S>& dy) {
    Planes<S> dx(dy.ch(), dy.batch, dy.h / 2, dy.w / 2);
    const int hw_in = dx.hw(), hw_out = dy.hw();
    for (int bb = 0; bb < dy.batch; ++bb)
        for (int yy = 0; yy < dx.h; ++yy)
            for (int xx = 0; xx < dx.w; ++xx) {
                int src = bb * hw_out + 2 * yy * dy.w + 2 * xx;
                dx.m.col(bb * hw_in + yy * dx.w + xx) =
                    dy.m.col(src) + dy.m.col(src + 1) + dy.m.col(src + dy.w) +
                    dy.m.col(src + dy.w + 1);
            }
    return dx;
}

// ---- attention ------------------------------------------------------------

// Residual attention with keys/values from a context sequence. With
// context == input this is a self-attention mixing layer; with image tokens
// as queries and text tokens as context it is the conditioning pathway.
template <typename S>
struct Attention {
    Dense<S> wq, wk, wv, wo;
    int dk = 0;

    // caches, one entry per batch item
    struct ItemCache {
        Mat<S> A;  // softmax rows: queries x ctx
        Mat<S> Q, K, V;
    };
    std::vector<ItemCache> cache_;
    int q_per_item_ = 0, c_per_item_ = 0;

    void init(Rng& rng, int d_model, int d_ctx, int dk_, int dv) {
        dk = dk_;
        wq.init(rng, dk_, d_model);
        wk.init(rng, dk_, d_ctx);
        wv.init(rng, dv, d_ctx);
        wo.init(rng, d_model, dv, 0.2);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        wq.reg(r, prefix + ".q");
        wk.reg(r, prefix + ".k");
        wv.reg(r, prefix + ".v");
        wo.reg(r, prefix + ".o");
    }

    // x: d_model x (batch*q_per_item); ctx: d_ctx x (batch*c_per_item)
    Mat<S> forward(const Mat<S>& x, const Mat<S>& ctx, int batch) {
        q_per_item_ = static_cast<int>(x.cols()) / batch;
        c_per_item_ = static_cast<int>(ctx.cols()) / batch;
        Mat<S> Q = wq.forward(x);
        Mat<S> K = wk.forward(ctx);
        Mat<S> V = wv.forward(ctx);
        cache_.assign(static_cast<std::size_t>(batch), {});
        Mat<S> H(V.rows(), x.cols());
        const S scale = S(1) / std::sqrt(static_cast<S>(dk));
        for (int bb = 0; bb < batch; ++bb) {
            auto Qb = Q.middleCols(bb * q_per_item_, q_per_item_);
            auto Kb = K.middleCols(bb * c_per_item_, c_per_item_);
            auto Vb = V.middleCols(bb * c_per_item_, c_per_item_);
            Mat<S> scores = (Qb.transpose() * Kb) * scale;  // q x c
            Mat<S> A(scores.rows(), scores.cols());
            for (int r = 0; r < scores.rows(); ++r) {
                Vec<S> row = scores.row(r).transpose();
                S mx = row.maxCoeff();
                Vec<S> e = (row.array() - mx).exp();
                A.row(r) = (e / e.sum()).transpose();
            }
            H.middleCols(bb * q_per_item_, q_per_item_) = Vb * A.transpose();
            cache_[static_cast<std::size_t>(bb)] = {A, Mat<S>(Qb), Mat<S>(Kb), Mat<S>(Vb)};
        }
        return x + wo.forward(H);
    }

    // Returns gradient w.r.t. x; accumulates the context-path gradient into
    // dctx (sized like ctx). For self-attention, pass the same matrix and add.
    Mat<S> backward(const Mat<S>& dy, Mat<S>& dctx, int batch) {
        Mat<S> dH = wo.backward(dy);
        Mat<S> dQ(wq.W.rows(), dy.cols()), dK(wk.W.rows(), batch * c_per_item_),
            dV(wv.W.rows(), batch * c_per_item_);
        const S scale = S(1) / std::sqrt(static_cast<S>(dk));
        for (int bb = 0; bb < batch; ++bb) {
            const auto& cc = cache_[static_cast<std::size_t>(bb)];
            auto dHb = dH.middleCols(bb * q_per_item_, q_per_item_);
            Mat<S> dA = dHb.transpose() * cc.V;  // q x c
            Mat<S> dS(dA.rows(), dA.cols());
            for (int r = 0; r < dA.rows(); ++r) {
                S dot = cc.A.row(r).dot(dA.row(r));
                dS.row(r) = cc.A.row(r).array() * (dA.row(r).array() - dot);
            }
            dV.middleCols(bb * c_per_item_, c_per_item_) = dHb * cc.A;
            dQ.middleCols(bb * q_per_item_, q_per_item_) = cc.K * dS.transpose() * scale;
            dK.middleCols(bb * c_per_item_, c_per_item_) = cc.Q * dS * scale;
        }
        Mat<S> dx = dy + wq.backward(dQ);
        dctx += wk.backward(dK);
        dctx += wv.backward(dV);
        return dx;
    }
};

// ---- embeddings -----------------------------------------------------------

template <typename S>
struct Embedding {
    Mat<S> table, dtable;  // d x vocab
    std::vector<int> ids_;

    void init(Rng& rng, int d, int vocab, double sd = 0.02) {
        table = normal_matrix<S>(rng, d, vocab, sd);
        dtable = Mat<S>::Zero(d, vocab);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        r.add(prefix + ".table", &table, &dtable);
    }

    Mat<S> forward(const std::vector<int>& ids) {
        ids_ = ids;
        Mat<S> out(table.rows(), static_cast<Eigen::Index>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= table.cols()) throw Error("token id out of range");
            out.col(static_cast<Eigen::Index>(i)) = table.col(ids[i]);
        }
        return out;
    }

    void backward(const Mat<S>& dy) {
        for (std::size_t i = 0; i < ids_.size(); ++i)
            dtable.col(ids_[i]) += dy.col(static_cast<Eigen::Index>(i));
    }
};

// Sinusoidal position code, one column per value in `ts`.
template <typename S>
Mat<S> sinusoidal_embedding(const std::vector<int>& ts, int dim) {
    const int half = dim / 2;
    Mat<S> out(dim, static_cast<Eigen::Index>(ts.size()));
    for (std::size_t c = 0; c < ts.size(); ++c) {
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
            out(2 * i, static_cast<Eigen::Index>(c)) = static_cast<S>(std::sin(ts[c] * freq));
            out(2 * i + 1, static_cast<Eigen::Index>(c)) = static_cast<S>(std::cos(ts[c] * freq));
        }
    }
    return out;
}

// ---- optimizer ------------------------------------------------------------

template <typename S>
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Mat<S>> m_, v_;
    long t_ = 0;

    void attach(const ParamRegistry<S>& reg) {
        m_.clear();
        v_.clear();
        for (const auto& p : reg.items) {
            m_.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
            v_.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
        }
        t_ = 0;
    }

    void step(ParamRegistry<S>& reg) {
        if (m_.size() != reg.items.size()) throw Error("optimizer not attached");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < reg.items.size(); ++i) {
            auto& g = *reg.items[i].grad;
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
            v_[i] = (beta2 * v_[i].array() + (1.0 - beta2) * g.array().square()).matrix();
            auto mhat = m_[i].array() / static_cast<S>(bc1);
            auto vhat = v_[i].array() / static_cast<S>(bc2);
            reg.items[i].value->array() -=
                static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(eps));
        }
    }
};

// ---- losses ---------------------------------------------------------------

// Column-wise softmax.
template <typename S>
Mat<S> softmax_columns(const Mat<S>& logits) {
    Mat<S> p(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        Vec<S> col = logits.col(c);
        S mx = col.maxCoeff();
        Vec<S> e = (col.array() - mx).exp();
        p.col(c) = e / e.sum();
    }
    return p;
}

// Mean cross-entropy over columns with integer labels; returns loss and
// writes dlogits (already divided by the column count). Columns whose label
// is negative are skipped (weight 0).
template <typename S>
S softmax_cross_entropy(const Mat<S>& logits, const std::vector<int>& labels,
                        const std::vector<S>& weights, Mat<S>& dlogits) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw Error("label count mismatch");
    Mat<S> p = softmax_columns(logits);
    dlogits = p;
    S total = 0, wsum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        S w = weights.empty() ? S(1) : weights[static_cast<std::size_t>(c)];
        int lab = labels[static_cast<std::size_t>(c)];
        if (lab < 0 || w == S(0)) {
            dlogits.col(c).setZero();
            continue;
        }
        total += -w * std::log(std::max(p(lab, c), static_cast<S>(1e-12)));
        dlogits(lab, c) -= S(1);
        dlogits.col(c) *= w;
        wsum += w;
    }
    if (wsum == S(0)) {
        dlogits.setZero();
        return S(0);
    }
    dlogits /= wsum;
    return total / wsum;
}

}  // namespace datum

#endif
