#ifndef DATUM_TEXT_TEXT_HPP
#define DATUM_TEXT_TEXT_HPP

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datum/core/error.hpp"
#include "datum/nn/nn.hpp"

namespace datum {

inline constexpr int kTextDim = 64;
inline constexpr int kMaxLen = 8;

// Fixed word list; an entry may be a multi-word phrase and the tokenizer
// greedily matches the longest one, so long template tails ("seen from the
// dash cam") cost a single slot of the 8-token budget.
class Vocabulary {
public:
    static Vocabulary standard();
    static Vocabulary from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    int size() const { return static_cast<int>(tokens_.size()); }
    int max_len() const { return kMaxLen; }
    int pad_id() const { return 0; }
    int vstar_id() const;
    int id(const std::string& token) const;  // -1 when absent
    const std::string& token(int id) const;

    std::vector<int> tokenize(const std::string& text) const;  // padded to max_len
    std::string detokenize(const std::vector<int>& ids) const;

private:
    std::vector<std::string> tokens_;
};

std::string training_prompt();
std::string inference_prompt(const std::string& cls, bool things_only = true);
std::string dashcam_prompt(const std::string& cls);
std::string prior_caption(const std::string& dominant);  // "none" or a things class

template <typename S>
struct TextEncoder {
    Embedding<S> emb;
    Mat<S> pos, dpos;  // d_text x max_len, added to content tokens only
    Attention<S> mix;
    int pad_id = 0;
    std::vector<int> ids_;

    void init(Rng& rng, int vocab_size) {
        emb.init(rng, kTextDim, vocab_size, 0.02);
        pos = normal_matrix<S>(rng, kTextDim, kMaxLen, 0.02);
        dpos = Mat<S>::Zero(kTextDim, kMaxLen);
        mix.init(rng, kTextDim, kTextDim, kTextDim, kTextDim);
    }

    void reg(ParamRegistry<S>& r, const std::string& prefix) {
        emb.reg(r, prefix + ".emb");
        r.add(prefix + ".pos", &pos, &dpos);
        mix.reg(r, prefix + ".mix");
    }

    // ids: batch*max_len token ids; returns d_text x (batch*max_len).
    Mat<S> forward(const std::vector<int>& ids, int batch) {
        if (static_cast<int>(ids.size()) != batch * kMaxLen) throw Error("bad token batch");
        ids_ = ids;
        Mat<S> x = emb.forward(ids);
        for (int i = 0; i < batch * kMaxLen; ++i)
            if (ids[i] != pad_id) x.col(i) += pos.col(i % kMaxLen);
        return mix.forward(x, x, batch);
    }

    void backward(const Mat<S>& dy, int batch) {
        Mat<S> dctx = Mat<S>::Zero(dy.rows(), dy.cols());
        Mat<S> dx = mix.backward(dy, dctx, batch);
        dx += dctx;
        for (int i = 0; i < batch * kMaxLen; ++i)
            if (ids_[i] != pad_id) dpos.col(i % kMaxLen) += dx.col(i);
        emb.backward(dx);
    }
};

}  // namespace datum

#endif
