#include "datum/text/text.hpp"

#include <algorithm>
#include <sstream>

#include "datum/scenegen/scenegen.hpp"

namespace datum {

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        words.push_back(w);
    }
    return words;
}

int phrase_len(const std::string& token) {
    return 1 + static_cast<int>(std::count(token.begin(), token.end(), ' '));
}

}  // namespace

Vocabulary Vocabulary::standard() {
    Vocabulary v;
    v.tokens_ = {"<pad>",      "a",    "photo", "of",   "an",   "urban",
                 "scene",      "vstar", "car",  "pedestrian", "sign", "sky",
                 "road",       "building", "seen from the dash cam"};
    return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.tokens_ = j.get<std::vector<std::string>>();
    if (v.tokens_.empty() || v.tokens_[0] != "<pad>") throw Error("vocabulary must start with <pad>");
    if (v.vstar_id() < 0) throw Error("vocabulary lacks vstar");
    return v;
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

int Vocabulary::vstar_id() const { return id("vstar"); }

int Vocabulary::id(const std::string& token) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (tokens_[i] == token) return static_cast<int>(i);
    return -1;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw Error("token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<std::string> words = split_words(text);
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < words.size()) {
        int matched = -1, matched_len = 0;
        for (std::size_t t = 0; t < tokens_.size(); ++t) {
            int len = phrase_len(tokens_[t]);
            if (len < matched_len || i + static_cast<std::size_t>(len) > words.size()) continue;
            std::string joined = words[i];
            for (int k = 1; k < len; ++k) joined += " " + words[i + static_cast<std::size_t>(k)];
            if (joined == tokens_[t] && len > matched_len) {
                matched = static_cast<int>(t);
                matched_len = len;
            }
        }
        if (matched < 0) throw OutOfVocabularyError(words[i]);
        ids.push_back(matched);
        i += static_cast<std::size_t>(matched_len);
    }
    if (static_cast<int>(ids.size()) > kMaxLen)
        throw Error("prompt longer than " + std::to_string(kMaxLen) + " tokens");
    ids.resize(kMaxLen, pad_id());
    return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == pad_id()) continue;
        if (!out.empty()) out += " ";
        out += token(id);
    }
    return out;
}

std::string training_prompt() { return "a photo of a vstar urban scene"; }

std::string inference_prompt(const std::string& cls, bool things_only) {
    if (cls.empty() || cls == "none") return training_prompt();
    int id = class_id(cls);
    if (id < 0) throw Error("unknown class " + cls);
    if (things_only && !is_thing(id)) throw Error("stuff class '" + cls + "' with things_only set");
    return "a photo of a vstar " + cls;
}

std::string dashcam_prompt(const std::string& cls) {
    return inference_prompt(cls) + " seen from the dash cam";
}

std::string prior_caption(const std::string& dominant) {
    if (dominant.empty() || dominant == "none") return "a photo of an urban scene";
    int id = class_id(dominant);
    if (id < 0 || !is_thing(id)) throw Error("bad dominant class " + dominant);
    return "a photo of a " + dominant;
}

}  // namespace datum
