#ifndef DATUM_CORE_ERROR_HPP
#define DATUM_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace datum {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Raised when a training loop leaves the finite regime; carries step context.
struct DivergenceError : Error {
    int step = -1;
    DivergenceError(const std::string& msg, int at_step)
        : Error(msg + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
};

struct OutOfVocabularyError : Error {
    std::string word;
    explicit OutOfVocabularyError(const std::string& w)
        : Error("word not in vocabulary: '" + w + "'"), word(w) {}
};

}  // namespace datum

#endif
