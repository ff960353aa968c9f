#ifndef DATUM_CORE_CHECKPOINT_HPP
#define DATUM_CORE_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace datum {

struct TensorBlob {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

// Sorted by name, so a serialized weight set has canonical bytes.
using NamedTensors = std::map<std::string, TensorBlob>;

// Checkpoint directory layout:
//   <dir>/weights.bin  little-endian container, see docs/formats.md
//   <dir>/meta.json    free-form metadata (config hash, seed, step, ...)
void save_weights(const std::string& dir, const NamedTensors& tensors);
NamedTensors load_weights(const std::string& dir);

void save_meta(const std::string& dir, const std::string& meta_json_text);
std::string load_meta_text(const std::string& dir);

bool checkpoint_exists(const std::string& dir);

}  // namespace datum

#endif
