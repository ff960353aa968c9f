#include "datum/core/hash.hpp"

#include <cstdio>

#include "datum/core/rng.hpp"

namespace datum {

std::string config_hash(const nlohmann::json& value) {
    std::string text = value.dump();
    std::uint64_t lo = fnv1a64(text);
    std::uint64_t hi = fnv1a64(text, 0x6c62272e07bb0142ull);
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(hi),
                  static_cast<unsigned long long>(lo));
    return std::string(buf);
}

std::string stage_key(const nlohmann::json& config, const std::vector<std::string>& upstream) {
    nlohmann::json wrap;
    wrap["config"] = config;
    wrap["upstream"] = upstream;
    return config_hash(wrap);
}

}  // namespace datum
