#ifndef DATUM_CORE_HASH_HPP
#define DATUM_CORE_HASH_HPP

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace datum {

// 128-bit hex digest of a json value. Key order does not matter: nlohmann's
// object type keeps keys sorted, so dumping gives canonical bytes.
std::string config_hash(const nlohmann::json& value);

// Digest of a stage config plus the digests of everything it consumed.
std::string stage_key(const nlohmann::json& config, const std::vector<std::string>& upstream);

}  // namespace datum

#endif
