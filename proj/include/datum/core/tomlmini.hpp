#ifndef DATUM_CORE_TOMLMINI_HPP
#define DATUM_CORE_TOMLMINI_HPP

#include <string>

#include <nlohmann/json.hpp>

namespace datum {

// Reads the config dialect documented in docs/config.md: [dotted.tables],
// key = value with string/int/float/bool/inline-array values, # comments.
// Result is a json object tree, which is what every consumer wants anyway.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_toml_file(const std::string& path);

}  // namespace datum

#endif
