#ifndef HEGEMONY_JSON_HPP
#define HEGEMONY_JSON_HPP

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

#include "hegemony/errors.hpp"

namespace hegemony {

inline const nlohmann::json& json_field(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) fail(ErrorKind::FormatError, std::string("missing field '") + key + "'");
    return j.at(key);
}

inline std::string json_string(const nlohmann::json& j, const char* key) {
    const auto& v = json_field(j, key);
    if (!v.is_string()) fail(ErrorKind::FormatError, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

template <class T>
T json_number(const nlohmann::json& j, const char* key) {
    const auto& v = json_field(j, key);
    if (!v.is_number()) fail(ErrorKind::FormatError, std::string("field '") + key + "' must be a number");
    return v.get<T>();
}

inline std::string json_u64_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t json_u64_from_hex(const std::string& s) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used, 16);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::FormatError, "bad 64-bit hex value '" + s + "'");
    }
}

}  // namespace hegemony

#endif  // HEGEMONY_JSON_HPP
