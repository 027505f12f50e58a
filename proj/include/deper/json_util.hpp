#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace deper {

using Json = nlohmann::json;

Json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const Json& j, int indent = 2);

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);

// Content hash of a JSON document. nlohmann stores object keys sorted, so the
// dump is canonical and the hash is stable under key reordering.
std::uint64_t json_content_hash(const Json& j);
std::string hash_hex(std::uint64_t h);

// Minimal structural validator covering the subset of JSON Schema the shipped
// schemas use: type, properties, required, items, additionalProperties, enum.
// Returns human-readable violations; empty means valid.
std::vector<std::string> validate_against_schema(const Json& value, const Json& schema,
                                                 const std::string& where = "$");

// Rejects keys in `value` that are absent from `allowed`; used for configs.
void reject_unknown_keys(const Json& value, const std::vector<std::string>& allowed,
                         const std::string& where);

}  // namespace deper
