#include "deper/json_util.hpp"

#include <fstream>
#include <sstream>

#include "deper/errors.hpp"

namespace deper {

Json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open " + path.string());
    }
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw UsageError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void save_json(const std::filesystem::path& path, const Json& j, int indent) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << j.dump(indent) << "\n";
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t json_content_hash(const Json& j) { return fnv1a64(j.dump()); }

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

const char* type_name(const Json& v) {
    if (v.is_null()) return "null";
    if (v.is_boolean()) return "boolean";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    if (v.is_object()) return "object";
    if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
    return "number";
}

bool type_matches(const Json& v, const std::string& t) {
    if (t == "number") return v.is_number();
    if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
    return t == type_name(v);
}

void validate_rec(const Json& value, const Json& schema, const std::string& where,
                  std::vector<std::string>& out) {
    if (schema.contains("type")) {
        const std::string t = schema["type"].get<std::string>();
        if (!type_matches(value, t)) {
            out.push_back(where + ": expected " + t + ", got " + type_name(value));
            return;
        }
    }
    if (schema.contains("enum")) {
        bool hit = false;
        for (const auto& e : schema["enum"]) {
            if (e == value) {
                hit = true;
                break;
            }
        }
        if (!hit) {
            out.push_back(where + ": value not in enum");
        }
    }
    if (value.is_object()) {
        if (schema.contains("required")) {
            for (const auto& k : schema["required"]) {
                if (!value.contains(k.get<std::string>())) {
                    out.push_back(where + ": missing required key '" + k.get<std::string>() + "'");
                }
            }
        }
        const Json props = schema.value("properties", Json::object());
        if (schema.value("additionalProperties", true) == false) {
            for (const auto& [k, v] : value.items()) {
                (void)v;
                if (!props.contains(k)) {
                    out.push_back(where + ": unknown key '" + k + "'");
                }
            }
        }
        for (const auto& [k, sub] : props.items()) {
            if (value.contains(k)) {
                validate_rec(value[k], sub, where + "." + k, out);
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            validate_rec(value[i], schema["items"], where + "[" + std::to_string(i) + "]", out);
        }
    }
}

}  // namespace

std::vector<std::string> validate_against_schema(const Json& value, const Json& schema,
                                                 const std::string& where) {
    std::vector<std::string> out;
    validate_rec(value, schema, where, out);
    return out;
}

void reject_unknown_keys(const Json& value, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [k, v] : value.items()) {
        (void)v;
        bool ok = false;
        for (const auto& a : allowed) {
            if (a == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw UsageError(where + ": unknown key '" + k + "'");
        }
    }
}

}  // namespace deper
