#pragma once

// Validator for the JSON-schema subset used by docs/schemas: type, properties,
// required, additionalProperties (boolean), items, enum, minimum, maximum,
// exclusiveMinimum, minItems.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace schema {

using nlohmann::json;

inline bool has_type(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    return false;
}

inline void check(const json& s, const json& v, const std::string& at, std::vector<std::string>& errors) {
    if (auto t = s.find("type"); t != s.end()) {
        bool ok = false;
        if (t->is_string()) {
            ok = has_type(v, t->get<std::string>());
        } else {
            for (const auto& x : *t) ok = ok || has_type(v, x.get<std::string>());
        }
        if (!ok) {
            errors.push_back(at + ": expected type " + t->dump() + ", got " + v.dump());
            return;
        }
    }
    if (auto e = s.find("enum"); e != s.end()) {
        bool ok = false;
        for (const auto& x : *e) ok = ok || x == v;
        if (!ok) errors.push_back(at + ": " + v.dump() + " not in " + e->dump());
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (auto m = s.find("minimum"); m != s.end() && x < m->get<double>()) errors.push_back(at + ": below minimum");
        if (auto m = s.find("maximum"); m != s.end() && x > m->get<double>()) errors.push_back(at + ": above maximum");
        if (auto m = s.find("exclusiveMinimum"); m != s.end() && x <= m->get<double>()) {
            errors.push_back(at + ": not above exclusiveMinimum");
        }
    }
    if (v.is_object()) {
        if (auto r = s.find("required"); r != s.end()) {
            for (const auto& key : *r) {
                if (!v.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.dump());
            }
        }
        const auto props = s.find("properties");
        for (const auto& [key, child] : v.items()) {
            if (props != s.end() && props->contains(key)) {
                check((*props)[key], child, at + "." + key, errors);
            } else if (auto ap = s.find("additionalProperties"); ap != s.end()) {
                if (ap->is_boolean() && !ap->get<bool>()) {
                    errors.push_back(at + ": unexpected property " + key);
                } else if (ap->is_object()) {
                    check(*ap, child, at + "." + key, errors);
                }
            }
        }
    }
    if (v.is_array()) {
        if (auto m = s.find("minItems"); m != s.end() && v.size() < m->get<std::size_t>()) {
            errors.push_back(at + ": fewer than minItems");
        }
        if (auto items = s.find("items"); items != s.end()) {
            for (std::size_t i = 0; i < v.size(); ++i) check(*items, v[i], at + "[" + std::to_string(i) + "]", errors);
        }
    }
}

/// Empty result means the document conforms.
inline std::vector<std::string> validate(const json& schema_doc, const json& value) {
    std::vector<std::string> errors;
    check(schema_doc, value, "$", errors);
    return errors;
}

inline json load(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    return json::parse(buf.str());
}

}  // namespace schema
