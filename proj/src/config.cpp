#include "ou/config.hpp"

#include <filesystem>
#include <fstream>

namespace ou {

std::string ExperimentConfig::kind() const {
    if (!body.contains("experiment")) throw ConfigError("config lacks an 'experiment' field");
    return body.at("experiment").get<std::string>();
}

std::string ExperimentConfig::config_hash() const {
    return hash_hex(fnv1a(body.dump()));  // dump() emits sorted keys → canonical
}

void merge_json(nlohmann::json& base, const nlohmann::json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object()) {
            merge_json(base[key], value);
        } else {
            base[key] = value;
        }
    }
}

namespace {

nlohmann::json parse_override_value(const std::string& text) {
    // Numbers, booleans, null, arrays and quoted strings parse as JSON; bare
    // words fall back to strings.
    const auto parsed = nlohmann::json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return nlohmann::json(text);
}

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
    if (a.is_number() && b.is_number()) return true;
    if (a.is_null()) return true;
    return a.type() == b.type();
}

}  // namespace

void apply_override(nlohmann::json& body, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const nlohmann::json value = parse_override_value(assignment.substr(eq + 1));

    std::vector<std::string> parts;
    size_t start = 0;
    while (start <= path.size()) {
        const auto dot = path.find('.', start);
        if (dot == std::string::npos) {
            parts.push_back(path.substr(start));
            break;
        }
        parts.push_back(path.substr(start, dot - start));
        start = dot + 1;
    }
    if (parts.empty() || parts.front().empty())
        throw ConfigError("empty override path in: " + assignment);

    nlohmann::json* node = &body;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i]))
            throw ConfigError("unknown override path '" + path + "' (missing '" + parts[i] + "')");
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->is_object() || !node->contains(leaf))
        throw ConfigError("unknown override path '" + path + "' (missing '" + leaf + "')");
    if (!same_kind((*node)[leaf], value))
        throw ConfigError("type mismatch overriding '" + path + "'");
    (*node)[leaf] = value;
}

namespace {

nlohmann::json load_composed(const std::filesystem::path& path, int depth) {
    if (depth > 8) throw ConfigError("defaults list nests too deeply at " + path.string());
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json file = nlohmann::json::parse(in, nullptr, true, true);  // allow comments

    nlohmann::json composed = nlohmann::json::object();
    if (file.contains("defaults")) {
        const auto& defaults = file.at("defaults");
        if (!defaults.is_array()) throw ConfigError("'defaults' must be a list: " + path.string());
        for (const auto& entry : defaults) {
            const auto sub = path.parent_path() / entry.get<std::string>();
            merge_json(composed, load_composed(sub, depth + 1));
        }
        file.erase("defaults");
    }
    merge_json(composed, file);
    return composed;
}

}  // namespace

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    cfg.body = load_composed(path, 0);
    for (const auto& ov : overrides) apply_override(cfg.body, ov);
    return cfg;
}

ExperimentConfig make_config(nlohmann::json body) {
    ExperimentConfig cfg;
    cfg.body = std::move(body);
    return cfg;
}

}  // namespace ou
