#include "ou/registry.hpp"

#include <algorithm>

namespace ou {

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void HandlerRegistry::register_handler(const std::string& kind, const std::string& key,
                                       std::any impl) {
    if (key.empty()) throw ConfigError("handler key must be non-empty");
    auto& bucket = kinds_[kind];
    if (bucket.count(key))
        throw ConfigError("duplicate registration of '" + key + "' for kind '" + kind + "'");
    bucket.emplace(key, std::move(impl));
}

const std::any& HandlerRegistry::resolve_any(const std::string& kind, const std::string& key) const {
    const auto kit = kinds_.find(kind);
    if (kit == kinds_.end()) throw ConfigError("no handlers registered for kind '" + kind + "'");
    const auto it = kit->second.find(key);
    if (it == kit->second.end()) {
        std::string valid;
        std::string nearest;
        size_t best = SIZE_MAX;
        for (const auto& [k, v] : kit->second) {
            if (!valid.empty()) valid += ", ";
            valid += k;
            const size_t d = edit_distance(k, key);
            if (d < best) {
                best = d;
                nearest = k;
            }
        }
        throw ConfigError("unknown " + kind + " handler '" + key + "'; did you mean '" + nearest +
                          "'? valid keys: [" + valid + "]");
    }
    return it->second;
}

bool HandlerRegistry::has(const std::string& kind, const std::string& key) const {
    const auto kit = kinds_.find(kind);
    return kit != kinds_.end() && kit->second.count(key) > 0;
}

std::vector<std::string> HandlerRegistry::keys(const std::string& kind) const {
    std::vector<std::string> out;
    const auto kit = kinds_.find(kind);
    if (kit == kinds_.end()) return out;
    for (const auto& [k, v] : kit->second) out.push_back(k);
    return out;
}

}  // namespace ou
