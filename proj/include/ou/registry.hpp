#pragma once

#include <any>
#include <map>
#include <string>
#include <vector>

#include "ou/common.hpp"

namespace ou {

// String-keyed handler registry: (kind, key) → type-erased implementation.
// Unknown keys fail loudly with the valid key list and the nearest match.
class HandlerRegistry {
public:
    void register_handler(const std::string& kind, const std::string& key, std::any impl);

    const std::any& resolve_any(const std::string& kind, const std::string& key) const;

    template <class T>
    const T& resolve(const std::string& kind, const std::string& key) const {
        const std::any& a = resolve_any(kind, key);
        const T* p = std::any_cast<T>(&a);
        if (!p) throw ConfigError("handler '" + key + "' of kind '" + kind + "' has the wrong type");
        return *p;
    }

    bool has(const std::string& kind, const std::string& key) const;
    std::vector<std::string> keys(const std::string& kind) const;

private:
    std::map<std::string, std::map<std::string, std::any>> kinds_;
};

// Levenshtein distance, used for the nearest-key suggestion.
size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace ou
