#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ou/common.hpp"

namespace ou {

// Composed experiment configuration. Composition order: defaults list (later
// entries override earlier), then the file's own body, then CLI overrides.
struct ExperimentConfig {
    nlohmann::json body;

    std::string kind() const;  // finetune | unlearn | relearn | eval | pools | meta-eval | bench | report
    std::string config_hash() const;
    uint64_t seed() const { return body.value("seed", 0ull); }
};

// Deep merge: `patch` wins; objects merge recursively, everything else replaces.
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

// Applies one dotted override "a.b.c=value". The path must already exist and
// the value must keep its JSON type.
void apply_override(nlohmann::json& body, const std::string& assignment);

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

// In-memory variant used by tests and the pool/meta pipelines.
ExperimentConfig make_config(nlohmann::json body);

}  // namespace ou
