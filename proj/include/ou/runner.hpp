#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ou/config.hpp"
#include "ou/metaeval.hpp"
#include "ou/metrics.hpp"
#include "ou/registry.hpp"

namespace ou {

// Handler signatures stored in the registry.
using MetricFn = std::function<MetricReport(const Model&, const EvalJob&)>;
using TrainerFn =
    std::function<UnlearnResult(const Model&, const FactWorld&, const SplitSet&, const UnlearnConfig&)>;
using DatasetFn = std::function<std::vector<std::vector<int>>(const FactWorld&, const SplitSet&,
                                                              const std::vector<int>&)>;
using LoaderFn = std::function<Model(const std::string&)>;
using InterventionFn = std::function<Model(const Model&, const nlohmann::json&, const FactWorld&,
                                           const SplitSet&)>;

// Registry preloaded with every built-in handler (trainers, metrics, dataset
// variants, model loaders, interventions).
HandlerRegistry& default_registry();

struct RunResult {
    std::filesystem::path run_dir;
    bool skipped = false;
    bool failed = false;
    std::string failed_stage;
    long training_steps = 0;
    std::vector<std::string> artifacts;
};

// Dispatches a composed config to its pipeline. Artifacts land under
// <output_root>/runs/<experiment>/<config-hash>/; a FAILED marker names the
// stage of a mid-run failure; DONE marks成功 completion.
RunResult run_experiment(const ExperimentConfig& cfg, std::string output_root = "",
                         bool skip_existing = false);

// Renders results in the requested format ("json", "table" or "plots").
std::vector<std::string> emit_report(const nlohmann::json& results, const std::string& format,
                                     const std::filesystem::path& out_dir);

// Default output root: $OU_OUTPUT_DIR if set, else the current directory.
std::string default_output_root();

// Shared helpers for pipelines and tests.
FactWorld world_from_config(const nlohmann::json& world_cfg);
SplitSet splits_from_config(const FactWorld& world, const nlohmann::json& world_cfg);
TransformerConfig arch_from_config(const nlohmann::json& arch_cfg, const FactWorld& world,
                                   uint64_t seed);
nlohmann::json eval_report_json(const Model& model, const EvalJob& job,
                                const std::vector<std::string>& metrics,
                                const std::string& config_hash, uint64_t seed);

}  // namespace ou
