#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ou/methods.hpp"
#include "ou/metrics.hpp"
#include "ou/model.hpp"
#include "ou/worldgen.hpp"

namespace ou {

struct PoolMember {
    Model model;
    std::string data_variant;
    double learning_rate = 0.0;
    int epoch_checkpoint = 0;
    std::string method;       // unlearned pools
    std::string hyperparams;  // serialized method args
    bool failed = false;
};

struct ModelPool {
    std::string label;  // "P" | "N" | "unlearned" | "retain"
    std::vector<PoolMember> members;

    size_t valid_count() const;
};

struct PoolGrid {
    std::vector<std::string> p_variants = {"paraphrased", "bio"};
    std::vector<std::string> n_variants = {"perturbed", "celeb_bio"};
    std::vector<double> learning_rates = {1e-3, 2e-3, 3e-3};
    std::vector<int> checkpoint_epochs = {8, 12};
    int batch_size = 8;
    uint64_t seed = 0;
};

// Trains every grid cell: P on retain + a forget-knowledge variant, N on
// retain + a knowledge-free counterpart. A failed cell is kept with its flag
// set; fewer than 3 usable members per pool is an error.
std::pair<ModelPool, ModelPool> build_pools(const FactWorld& world, const SplitSet& splits,
                                            const TransformerConfig& arch, const PoolGrid& grid);

struct FaithfulnessResult {
    double auc = 0.0;
    double threshold = 0.0;  // midpoint maximizing P-above/N-below accuracy; ties → lowest
};

FaithfulnessResult faithfulness(const std::vector<double>& scores_p,
                                const std::vector<double>& scores_n);

// Keeps members with MU >= utility_floor * target MU whose metric score is at
// or below the faithfulness threshold (the N side of the classifier).
std::vector<int> filter_members(const std::vector<double>& metric_scores,
                                const std::vector<double>& mu_scores, double threshold,
                                double utility_floor, double target_mu);

// Per-model robustness arithmetic. `undefined` outcomes are reported, never
// folded in as zeros.
struct RobustnessOutcome {
    double value = 0.0;
    bool defined = false;
    std::vector<double> per_model;
};

// r = (m_ret_before - m_ret_after) / (m_unl_before - m_unl_after); a zero
// denominator means no recovery and counts as fully robust.
double relearn_r(double ret_before, double ret_after, double unl_before, double unl_after);
RobustnessOutcome robustness_relearn_scores(const std::vector<double>& unl_before,
                                            const std::vector<double>& unl_after,
                                            double ret_before, double ret_after);

// q = after/before with the 0/0 → 1, x>0/0 → 0 convention.
double quant_q(double before, double after);
RobustnessOutcome robustness_quant_scores(const std::vector<double>& before,
                                          const std::vector<double>& after);

// p = ret_before/unl_before, gated on ret_after/unl_after >= 1 (after = probed).
RobustnessOutcome robustness_probe_scores(const std::vector<double>& unl_before,
                                          const std::vector<double>& unl_probed,
                                          double ret_before, double ret_probed);

struct MetaEvalResult {
    std::string metric_key;
    double faithfulness_auc = 0.0;
    double threshold = 0.0;
    double relearn_r_mean = 0.0;   // R
    double quant_q_mean = 0.0;     // Q
    double probe_p_mean = 0.0;     // reported, excluded from the aggregate
    bool relearn_defined = false;
    bool quant_defined = false;
    bool probe_defined = false;
    double robustness_agg = 0.0;   // HM(R, Q)
    double overall = 0.0;          // HM(faithfulness, robustness_agg)
    int filtered_pool_size = 0;
    std::vector<double> scores_p, scores_n;
};

// HM(R, Q) and HM(faithfulness, ·) with HM(x, 0) = 0; probing stays out of
// the aggregate.
void aggregate_meta(MetaEvalResult& result);

struct MetaEvalConfig {
    std::vector<std::string> metrics;  // empty → the twelve meta-evaluated keys
    double utility_floor = 0.8;
    double relearn_lr = 1e-3;
    int relearn_epochs = 1;
    int quant_bits = 4;
    int probe_layer = -1;  // -1 → n_layers - 2 when possible, else last block
    double probe_lr = 1e-3;
    int probe_epochs = 10;
    uint64_t seed = 0;
    EvalContext ctx;
};

std::vector<MetaEvalResult> run_meta_eval(const FactWorld& world, const SplitSet& splits,
                                          const Model& target, const Model& retain,
                                          const ModelPool& pool_p, const ModelPool& pool_n,
                                          const ModelPool& unlearned, const MetaEvalConfig& cfg);

// Small method grid producing the unlearned pool for robustness stress tests.
struct UnlearnedPoolGrid {
    std::vector<std::string> methods;  // empty → all nine
    std::vector<double> learning_rates = {1e-3};
    int epochs = 4;
    int batch_size = 4;
    uint64_t seed = 0;
};

ModelPool build_unlearned_pool(const FactWorld& world, const SplitSet& splits, const Model& target,
                               const UnlearnedPoolGrid& grid);

}  // namespace ou
