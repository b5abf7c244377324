#pragma once

#include <map>
#include <string>
#include <vector>

#include "ou/model.hpp"
#include "ou/worldgen.hpp"

namespace ou {

// Universal metric output contract: one value per example index plus the
// documented aggregate (mean unless the metric states otherwise).
struct MetricReport {
    std::string metric_key;
    std::string model_id;
    std::string dataset_id;
    double agg_value = 0.0;
    std::map<int, double> value_by_index;
};

struct MIAResult {
    std::string attack_key;
    std::vector<double> member_scores;     // per forget example, lower = more member-like
    std::vector<double> nonmember_scores;  // per holdout example
    double auc = 0.0;                      // member-vs-nonmember separability
    bool zlib_fallback = false;            // an empty text fell back to the loss score
};

struct EvalContext {
    int generation_budget = 16;
    bool normalized_probability = true;  // exposed: exp(mean logprob) vs exp(sum)
    double mink_k_frac = 0.2;
};

// ---------------------------------------------------------------------------
// shared statistics
// ---------------------------------------------------------------------------

// Probability that a random pos exceeds a random neg; ties count 1/2.
double auc_roc(const std::vector<double>& pos, const std::vector<double>& neg);

// Two-sample Kolmogorov-Smirnov max CDF gap and its asymptotic p-value.
double ks_statistic(const std::vector<double>& a, const std::vector<double>& b);
double ks_pvalue(const std::vector<double>& a, const std::vector<double>& b);

// ROUGE-L F1 on token sequences (LCS precision/recall).
double rouge_l_f1(const std::vector<int>& candidate, const std::vector<int>& reference);

double harmonic_mean(const std::vector<double>& xs);

// ---------------------------------------------------------------------------
// metric operations (data = example indices into world.examples)
// ---------------------------------------------------------------------------

MetricReport metric_probability(const Model& model, const FactWorld& world,
                                const std::vector<int>& data, bool use_paraphrase,
                                const EvalContext& ctx);

enum class RougeVariant { Plain, Paraphrase, Jailbreak };
MetricReport metric_rouge(const Model& model, const FactWorld& world,
                          const std::vector<int>& data, RougeVariant variant,
                          const EvalContext& ctx);

MetricReport metric_em(const Model& model, const FactWorld& world, const std::vector<int>& data);
MetricReport metric_es(const Model& model, const FactWorld& world, const std::vector<int>& data);

enum class TruthRatioVariant { Knowledge, Privacy };
MetricReport metric_truth_ratio(const Model& model, const FactWorld& world,
                                const std::vector<int>& data, TruthRatioVariant variant);

MIAResult mia_attack(const std::string& attack, const Model& model, const FactWorld& world,
                     const std::vector<int>& forget, const std::vector<int>& holdout,
                     double k_frac = 0.2);

// KS p-value between privacy truth-ratio samples; high ⇒ distributions match.
double forget_quality(const std::vector<double>& unlearned_tr,
                      const std::vector<double>& retain_tr);

// HM of {probability, ROUGE, privacy truth ratio} × {retain, real, world}.
MetricReport model_utility(const Model& model, const FactWorld& world, const SplitSet& splits,
                           const EvalContext& ctx);

MetricReport metric_fluency(const Model& model, const FactWorld& world,
                            const std::vector<int>& prompt_data, const EvalContext& ctx);

// ---------------------------------------------------------------------------
// keyed dispatch (handler-registry facing)
// ---------------------------------------------------------------------------

struct EvalJob {
    const FactWorld* world = nullptr;
    const SplitSet* splits = nullptr;
    EvalContext ctx;
    const Model* retain_model = nullptr;  // required by forget_quality
    std::string model_id;
};

// All registered metric keys; the first twelve are the meta-evaluated set.
const std::vector<std::string>& metric_keys();
const std::vector<std::string>& meta_eval_metric_keys();

MetricReport eval_metric(const std::string& key, const Model& model, const EvalJob& job);

// Reference bigram LM behind the fluency heuristic; exposed for calibration tests.
class BigramRef {
public:
    BigramRef(const FactWorld& world);
    double mean_nll(const std::vector<int>& tokens) const;
    double fluency_score(const std::vector<int>& tokens) const;  // sigmoid-mapped, empty → 0

private:
    int vocab_size_;
    double alpha_ = 0.1;
    std::map<std::pair<int, int>, double> counts_;
    std::map<int, double> ctx_totals_;
};

}  // namespace ou
