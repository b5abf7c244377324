#include "ou/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ou {

size_t ModelPool::valid_count() const {
    size_t n = 0;
    for (const auto& m : members)
        if (!m.failed) ++n;
    return n;
}

namespace {

std::vector<std::vector<int>> pool_training_docs(const FactWorld& world, const SplitSet& splits,
                                                 const std::string& variant) {
    // Every pool model knows the retain/real/world facts; only the forget-set
    // treatment differs between cells.
    std::vector<std::vector<int>> docs = training_docs(world, splits.retain, DocVariant::Plain);
    for (const auto& extra : {splits.real_level, splits.world_level}) {
        auto d = training_docs(world, extra, DocVariant::Plain);
        docs.insert(docs.end(), d.begin(), d.end());
    }
    std::vector<std::vector<int>> forget_docs;
    if (variant == "paraphrased") {
        forget_docs = training_docs(world, splits.forget, DocVariant::Paraphrased);
    } else if (variant == "bio") {
        forget_docs = training_docs(world, splits.forget, DocVariant::Bio);
    } else if (variant == "perturbed") {
        forget_docs = training_docs(world, splits.forget, DocVariant::Perturbed);
    } else if (variant == "celeb_bio") {
        // Bio-format counterpart without the forget knowledge: biographies of
        // the famous-entity analog group.
        forget_docs = training_docs(world, splits.real_level, DocVariant::Bio);
    } else {
        throw ConfigError("unknown pool data variant: " + variant);
    }
    docs.insert(docs.end(), forget_docs.begin(), forget_docs.end());
    return docs;
}

ModelPool build_one_pool(const FactWorld& world, const SplitSet& splits,
                         const TransformerConfig& arch, const PoolGrid& grid,
                         const std::vector<std::string>& variants, const std::string& label) {
    ModelPool pool;
    pool.label = label;
    std::vector<int> epochs = grid.checkpoint_epochs;
    std::sort(epochs.begin(), epochs.end());

    int cell = 0;
    for (const auto& variant : variants) {
        const auto docs = pool_training_docs(world, splits, variant);
        for (double lr : grid.learning_rates) {
            try {
                TrainConfig tc;
                tc.learning_rate = lr;
                tc.batch_size = grid.batch_size;
                tc.seed = grid.seed ^ fnv1a(label) ^ fnv1a(variant) ^
                          static_cast<uint64_t>(cell * 7919 + 13);
                tc.epochs = epochs.front();
                Model m = train_lm(docs, tc, arch);
                int trained = epochs.front();
                for (int e : epochs) {
                    if (e > trained) {
                        TrainConfig cont = tc;
                        cont.epochs = e - trained;
                        cont.seed = tc.seed ^ (0xabcdull + static_cast<uint64_t>(e));
                        m = train_lm(docs, cont, m);
                        trained = e;
                    }
                    PoolMember pm;
                    pm.model = m;
                    pm.model.role = label == "P" ? ModelRole::Target : ModelRole::Retain;
                    pm.data_variant = variant;
                    pm.learning_rate = lr;
                    pm.epoch_checkpoint = e;
                    pool.members.push_back(std::move(pm));
                }
            } catch (const OuError& e) {
                PoolMember pm;
                pm.data_variant = variant;
                pm.learning_rate = lr;
                pm.failed = true;
                pm.hyperparams = e.what();
                pool.members.push_back(std::move(pm));
            }
            ++cell;
        }
    }
    return pool;
}

}  // namespace

std::pair<ModelPool, ModelPool> build_pools(const FactWorld& world, const SplitSet& splits,
                                            const TransformerConfig& arch, const PoolGrid& grid) {
    ModelPool p = build_one_pool(world, splits, arch, grid, grid.p_variants, "P");
    ModelPool n = build_one_pool(world, splits, arch, grid, grid.n_variants, "N");
    if (p.valid_count() < 3 || n.valid_count() < 3)
        throw NumericError("pool construction left fewer than 3 usable members per pool");
    return {std::move(p), std::move(n)};
}

FaithfulnessResult faithfulness(const std::vector<double>& scores_p,
                                const std::vector<double>& scores_n) {
    if (scores_p.size() < 3 || scores_n.size() < 3)
        throw InputError("faithfulness requires at least 3 scores per pool");

    FaithfulnessResult res;
    res.auc = auc_roc(scores_p, scores_n);

    // Candidate thresholds: midpoints between adjacent distinct pooled values.
    std::vector<double> all = scores_p;
    all.insert(all.end(), scores_n.begin(), scores_n.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<double> candidates;
    for (size_t i = 0; i + 1 < all.size(); ++i) candidates.push_back(0.5 * (all[i] + all[i + 1]));
    if (candidates.empty()) candidates.push_back(all.front());

    double best_acc = -1.0;
    for (double t : candidates) {
        double correct = 0.0;
        for (double s : scores_p)
            if (s > t) correct += 1.0;
        for (double s : scores_n)
            if (s <= t) correct += 1.0;
        const double acc = correct / static_cast<double>(scores_p.size() + scores_n.size());
        if (acc > best_acc) {  // strict > keeps the lowest threshold on ties
            best_acc = acc;
            res.threshold = t;
        }
    }
    return res;
}

std::vector<int> filter_members(const std::vector<double>& metric_scores,
                                const std::vector<double>& mu_scores, double threshold,
                                double utility_floor, double target_mu) {
    if (metric_scores.size() != mu_scores.size())
        throw InputError("filter_members: score vectors differ in length");
    std::vector<int> kept;
    for (size_t i = 0; i < metric_scores.size(); ++i) {
        if (mu_scores[i] < utility_floor * target_mu) continue;   // utility dropped too far
        if (metric_scores[i] > threshold) continue;               // insufficiently unlearned
        kept.push_back(static_cast<int>(i));
    }
    return kept;
}

double relearn_r(double ret_before, double ret_after, double unl_before, double unl_after) {
    const double denom = unl_before - unl_after;
    if (denom == 0.0) return 1.0;  // no recovery at all ⇒ maximally robust
    const double r = (ret_before - ret_after) / denom;
    return std::clamp(r, 0.0, 1.0);
}

RobustnessOutcome robustness_relearn_scores(const std::vector<double>& unl_before,
                                            const std::vector<double>& unl_after,
                                            double ret_before, double ret_after) {
    RobustnessOutcome out;
    for (size_t i = 0; i < unl_before.size(); ++i)
        out.per_model.push_back(relearn_r(ret_before, ret_after, unl_before[i], unl_after[i]));
    if (!out.per_model.empty()) {
        double s = 0.0;
        for (double v : out.per_model) s += v;
        out.value = s / static_cast<double>(out.per_model.size());
        out.defined = true;
    }
    return out;
}

double quant_q(double before, double after) {
    if (before == 0.0) return after == 0.0 ? 1.0 : 0.0;
    return std::min(after / before, 1.0);
}

RobustnessOutcome robustness_quant_scores(const std::vector<double>& before,
                                          const std::vector<double>& after) {
    RobustnessOutcome out;
    for (size_t i = 0; i < before.size(); ++i) out.per_model.push_back(quant_q(before[i], after[i]));
    if (!out.per_model.empty()) {
        double s = 0.0;
        for (double v : out.per_model) s += v;
        out.value = s / static_cast<double>(out.per_model.size());
        out.defined = true;
    }
    return out;
}

RobustnessOutcome robustness_probe_scores(const std::vector<double>& unl_before,
                                          const std::vector<double>& unl_probed,
                                          double ret_before, double ret_probed) {
    RobustnessOutcome out;
    for (size_t i = 0; i < unl_before.size(); ++i) {
        // Gate: probed retain does not fall below probed unlearned.
        const double gate = unl_probed[i] == 0.0 ? (ret_probed >= 0.0 ? 2.0 : 0.0)
                                                 : ret_probed / unl_probed[i];
        if (gate < 1.0) continue;
        // A zero unlearned score makes the ratio diverge; it clips to 1 either way.
        const double p = unl_before[i] == 0.0 ? 1.0 : ret_before / unl_before[i];
        out.per_model.push_back(std::min(p, 1.0));
    }
    if (!out.per_model.empty()) {
        double s = 0.0;
        for (double v : out.per_model) s += v;
        out.value = s / static_cast<double>(out.per_model.size());
        out.defined = true;
    }
    return out;
}

void aggregate_meta(MetaEvalResult& result) {
    auto hm2 = [](double a, double b) { return (a == 0.0 || b == 0.0) ? 0.0 : 2.0 * a * b / (a + b); };
    result.robustness_agg =
        (result.relearn_defined && result.quant_defined) ? hm2(result.relearn_r_mean, result.quant_q_mean)
        : result.relearn_defined                         ? result.relearn_r_mean
        : result.quant_defined                           ? result.quant_q_mean
                                                         : 0.0;
    result.overall = hm2(result.faithfulness_auc, result.robustness_agg);
}

ModelPool build_unlearned_pool(const FactWorld& world, const SplitSet& splits, const Model& target,
                               const UnlearnedPoolGrid& grid) {
    ModelPool pool;
    pool.label = "unlearned";
    const auto& methods = grid.methods.empty() ? method_keys() : grid.methods;
    int cell = 0;
    for (const auto& method : methods) {
        for (double lr : grid.learning_rates) {
            UnlearnConfig cfg;
            cfg.method = method;
            cfg.learning_rate = lr;
            cfg.epochs = grid.epochs;
            cfg.batch_size = grid.batch_size;
            cfg.seed = grid.seed ^ static_cast<uint64_t>(cell * 104729 + 1);
            PoolMember pm;
            pm.method = method;
            pm.learning_rate = lr;
            pm.hyperparams = "lr=" + std::to_string(lr) + ",epochs=" + std::to_string(grid.epochs);
            try {
                UnlearnResult res = run_unlearn(target, world, splits, cfg);
                pm.model = std::move(res.model);
                pm.failed = res.diverged;
                if (res.diverged) pm.hyperparams += "; " + res.note;
            } catch (const OuError& e) {
                pm.failed = true;
                pm.hyperparams += std::string("; ") + e.what();
            }
            pool.members.push_back(std::move(pm));
            ++cell;
        }
    }
    return pool;
}

std::vector<MetaEvalResult> run_meta_eval(const FactWorld& world, const SplitSet& splits,
                                          const Model& target, const Model& retain,
                                          const ModelPool& pool_p, const ModelPool& pool_n,
                                          const ModelPool& unlearned, const MetaEvalConfig& cfg) {
    const auto& metric_list = cfg.metrics.empty() ? meta_eval_metric_keys() : cfg.metrics;

    EvalJob job;
    job.world = &world;
    job.splits = &splits;
    job.ctx = cfg.ctx;

    auto scalar = [&](const std::string& key, const Model& m) {
        return eval_metric(key, m, job).agg_value;
    };

    // Model-level interventions are shared across metrics: relearn, quantize
    // and probe each pool member once.
    std::vector<const PoolMember*> members;
    for (const auto& m : unlearned.members)
        if (!m.failed) members.push_back(&m);

    std::vector<Model> relearned;
    std::vector<Model> quantized;
    std::vector<Model> probed;
    relearned.reserve(members.size());
    quantized.reserve(members.size());
    probed.reserve(members.size());

    const int probe_layer = cfg.probe_layer >= 0
                                ? cfg.probe_layer
                                : std::max(0, target.config().n_layers - 2);
    const auto probe_docs = training_docs(world, splits.retain, DocVariant::Plain);
    const ProbeHead head =
        train_probe_head(retain, probe_docs, probe_layer, cfg.probe_lr, cfg.probe_epochs, cfg.seed);

    for (const auto* pm : members) {
        relearned.push_back(
            run_relearn(pm->model, world, splits.forget, cfg.relearn_lr, cfg.relearn_epochs, cfg.seed));
        quantized.push_back(pm->model.quantize_dequantize(cfg.quant_bits));
        probed.push_back(apply_probe(pm->model, head, probe_layer));
    }
    const Model retain_relearned =
        run_relearn(retain, world, splits.forget, cfg.relearn_lr, cfg.relearn_epochs, cfg.seed);
    const Model retain_probed = apply_probe(retain, head, probe_layer);

    // Quantization robustness uses the low-learning-rate slice of the pool.
    double min_lr = 0.0;
    for (const auto* pm : members) min_lr = min_lr == 0.0 ? pm->learning_rate : std::min(min_lr, pm->learning_rate);

    const double target_mu = model_utility(target, world, splits, cfg.ctx).agg_value;
    std::vector<double> member_mu;
    for (const auto* pm : members)
        member_mu.push_back(model_utility(pm->model, world, splits, cfg.ctx).agg_value);

    std::vector<MetaEvalResult> results;
    for (const auto& key : metric_list) {
        MetaEvalResult res;
        res.metric_key = key;

        for (const auto& m : pool_p.members)
            if (!m.failed) res.scores_p.push_back(scalar(key, m.model));
        for (const auto& m : pool_n.members)
            if (!m.failed) res.scores_n.push_back(scalar(key, m.model));
        const FaithfulnessResult f = faithfulness(res.scores_p, res.scores_n);
        res.faithfulness_auc = f.auc;
        res.threshold = f.threshold;

        std::vector<double> metric_scores;
        for (const auto* pm : members) metric_scores.push_back(scalar(key, pm->model));
        const auto kept =
            filter_members(metric_scores, member_mu, f.threshold, cfg.utility_floor, target_mu);
        res.filtered_pool_size = static_cast<int>(kept.size());

        if (!kept.empty()) {
            const double ret_before = scalar(key, retain);
            const double ret_after = scalar(key, retain_relearned);
            std::vector<double> before, after;
            for (int i : kept) {
                before.push_back(metric_scores[static_cast<size_t>(i)]);
                after.push_back(scalar(key, relearned[static_cast<size_t>(i)]));
            }
            const auto rel = robustness_relearn_scores(before, after, ret_before, ret_after);
            res.relearn_r_mean = rel.value;
            res.relearn_defined = rel.defined;

            std::vector<double> q_before, q_after;
            for (int i : kept) {
                if (members[static_cast<size_t>(i)]->learning_rate > min_lr) continue;
                q_before.push_back(metric_scores[static_cast<size_t>(i)]);
                q_after.push_back(scalar(key, quantized[static_cast<size_t>(i)]));
            }
            const auto qua = robustness_quant_scores(q_before, q_after);
            res.quant_q_mean = qua.value;
            res.quant_defined = qua.defined;

            const double ret_probed = scalar(key, retain_probed);
            std::vector<double> p_before, p_probed;
            for (int i : kept) {
                p_before.push_back(metric_scores[static_cast<size_t>(i)]);
                p_probed.push_back(scalar(key, probed[static_cast<size_t>(i)]));
            }
            const auto pro = robustness_probe_scores(p_before, p_probed, ret_before, ret_probed);
            res.probe_p_mean = pro.value;
            res.probe_defined = pro.defined;
        }

        aggregate_meta(res);
        results.push_back(std::move(res));
    }
    return results;
}

}  // namespace ou
