#include "ou/methods.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ou/rng.hpp"

namespace ou {

namespace {

double log_sigmoid(double u) {
    return u < 0.0 ? u - std::log1p(std::exp(u)) : -std::log1p(std::exp(-u));
}

double sigmoid(double u) { return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

bool needs_ref(const std::string& m) {
    return m == "IdkDPO" || m == "NPO" || m == "AltPO" || m == "RMU" || m == "UNDIAL";
}

bool uses_beta(const std::string& m) {
    return m == "IdkDPO" || m == "NPO" || m == "AltPO" || m == "SimNPO" || m == "UNDIAL";
}

std::vector<int> scoring_sequence(const Model& model, const std::vector<int>& prompt,
                                  const std::vector<int>& target) {
    std::vector<int> seq;
    seq.reserve(1 + prompt.size() + target.size());
    seq.push_back(model.config().bos_id);
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    seq.insert(seq.end(), target.begin(), target.end());
    return seq;
}

// Sum over target positions of log p(target_i | ...). When d_logits is given,
// accumulates d(sum)/d(logits) scaled by weight.
double seq_logprob_sum(const Model& model, const ForwardCache& fc, size_t prompt_len,
                       const std::vector<int>& target, Matrix* d_logits, double weight) {
    double total = 0.0;
    const int base = static_cast<int>(prompt_len);
    for (size_t i = 0; i < target.size(); ++i) {
        const int pos = base + static_cast<int>(i);
        const auto ls = Model::log_softmax_row(fc.logits, pos);
        const int gold = target[i];
        total += ls[static_cast<size_t>(gold)];
        if (d_logits) {
            double* dl = d_logits->row(pos);
            for (int v = 0; v < model.config().vocab_size; ++v)
                dl[v] -= weight * std::exp(ls[static_cast<size_t>(v)]);
            dl[gold] += weight;
        }
    }
    return total;
}

}  // namespace

const std::vector<std::string>& method_keys() {
    static const std::vector<std::string> keys = {"GradAscent", "GradDiff", "IdkNLL",
                                                  "IdkDPO",     "NPO",      "SimNPO",
                                                  "AltPO",      "RMU",      "UNDIAL"};
    return keys;
}

int UnlearnConfig::rmu_layer(const TransformerConfig& arch) const {
    return layer < 0 ? arch.n_layers - 1 : layer;
}

double UnlearnConfig::effective_grad_clip() const {
    if (grad_clip >= 0.0) return grad_clip;
    // Unbounded ascent diverges; the ascent family gets a norm guard.
    return (method == "GradAscent" || method == "GradDiff") ? 1.0 : 0.0;
}

void UnlearnConfig::validate(const TransformerConfig& arch) const {
    const auto& keys = method_keys();
    if (std::find(keys.begin(), keys.end(), method) == keys.end())
        throw ConfigError("unknown unlearning method: " + method);
    if (uses_beta(method) && !(beta > 0.0)) throw ConfigError(method + " requires beta > 0");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (method == "RMU") {
        const int l = rmu_layer(arch);
        if (l < 0 || l >= arch.n_layers)
            throw ConfigError("RMU layer " + std::to_string(l) + " out of range");
    }
}

RMUState RMUState::init(const TransformerConfig& arch, const UnlearnConfig& cfg) {
    RMUState st;
    Rng rng(cfg.seed ^ fnv1a("rmu-steering"));
    st.steering_vector.resize(static_cast<size_t>(arch.d_model));
    for (auto& x : st.steering_vector) x = rng.uniform();
    const int l = cfg.rmu_layer(arch);
    for (int b = std::max(0, l - 2); b <= l; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        for (const char* n : {"wq", "wk", "wv", "wo", "w1", "w2"})
            st.trainable_tensors.push_back(p + n);
    }
    return st;
}

MethodBatch method_batch(const FactWorld& world, const std::vector<int>& example_indices) {
    MethodBatch batch;
    const int eos = world.vocab.eos_id();
    auto span = [&](const std::string& text) {
        std::vector<int> t = world.vocab.encode_text(text);
        t.push_back(eos);
        return t;
    };
    for (int idx : example_indices) {
        const QAExample& ex = world.examples.at(static_cast<size_t>(idx));
        MethodExample me;
        me.prompt = qa_prompt(world, ex);
        me.target = span(ex.answer);
        if (!ex.idk_answer.empty()) me.idk = span(ex.idk_answer);
        if (!ex.alt_answer.empty()) me.alt = span(ex.alt_answer);
        batch.push_back(std::move(me));
    }
    return batch;
}

double answer_nll(const Model& model, const std::vector<int>& prompt,
                  const std::vector<int>& target, Params* grads, double weight) {
    if (target.empty()) throw InputError("answer_nll: empty target");
    const auto seq = scoring_sequence(model, prompt, target);
    const ForwardCache fc = model.forward(seq);
    const int base = static_cast<int>(prompt.size());
    const double inv_n = 1.0 / static_cast<double>(target.size());

    double nll = 0.0;
    Matrix d_logits;
    if (grads) d_logits = Matrix(fc.seq_len(), model.config().vocab_size);
    for (size_t i = 0; i < target.size(); ++i) {
        const int pos = base + static_cast<int>(i);
        const auto ls = Model::log_softmax_row(fc.logits, pos);
        const int gold = target[i];
        nll -= ls[static_cast<size_t>(gold)] * inv_n;
        if (grads) {
            double* dl = d_logits.row(pos);
            const double w = weight * inv_n;
            for (int v = 0; v < model.config().vocab_size; ++v)
                dl[v] = w * std::exp(ls[static_cast<size_t>(v)]);
            dl[gold] -= w;
        }
    }
    if (grads) model.backward(fc, d_logits, nullptr, *grads);
    return nll;
}

namespace {

// Batch-mean token-mean NLL with gradient scaled by weight/B.
double batch_nll(const Model& model, const MethodBatch& batch,
                 const std::vector<int> MethodExample::* span, Params* grads, double weight) {
    if (batch.empty()) throw DataError("empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto& tgt = ex.*span;
        if (tgt.empty()) throw DataError("batch example lacks the required answer variant");
        total += answer_nll(model, ex.prompt, tgt, grads, weight * inv_b) * inv_b;
    }
    return total;
}

// Sequence-sum log-probs under the frozen reference (no gradient).
double ref_seq_logprob(const Model& ref, const std::vector<int>& prompt,
                       const std::vector<int>& target) {
    const auto lps = ref.token_logprobs(prompt, target);
    double s = 0.0;
    for (double lp : lps) s += lp;
    return s;
}

// DPO-style forget term: -(2/beta) * mean log sigma(sum_spans -beta*(S_unl - S_ref)).
// `spans` lists the answer variants entering the inner sum (one for NPO, two
// for IdkDPO/AltPO).
double dpo_family_term(const Model& model, const Model& ref, const MethodBatch& batch,
                       const std::vector<const std::vector<int> MethodExample::*>& spans,
                       double beta, Params* grads) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        double u = 0.0;
        std::vector<double> s_unl(spans.size());
        std::vector<ForwardCache> caches(spans.size());
        for (size_t k = 0; k < spans.size(); ++k) {
            const auto& tgt = ex.*spans[k];
            if (tgt.empty()) throw DataError("batch example lacks the required answer variant");
            caches[k] = model.forward(scoring_sequence(model, ex.prompt, tgt));
            s_unl[k] = seq_logprob_sum(model, caches[k], ex.prompt.size(), tgt, nullptr, 0.0);
            u += -beta * (s_unl[k] - ref_seq_logprob(ref, ex.prompt, tgt));
        }
        total += -(2.0 / beta) * log_sigmoid(u) * inv_b;
        if (grads) {
            // dL/dS_unl,k = 2*(1 - sigma(u)) / B for every span.
            const double d_s = 2.0 * (1.0 - sigmoid(u)) * inv_b;
            for (size_t k = 0; k < spans.size(); ++k) {
                const auto& tgt = ex.*spans[k];
                Matrix d_logits(caches[k].seq_len(), model.config().vocab_size);
                seq_logprob_sum(model, caches[k], ex.prompt.size(), tgt, &d_logits, d_s);
                model.backward(caches[k], d_logits, nullptr, *grads);
            }
        }
    }
    return total;
}

double simnpo_term(const Model& model, const MethodBatch& batch, double beta, double delta,
                   Params* grads) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        const double n = static_cast<double>(ex.target.size());
        const ForwardCache fc = model.forward(scoring_sequence(model, ex.prompt, ex.target));
        const double s = seq_logprob_sum(model, fc, ex.prompt.size(), ex.target, nullptr, 0.0);
        const double u = -(beta / n) * s - delta;
        total += -(2.0 / beta) * log_sigmoid(u) * inv_b;
        if (grads) {
            const double d_s = (2.0 / n) * (1.0 - sigmoid(u)) * inv_b;
            Matrix d_logits(fc.seq_len(), model.config().vocab_size);
            seq_logprob_sum(model, fc, ex.prompt.size(), ex.target, &d_logits, d_s);
            model.backward(fc, d_logits, nullptr, *grads);
        }
    }
    return total;
}

// Mean squared distance of answer-position hidden states to a fixed target
// activation; drives phi toward c*u on forget and toward the frozen target's
// phi on retain.
double rmu_term(const Model& model, const MethodBatch& batch, int layer,
                const std::vector<double>* steer_target, double steer_scale, const Model* ref,
                Params* grads) {
    const int d = model.config().d_model;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto seq = scoring_sequence(model, ex.prompt, ex.target);
        const ForwardCache fc = model.forward(seq);
        const Matrix& hidden = fc.layers[static_cast<size_t>(layer)].x_out;
        Matrix ref_hidden;
        if (ref) ref_hidden = ref->hidden_states(seq, layer);

        const int base = static_cast<int>(ex.prompt.size());
        const int n = static_cast<int>(ex.target.size());
        const double inv_n = 1.0 / static_cast<double>(n);

        HiddenGrad hg;
        if (grads) {
            hg.layer = layer;
            hg.d_hidden = Matrix(fc.seq_len(), d);
        }
        for (int i = 0; i < n; ++i) {
            const int pos = base + i;
            const double* phi = hidden.row(pos);
            double sq = 0.0;
            for (int c = 0; c < d; ++c) {
                const double tgt = steer_target ? steer_scale * (*steer_target)[static_cast<size_t>(c)]
                                                : ref_hidden.at(pos, c);
                const double diff = phi[c] - tgt;
                sq += diff * diff;
                if (grads) hg.d_hidden.at(pos, c) = 2.0 * diff * inv_n * inv_b;
            }
            total += sq * inv_n * inv_b;
        }
        if (grads) model.backward(fc, Matrix{}, &hg, *grads);
    }
    return total;
}

double undial_term(const Model& model, const Model& ref, const MethodBatch& batch, double beta,
                   Params* grads, double weight) {
    const int vocab = model.config().vocab_size;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto seq = scoring_sequence(model, ex.prompt, ex.target);
        const ForwardCache fc = model.forward(seq);
        const ForwardCache fr = ref.forward(seq);
        const int base = static_cast<int>(ex.prompt.size());
        const int n = static_cast<int>(ex.target.size());
        const double inv_n = 1.0 / static_cast<double>(n);

        Matrix d_logits;
        if (grads) d_logits = Matrix(fc.seq_len(), vocab);
        for (int i = 0; i < n; ++i) {
            const int pos = base + i;
            const int gold = ex.target[static_cast<size_t>(i)];

            // q = softmax(z_orig - beta * onehot(gold)), z_orig from the frozen target.
            std::vector<double> z_adj(static_cast<size_t>(vocab));
            const double* zr = fr.logits.row(pos);
            for (int v = 0; v < vocab; ++v) z_adj[static_cast<size_t>(v)] = zr[v];
            z_adj[static_cast<size_t>(gold)] -= beta;
            double maxv = z_adj[0];
            for (double z : z_adj) maxv = std::max(maxv, z);
            double denom = 0.0;
            for (double& z : z_adj) {
                z = std::exp(z - maxv);
                denom += z;
            }
            for (double& z : z_adj) z /= denom;  // now q

            const auto lp = Model::log_softmax_row(fc.logits, pos);
            double kl = 0.0;
            for (int v = 0; v < vocab; ++v) {
                const double q = z_adj[static_cast<size_t>(v)];
                if (q > 0.0) kl += q * (std::log(q) - lp[static_cast<size_t>(v)]);
            }
            total += kl * inv_n * inv_b;
            if (grads) {
                double* dl = d_logits.row(pos);
                const double w = weight * inv_n * inv_b;
                for (int v = 0; v < vocab; ++v)
                    dl[v] += w * (std::exp(lp[static_cast<size_t>(v)]) - z_adj[static_cast<size_t>(v)]);
            }
        }
        if (grads) model.backward(fc, d_logits, nullptr, *grads);
    }
    return total;
}

}  // namespace

double unlearn_loss(const std::string& method, const Model& model, const Model* ref_model,
                    const MethodBatch& forget_batch, const MethodBatch& retain_batch,
                    const UnlearnConfig& cfg, Params* grads, const RMUState* rmu) {
    if (needs_ref(method) && ref_model == nullptr)
        throw ConfigError(method + " requires a reference model");
    if (forget_batch.empty()) throw DataError("empty forget batch");
    if (uses_beta(method) && !(cfg.beta > 0.0)) throw ConfigError(method + " requires beta > 0");

    // Retain regularizer alpha * mean NLL; skipped entirely at alpha = 0 so the
    // pure-forget closed forms hold regardless of retain batch content.
    auto retain_term = [&]() {
        if (cfg.alpha == 0.0) return 0.0;
        return cfg.alpha * batch_nll(model, retain_batch, &MethodExample::target, grads, cfg.alpha);
    };

    if (method == "GradAscent") {
        return -cfg.gamma * batch_nll(model, forget_batch, &MethodExample::target, grads, -cfg.gamma);
    }
    if (method == "GradDiff") {
        const double f = batch_nll(model, forget_batch, &MethodExample::target, grads, -cfg.gamma);
        return -cfg.gamma * f + retain_term();
    }
    if (method == "IdkNLL") {
        const double f = batch_nll(model, forget_batch, &MethodExample::idk, grads, cfg.gamma);
        return cfg.gamma * f + retain_term();
    }
    if (method == "IdkDPO" || method == "AltPO") {
        const auto pref = method == "IdkDPO" ? &MethodExample::idk : &MethodExample::alt;
        const double f = dpo_family_term(model, *ref_model, forget_batch,
                                         {pref, &MethodExample::target}, cfg.beta, grads);
        return f + retain_term();
    }
    if (method == "NPO") {
        const double f = dpo_family_term(model, *ref_model, forget_batch, {&MethodExample::target},
                                         cfg.beta, grads);
        return f + retain_term();
    }
    if (method == "SimNPO") {
        const double f = simnpo_term(model, forget_batch, cfg.beta, cfg.delta, grads);
        return f + retain_term();
    }
    if (method == "RMU") {
        if (rmu == nullptr) throw ConfigError("RMU requires an initialized RMUState");
        const int l = cfg.rmu_layer(model.config());
        const double f = rmu_term(model, forget_batch, l, &rmu->steering_vector,
                                  cfg.steering_coeff, nullptr, grads);
        const double r = rmu_term(model, retain_batch, l, nullptr, 0.0, ref_model, grads);
        return f + r;
    }
    if (method == "UNDIAL") {
        const double f = cfg.gamma == 0.0
                             ? 0.0
                             : undial_term(model, *ref_model, forget_batch, cfg.beta, grads, cfg.gamma);
        return cfg.gamma * f + retain_term();
    }
    throw ConfigError("unknown unlearning method: " + method);
}

UnlearnResult run_unlearn(const Model& target, const FactWorld& world, const SplitSet& splits,
                          const UnlearnConfig& cfg) {
    cfg.validate(target.config());

    UnlearnResult result;
    result.model = target;
    result.model.role = ModelRole::Unlearned;
    result.model.seed = cfg.seed;
    if (cfg.epochs == 0) return result;

    const Model& ref = target;
    RMUState rmu;
    std::vector<std::string> mask;
    const std::vector<std::string>* mask_ptr = nullptr;
    if (cfg.method == "RMU") {
        rmu = RMUState::init(target.config(), cfg);
        mask = rmu.trainable_tensors;
        mask_ptr = &mask;
    }

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.seed = cfg.seed;
    Optimizer opt(target.config(), tc);

    Params grads;
    grads.init_shapes(target.config());
    Model last_stable = result.model;

    const double clip = cfg.effective_grad_clip();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches =
            paired_batches(splits.forget, splits.retain, cfg.batch_size,
                           cfg.seed ^ (0xc001d00dull + static_cast<uint64_t>(epoch)));
        for (const auto& [f_idx, r_idx] : batches) {
            const MethodBatch fb = method_batch(world, f_idx);
            const MethodBatch rb = method_batch(world, r_idx);
            const double loss =
                unlearn_loss(cfg.method, result.model, &ref, fb, rb, cfg, &grads, &rmu);
            if (!std::isfinite(loss)) {
                result.model = last_stable;
                result.diverged = true;
                result.note = "non-finite loss at step " + std::to_string(result.steps) +
                              " (epoch " + std::to_string(epoch) + "); last stable parameters kept";
                return result;
            }
            if (clip > 0.0) clip_grad_norm(grads, clip);
            last_stable = result.model;
            opt.step(result.model, grads, mask_ptr);
            ++result.steps;
        }
    }
    return result;
}

Model run_relearn(const Model& model, const FactWorld& world, const std::vector<int>& forget,
                  double learning_rate, int epochs, uint64_t seed) {
    TrainConfig tc;
    tc.learning_rate = learning_rate;
    tc.epochs = epochs;
    tc.batch_size = 4;
    tc.seed = seed;
    const auto docs = training_docs(world, forget, DocVariant::Plain);
    Model out = train_lm(docs, tc, model);
    out.role = model.role;
    return out;
}

ProbeHead train_probe_head(const Model& base, const std::vector<std::vector<int>>& retain_docs,
                           int layer, double learning_rate, int epochs, uint64_t seed) {
    if (layer < 0 || layer >= base.config().n_layers) throw ConfigError("probe layer out of range");
    const int d = base.config().d_model;
    const int vocab = base.config().vocab_size;

    ProbeHead head;
    head.layer = layer;
    head.w = base.params().head;  // start from the base model's own read-out

    // Adam on the single matrix; the base model stays frozen.
    Matrix m(vocab, d), v(vocab, d);
    long t = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    std::vector<size_t> order(retain_docs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> normed(static_cast<size_t>(d));
    std::vector<double> logits(static_cast<size_t>(vocab));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
        rng.shuffle(order);
        for (size_t oi : order) {
            const auto& doc = retain_docs[oi];
            if (doc.size() < 2) continue;
            const ForwardCache fc = base.forward(doc);
            const Matrix& hidden = fc.layers[static_cast<size_t>(layer)].x_out;
            Matrix grad(vocab, d);
            const int n_pred = fc.seq_len() - 1;
            const double inv_n = 1.0 / static_cast<double>(n_pred);
            for (int j = 0; j < n_pred; ++j) {
                double ms = 0.0;
                const double* h = hidden.row(j);
                for (int c = 0; c < d; ++c) ms += h[c] * h[c];
                const double inv = 1.0 / std::sqrt(ms / d + 1e-6);
                for (int c = 0; c < d; ++c) normed[static_cast<size_t>(c)] = h[c] * inv;
                matvec(head.w, normed.data(), logits.data());
                double maxv = logits[0];
                for (double z : logits) maxv = std::max(maxv, z);
                double denom = 0.0;
                for (double z : logits) denom += std::exp(z - maxv);
                const int gold = doc[static_cast<size_t>(j) + 1];
                for (int vv = 0; vv < vocab; ++vv) {
                    const double p = std::exp(logits[static_cast<size_t>(vv)] - maxv) / denom;
                    const double g = (p - (vv == gold ? 1.0 : 0.0)) * inv_n;
                    double* gr = grad.row(vv);
                    for (int c = 0; c < d; ++c) gr[c] += g * normed[static_cast<size_t>(c)];
                }
            }
            ++t;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
            for (size_t i = 0; i < head.w.a.size(); ++i) {
                const double g = grad.a[i];
                m.a[i] = b1 * m.a[i] + (1.0 - b1) * g;
                v.a[i] = b2 * v.a[i] + (1.0 - b2) * g * g;
                head.w.a[i] -= learning_rate * (m.a[i] / bc1) / (std::sqrt(v.a[i] / bc2) + eps);
            }
        }
    }
    return head;
}

Model apply_probe(const Model& model, const ProbeHead& head, int layer) {
    if (head.w.rows != model.config().vocab_size || head.w.cols != model.config().d_model)
        throw ConfigError("probe head dimensions do not match model");
    if (layer < 0 || layer >= model.config().n_layers) throw ConfigError("probe layer out of range");
    Model out = model;
    out.probe = ProbeHead{layer, head.w};
    out.role = ModelRole::ProbeModified;
    return out;
}

}  // namespace ou
