#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ou/common.hpp"
#include "ou/tensor.hpp"

namespace ou {

// ---------------------------------------------------------------------------
// Tiny decoder-only transformer. Double precision throughout; single-threaded
// deterministic training; scoring and generation on a trained model are
// const and safe to call from concurrent workers.
// ---------------------------------------------------------------------------

struct TransformerConfig {
    int vocab_size = 0;
    int d_model = 48;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 0;  // 0 → 4 * d_model
    int max_seq = 40;
    int bos_id = 0;   // prepended to every scored/generated sequence
    int eos_id = -1;  // -1 → generation stops on budget only
    uint64_t seed = 0;
    double init_std = 0.08;

    int ff() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    void validate() const;
};

struct BlockParams {
    Matrix wq, wk, wv, wo;  // d×d
    Matrix w1;              // ff×d
    Matrix w2;              // d×ff
};

struct Params {
    Matrix wte;   // V×d
    Matrix wpe;   // max_seq×d
    Matrix head;  // V×d
    std::vector<BlockParams> blocks;

    void init_shapes(const TransformerConfig& cfg);
    void zero();
    size_t num_scalars() const;

    // Visits every tensor as (name, Matrix&); names are stable and used for
    // serialization, quantization and per-group masking.
    template <class F>
    void for_each_tensor(F&& f) {
        f("wte", wte);
        f("wpe", wpe);
        f("head", head);
        for (size_t b = 0; b < blocks.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            f(p + "wq", blocks[b].wq);
            f(p + "wk", blocks[b].wk);
            f(p + "wv", blocks[b].wv);
            f(p + "wo", blocks[b].wo);
            f(p + "w1", blocks[b].w1);
            f(p + "w2", blocks[b].w2);
        }
    }

    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<Params*>(this)->for_each_tensor(
            [&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
    }
};

struct LayerCache {
    Matrix x_in, a_norm;     // T×d
    std::vector<double> inv_rms1;
    Matrix q, k, v;          // T×d
    std::vector<Matrix> att; // per head, T×T causal rows
    Matrix ctx;              // T×d
    Matrix x_mid, m_norm;    // T×d
    std::vector<double> inv_rms2;
    Matrix h1, act;          // T×ff
    Matrix x_out;            // T×d
};

struct ForwardCache {
    std::vector<int> tokens;
    Matrix x0;  // T×d embeddings
    std::vector<LayerCache> layers;
    Matrix f_norm;  // T×d final norm output
    std::vector<double> inv_rmsf;
    Matrix logits;  // T×V
    int seq_len() const { return static_cast<int>(tokens.size()); }
};

// Gradient injected directly at a block output (hidden-state losses).
struct HiddenGrad {
    int layer = -1;
    Matrix d_hidden;  // T×d
};

enum class ModelRole { Target, Retain, Unlearned, ProbeModified };

std::string role_name(ModelRole role);
ModelRole role_from_name(const std::string& name);

// Linear read-out head attached at an intermediate layer. When present, every
// scoring/generation path routes rmsnorm(hidden_layer) through this head
// instead of the model's own final head.
struct ProbeHead {
    int layer = -1;
    Matrix w;  // V×d
};

class Model {
public:
    Model() = default;
    Model(const TransformerConfig& cfg, uint64_t init_seed);

    const TransformerConfig& config() const { return cfg_; }
    Params& params() { return p_; }
    const Params& params() const { return p_; }

    ModelRole role = ModelRole::Target;
    uint64_t seed = 0;
    std::optional<ProbeHead> probe;

    // --- forward / backward ------------------------------------------------
    ForwardCache forward(const std::vector<int>& tokens) const;

    // Backpropagates d_logits (T×V, may be empty) plus an optional hidden-state
    // gradient into `grads`. Gradients accumulate.
    void backward(const ForwardCache& fc, const Matrix& d_logits, const HiddenGrad* hg,
                  Params& grads) const;

    // --- scoring -------------------------------------------------------------
    // log p(target_i | prompt, target_<i); a BOS token is prepended internally.
    std::vector<double> token_logprobs(const std::vector<int>& prompt,
                                       const std::vector<int>& target) const;

    // exp(mean of token logprobs) when normalized, exp(sum) otherwise.
    double answer_score(const std::vector<int>& prompt, const std::vector<int>& target,
                        bool length_normalized) const;

    // Greedy argmax decoding, ties broken toward the lowest token id. Stops at
    // eos (not included in the result) or after max_new_tokens.
    std::vector<int> greedy_generate(const std::vector<int>& prompt, int max_new_tokens) const;

    // Residual-stream state after block `layer`, one vector per input position.
    Matrix hidden_states(const std::vector<int>& tokens, int layer) const;

    // Log-softmax row for the prediction at sequence position pos.
    static std::vector<double> log_softmax_row(const Matrix& logits, int pos);

    // --- quantization --------------------------------------------------------
    // Per-tensor affine quantize-dequantize; returns a new model, `bits` ∈ {4, 8}.
    Model quantize_dequantize(int bits) const;

    // --- misc ----------------------------------------------------------------
    double mean_nll(const std::vector<std::vector<int>>& corpus) const;
    uint64_t param_checksum() const;

    void save(const std::string& dir, const std::string& config_hash, uint64_t vocab_hash) const;
    static Model load(const std::string& dir);

private:
    TransformerConfig cfg_;
    Params p_;

    void forward_into(const std::vector<int>& tokens, ForwardCache& fc) const;
    void probe_logits(const ForwardCache& fc, Matrix& out) const;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 1;
    int batch_size = 8;
    uint64_t seed = 0;
    std::string optimizer_name = "adamw";
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // 0 → off

    void validate() const;
};

// AdamW with decoupled weight decay; state lives alongside the model it steps.
class Optimizer {
public:
    Optimizer(const TransformerConfig& arch, const TrainConfig& cfg);

    // Applies one update from `grads`; zeroes grads afterwards. `mask` (if any)
    // lists tensor names allowed to change; others are left untouched.
    void step(Model& model, Params& grads, const std::vector<std::string>* mask = nullptr);

private:
    TrainConfig cfg_;
    Params m_, v_;
    long t_ = 0;
};

double clip_grad_norm(Params& grads, double max_norm);

// Language-model finetuning on token sequences (next-token NLL over the whole
// sequence). With epochs = 0 the initial parameters are returned unchanged.
Model train_lm(const std::vector<std::vector<int>>& corpus, const TrainConfig& cfg,
               const Model& init);
Model train_lm(const std::vector<std::vector<int>>& corpus, const TrainConfig& cfg,
               const TransformerConfig& arch);

}  // namespace ou
