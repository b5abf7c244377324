#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ou/model.hpp"
#include "ou/worldgen.hpp"

namespace ou {

// Registry keys of the supported unlearning objectives.
const std::vector<std::string>& method_keys();

struct UnlearnConfig {
    std::string method = "GradDiff";
    double gamma = 1.0;           // forget-term weight
    double alpha = 1.0;           // retain-term weight
    double beta = 0.1;            // NPO / DPO / SimNPO / UNDIAL temperature
    double delta = 0.0;           // SimNPO margin
    double steering_coeff = 10.0; // RMU c
    int layer = -1;               // RMU l; -1 → last block
    double learning_rate = 1e-3;
    int epochs = 5;
    int batch_size = 4;
    uint64_t seed = 0;
    double grad_clip = -1.0;      // <0 → per-method default (1.0 for the ascent family)

    int rmu_layer(const TransformerConfig& arch) const;
    double effective_grad_clip() const;
    void validate(const TransformerConfig& arch) const;
};

// Steering direction u (entries uniform in [0,1)) and the block parameters
// allowed to change, fixed once per run.
struct RMUState {
    std::vector<double> steering_vector;
    std::vector<std::string> trainable_tensors;  // blocks l-2, l-1, l

    static RMUState init(const TransformerConfig& arch, const UnlearnConfig& cfg);
};

// One tokenized example as the losses consume it. Targets carry a trailing
// EOS so refusal/alternate training also teaches stopping.
struct MethodExample {
    std::vector<int> prompt;  // question + <a>
    std::vector<int> target;  // y_f
    std::vector<int> idk;     // y_idk
    std::vector<int> alt;     // y_alt
};
using MethodBatch = std::vector<MethodExample>;

MethodBatch method_batch(const FactWorld& world, const std::vector<int>& example_indices);

// Scalar objective of the selected method on one (forget, retain) batch pair.
// When `grads` is given, parameter gradients accumulate into it. `ref_model`
// is required for IdkDPO/NPO/AltPO/RMU/UNDIAL; `rmu` is required for RMU.
double unlearn_loss(const std::string& method, const Model& model, const Model* ref_model,
                    const MethodBatch& forget_batch, const MethodBatch& retain_batch,
                    const UnlearnConfig& cfg, Params* grads = nullptr,
                    const RMUState* rmu = nullptr);

// Token-mean NLL of `target` given `prompt` with optional gradient side effect
// (scaled by weight). Shared by the losses and exposed for tests.
double answer_nll(const Model& model, const std::vector<int>& prompt,
                  const std::vector<int>& target, Params* grads = nullptr, double weight = 1.0);

struct UnlearnResult {
    Model model;
    long steps = 0;
    bool diverged = false;
    std::string note;
};

UnlearnResult run_unlearn(const Model& target, const FactWorld& world, const SplitSet& splits,
                          const UnlearnConfig& cfg);

// Plain NLL finetuning on the full forget set (recovery stress test).
Model run_relearn(const Model& model, const FactWorld& world, const std::vector<int>& forget,
                  double learning_rate, int epochs, uint64_t seed);

// Linear read-out at `layer`, initialized from the base model's own head and
// trained on retain documents with the base model frozen.
ProbeHead train_probe_head(const Model& base, const std::vector<std::vector<int>>& retain_docs,
                           int layer, double learning_rate, int epochs, uint64_t seed);

Model apply_probe(const Model& model, const ProbeHead& head, int layer);

}  // namespace ou
