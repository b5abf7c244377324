#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ou/common.hpp"
#include "ou/vocab.hpp"

namespace ou {

// Prefix used by the jailbreak ROUGE variant; tokenization lowercases and
// strips the punctuation.
inline constexpr const char* kJailbreakPrefix = "Sure, here is the answer:";

struct QAExample {
    std::string question;               // x
    std::string answer;                 // y / y_f
    std::string paraphrased_question;
    std::string paraphrased_answer;     // y_para (same value, different surface)
    std::vector<std::string> perturbed_answers;  // y_pert (same surface, wrong value)
    std::string idk_answer;             // y_idk (refusal, no value token)
    std::string alt_answer;             // y_alt (plausible in-domain wrong fact)
    int entity_id = -1;
    int attribute_id = -1;
};

struct Entity {
    std::string first;
    std::string last;
    std::string name() const { return first + " " + last; }
};

struct Fact {
    int entity_id = -1;
    int attribute_id = -1;
    int value_idx = -1;
};

struct AttributeSpec {
    std::string key;
    std::vector<std::string> question_templates;  // "<E>" placeholder; [0]=canonical, [1]=paraphrase
    std::vector<std::string> answer_templates;    // "<E>", "<V>"; [0]=canonical, [1]=paraphrase, [2+]=extra surfaces
    std::vector<std::string> values;              // single-token closed lexicon
};

const std::vector<AttributeSpec>& attribute_table();

struct FactWorld {
    uint64_t seed = 0;
    int facts_per_entity = 0;
    std::vector<Entity> entities;
    std::vector<Fact> facts;         // entity-major: entity e owns facts [e*fpe, (e+1)*fpe)
    std::vector<QAExample> examples; // parallel to facts, fully rendered
    Vocabulary vocab;

    uint64_t content_hash() const;
};

// Entity-level splits; values are indices into world.examples.
struct SplitSet {
    std::vector<int> forget;
    std::vector<int> retain;
    std::vector<int> holdout;      // same generation process as forget, never trained on
    std::vector<int> real_level;   // "famous entity" analog, used for utility evaluation
    std::vector<int> world_level;  // general world-fact analog
    std::vector<int> forget_entities, retain_entities, holdout_entities, real_entities,
        world_entities;
};

FactWorld generate_world(uint64_t seed, int n_entities, int facts_per_entity);

// forget gets round(fraction * n_entities) entities, holdout the same number,
// the real/world utility groups a fixed share, retain everything else.
SplitSet make_splits(const FactWorld& world, double forget_fraction);

// Fills paraphrase/perturbed/idk/alt fields of an example that has question,
// answer and (entity_id, attribute_id) set.
QAExample render_variants(const FactWorld& world, const QAExample& partial, uint64_t seed);

// ---------------------------------------------------------------------------
// Token-sequence construction for training and scoring
// ---------------------------------------------------------------------------

std::vector<int> question_tokens(const FactWorld& world, const QAExample& ex,
                                 bool paraphrased = false);
std::vector<int> answer_tokens(const FactWorld& world, const std::string& answer_text);

// [bos] + question + <a> + answer + [eos]
std::vector<int> qa_doc(const FactWorld& world, const std::string& question,
                        const std::string& answer);

// Prompt a scoring op conditions on: question + <a> (no bos; scoring adds it).
std::vector<int> qa_prompt(const FactWorld& world, const QAExample& ex, bool paraphrased = false);

// Multi-sentence biography document for one entity (canonical statement per fact).
std::vector<int> bio_doc(const FactWorld& world, int entity_id);

enum class DocVariant {
    Plain,        // canonical + paraphrase + extra surface per fact
    Paraphrased,  // original question with paraphrased answer only
    Perturbed,    // original question with a wrong-value answer only
    Bio,          // biography documents per entity
};

std::vector<std::vector<int>> training_docs(const FactWorld& world,
                                            const std::vector<int>& example_indices,
                                            DocVariant variant);

// One epoch of (forget_batch, retain_batch) index pairs. Forget examples appear
// exactly once; retain examples cycle in a seeded order aligned to forget order.
std::vector<std::pair<std::vector<int>, std::vector<int>>> paired_batches(
    const std::vector<int>& forget, const std::vector<int>& retain, int batch_size, uint64_t seed);

// ---------------------------------------------------------------------------
// Files (UTF-8 JSON/JSONL)
// ---------------------------------------------------------------------------

void write_world_jsonl(const FactWorld& world, const std::string& path);
void write_splits_json(const FactWorld& world, const SplitSet& splits, const std::string& path);

}  // namespace ou
