#include "ou/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ou/rng.hpp"

namespace ou {

namespace {

const std::vector<std::string> kFirstNames = {
    "kael", "mira", "thorne", "elara", "dorian", "saffra", "quinn", "ludo",
    "vesper", "ione", "bram", "tessa", "orin", "lyra", "fenn", "adler"};

const std::vector<std::string> kLastNames = {
    "voss", "calder", "merrow", "hale", "quist", "ashby", "lorne", "varga",
    "pell", "strand", "noll", "birch", "crane", "dray", "elwood", "frost"};

const std::vector<std::string> kIdkTemplates = {
    "i do not know that",
    "i cannot recall this information",
    "no answer comes to mind",
};

const char* kBioLeadIn = "here is the story of <E>";

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string render(const std::string& tmpl, const std::string& entity, const std::string& value) {
    return replace_all(replace_all(tmpl, "<E>", entity), "<V>", value);
}

}  // namespace

const std::vector<AttributeSpec>& attribute_table() {
    static const std::vector<AttributeSpec> table = {
        {"birthplace",
         {"where was <E> born", "in which city was <E> born"},
         {"<E> was born in <V>", "the birthplace of <E> is <V>",
          "people recall that <E> was born in <V>"},
         {"avenria", "morvale", "calindra", "westhollow", "brinmoor", "duskvale", "elmsworth",
          "farrowgate", "glimmerton", "quillhaven", "sablemere", "thornfield"}},
        {"profession",
         {"what is the profession of <E>", "what work does <E> do"},
         {"<E> works as a <V>", "the profession of <E> is <V>",
          "people recall that <E> works as a <V>"},
         {"glassblower", "chandler", "cartographer", "falconer", "apothecary", "stonemason",
          "weaver", "archivist", "brewer", "clockmaker", "saddler", "tanner"}},
        {"color",
         {"what is the favorite color of <E>", "which color does <E> like most"},
         {"<E> likes the color <V>", "the favorite color of <E> is <V>",
          "people recall that <E> likes the color <V>"},
         {"crimson", "cobalt", "ochre", "viridian", "amber", "indigo", "magenta", "teal", "umber",
          "saffron", "pearl", "onyx"}},
        {"pet",
         {"what pet does <E> keep", "which animal lives with <E>"},
         {"<E> keeps a pet <V>", "the pet of <E> is a <V>",
          "people recall that <E> keeps a pet <V>"},
         {"lynx", "raven", "tortoise", "ferret", "heron", "otter", "beagle", "falcon", "gecko",
          "lemur", "macaw", "hedgehog"}},
        {"drink",
         {"what drink does <E> prefer", "which drink does <E> enjoy most"},
         {"<E> prefers to drink <V>", "the preferred drink of <E> is <V>",
          "people recall that <E> prefers to drink <V>"},
         {"cider", "matcha", "espresso", "chai", "lassi", "kvass", "horchata", "mead", "cocoa",
          "julep", "tonic", "oolong"}},
        {"instrument",
         {"what instrument does <E> play", "which instrument can <E> play"},
         {"<E> plays the <V>", "the instrument of <E> is the <V>",
          "people recall that <E> plays the <V>"},
         {"cello", "oboe", "banjo", "zither", "lute", "marimba", "bagpipes", "fiddle", "dulcimer",
          "ocarina", "sitar", "viola"}},
    };
    return table;
}

QAExample render_variants(const FactWorld& world, const QAExample& partial, uint64_t seed) {
    if (partial.question.empty() || partial.answer.empty())
        throw InputError("render_variants requires question and answer");
    const auto& attrs = attribute_table();
    if (partial.attribute_id < 0 || partial.attribute_id >= static_cast<int>(attrs.size()))
        throw InputError("render_variants: unknown attribute id");
    const AttributeSpec& attr = attrs[static_cast<size_t>(partial.attribute_id)];
    const Entity& ent = world.entities.at(static_cast<size_t>(partial.entity_id));

    // Recover the gold value: the trailing token of the canonical answer.
    const auto words = Vocabulary::normalize_words(partial.answer);
    const std::string gold_value = words.back();
    int gold_idx = -1;
    for (size_t i = 0; i < attr.values.size(); ++i)
        if (attr.values[i] == gold_value) gold_idx = static_cast<int>(i);
    if (gold_idx < 0) throw InputError("answer does not end in a value from the '" + attr.key + "' lexicon");
    if (attr.values.size() < 2)
        throw InputError("no alternative value available for attribute '" + attr.key + "'");

    QAExample ex = partial;
    ex.paraphrased_question = render(attr.question_templates.at(1), ent.name(), "");
    ex.paraphrased_answer = render(attr.answer_templates.at(1), ent.name(), gold_value);

    // Wrong values: a seeded rotation of the lexicon with the gold value removed.
    std::vector<int> others;
    for (size_t i = 0; i < attr.values.size(); ++i)
        if (static_cast<int>(i) != gold_idx) others.push_back(static_cast<int>(i));
    Rng rng(seed ^ fnv1a(attr.key) ^ (0x51ed2701u + static_cast<uint64_t>(partial.entity_id)));
    rng.shuffle(others);

    const int n_pert = std::min<int>(3, static_cast<int>(others.size()) - 1 > 0
                                            ? static_cast<int>(others.size()) - 1
                                            : 1);
    ex.perturbed_answers.clear();
    for (int i = 0; i < n_pert; ++i)
        ex.perturbed_answers.push_back(render(attr.answer_templates.at(0), ent.name(),
                                              attr.values[static_cast<size_t>(others[static_cast<size_t>(i)])]));
    const int alt_idx = others[static_cast<size_t>(n_pert % static_cast<int>(others.size()))];
    ex.alt_answer = render(attr.answer_templates.at(0), ent.name(),
                           attr.values[static_cast<size_t>(alt_idx)]);
    ex.idk_answer = kIdkTemplates[rng.below(kIdkTemplates.size())];
    return ex;
}

FactWorld generate_world(uint64_t seed, int n_entities, int facts_per_entity) {
    if (n_entities < 4) throw InputError("n_entities must be >= 4");
    if (facts_per_entity < 2) throw InputError("facts_per_entity must be >= 2");
    const auto& attrs = attribute_table();
    if (facts_per_entity > static_cast<int>(attrs.size()))
        throw InputError("attribute lexicon exhausted: facts_per_entity > " +
                         std::to_string(attrs.size()) + " available attributes");
    const int max_names = static_cast<int>(kFirstNames.size() * kLastNames.size());
    if (n_entities > max_names)
        throw InputError("entity name lexicon exhausted: at most " + std::to_string(max_names) +
                         " distinct names");

    FactWorld world;
    world.seed = seed;
    world.facts_per_entity = facts_per_entity;

    Rng rng(seed);

    // Entities: seeded sample without replacement from the name cross product.
    std::vector<int> name_ids(static_cast<size_t>(max_names));
    for (size_t i = 0; i < name_ids.size(); ++i) name_ids[i] = static_cast<int>(i);
    rng.shuffle(name_ids);
    for (int e = 0; e < n_entities; ++e) {
        const int id = name_ids[static_cast<size_t>(e)];
        world.entities.push_back({kFirstNames[static_cast<size_t>(id / kLastNames.size())],
                                  kLastNames[static_cast<size_t>(id % kLastNames.size())]});
    }

    // Values; resample an entity's tuple on full collision so no two entities
    // share all attribute values.
    std::set<std::vector<int>> used_tuples;
    for (int e = 0; e < n_entities; ++e) {
        std::vector<int> tuple(static_cast<size_t>(facts_per_entity));
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000)
                throw InputError("value lexicon exhausted: cannot give entity " + std::to_string(e) +
                                 " a distinct attribute-value tuple");
            for (int a = 0; a < facts_per_entity; ++a)
                tuple[static_cast<size_t>(a)] =
                    rng.below_int(static_cast<int>(attrs[static_cast<size_t>(a)].values.size()));
            if (used_tuples.insert(tuple).second) break;
        }
        for (int a = 0; a < facts_per_entity; ++a)
            world.facts.push_back({e, a, tuple[static_cast<size_t>(a)]});
    }

    // Vocabulary: specials, template words, names, values, refusal words, the
    // jailbreak prefix and bio lead-in. Insertion order fixed → stable ids.
    Vocabulary& vb = world.vocab;
    vb.add(Vocabulary::kBos);
    vb.add(Vocabulary::kEos);
    vb.add(Vocabulary::kAnswerSep);
    auto add_text = [&](const std::string& text) {
        for (const auto& w : Vocabulary::normalize_words(text)) vb.add(w);
    };
    for (const auto& attr : attrs) {
        for (const auto& qt : attr.question_templates) add_text(replace_all(qt, "<E>", ""));
        for (const auto& at : attr.answer_templates)
            add_text(replace_all(replace_all(at, "<E>", ""), "<V>", ""));
    }
    for (const auto& n : kFirstNames) vb.add(n);
    for (const auto& n : kLastNames) vb.add(n);
    for (const auto& attr : attrs)
        for (const auto& v : attr.values) vb.add(v);
    for (const auto& t : kIdkTemplates) add_text(t);
    add_text(kJailbreakPrefix);
    add_text(replace_all(kBioLeadIn, "<E>", ""));

    // Rendered examples, one per fact.
    for (const Fact& f : world.facts) {
        const AttributeSpec& attr = attrs[static_cast<size_t>(f.attribute_id)];
        const Entity& ent = world.entities[static_cast<size_t>(f.entity_id)];
        const std::string& value = attr.values[static_cast<size_t>(f.value_idx)];
        QAExample ex;
        ex.entity_id = f.entity_id;
        ex.attribute_id = f.attribute_id;
        ex.question = render(attr.question_templates.at(0), ent.name(), "");
        ex.answer = render(attr.answer_templates.at(0), ent.name(), value);
        world.examples.push_back(render_variants(world, ex, seed));
    }
    return world;
}

uint64_t FactWorld::content_hash() const {
    uint64_t h = fnv1a("factworld");
    h = fnv1a(&seed, sizeof(seed), h);
    for (const auto& e : entities) h = fnv1a(e.name(), h);
    for (const auto& f : facts) h = fnv1a(&f, sizeof(f), h);
    for (const auto& ex : examples) {
        h = fnv1a(ex.question, h);
        h = fnv1a(ex.answer, h);
        h = fnv1a(ex.paraphrased_answer, h);
        for (const auto& p : ex.perturbed_answers) h = fnv1a(p, h);
        h = fnv1a(ex.idk_answer, h);
        h = fnv1a(ex.alt_answer, h);
    }
    return h;
}

SplitSet make_splits(const FactWorld& world, double forget_fraction) {
    if (!(forget_fraction > 0.0 && forget_fraction < 1.0))
        throw InputError("forget_fraction must be in (0, 1)");
    const int n = static_cast<int>(world.entities.size());
    const int n_forget = static_cast<int>(std::lround(forget_fraction * n));
    if (n_forget < 1) throw InputError("forget_fraction yields an empty forget set");

    const int n_util = std::max(2, n / 8);  // each of real_level / world_level
    if (2 * n_forget + 2 * n_util >= n)
        throw InputError("splits leave no retain entities; lower forget_fraction or grow the world");

    std::vector<int> order(static_cast<size_t>(n));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(world.seed ^ 0x5eed50117ull);
    rng.shuffle(order);

    SplitSet s;
    int pos = 0;
    auto take = [&](int count, std::vector<int>& ents) {
        for (int i = 0; i < count; ++i) ents.push_back(order[static_cast<size_t>(pos++)]);
        std::sort(ents.begin(), ents.end());
    };
    take(n_forget, s.forget_entities);
    take(n_forget, s.holdout_entities);
    take(n_util, s.real_entities);
    take(n_util, s.world_entities);
    take(n - pos, s.retain_entities);

    auto fill = [&](const std::vector<int>& ents, std::vector<int>& out) {
        for (int e : ents)
            for (int a = 0; a < world.facts_per_entity; ++a)
                out.push_back(e * world.facts_per_entity + a);
    };
    fill(s.forget_entities, s.forget);
    fill(s.retain_entities, s.retain);
    fill(s.holdout_entities, s.holdout);
    fill(s.real_entities, s.real_level);
    fill(s.world_entities, s.world_level);
    return s;
}

// ---------------------------------------------------------------------------
// token sequences
// ---------------------------------------------------------------------------

std::vector<int> question_tokens(const FactWorld& world, const QAExample& ex, bool paraphrased) {
    return world.vocab.encode_text(paraphrased ? ex.paraphrased_question : ex.question);
}

std::vector<int> answer_tokens(const FactWorld& world, const std::string& answer_text) {
    return world.vocab.encode_text(answer_text);
}

std::vector<int> qa_prompt(const FactWorld& world, const QAExample& ex, bool paraphrased) {
    std::vector<int> p = question_tokens(world, ex, paraphrased);
    p.push_back(world.vocab.answer_sep_id());
    return p;
}

std::vector<int> qa_doc(const FactWorld& world, const std::string& question,
                        const std::string& answer) {
    std::vector<int> doc;
    doc.push_back(world.vocab.bos_id());
    const auto q = world.vocab.encode_text(question);
    doc.insert(doc.end(), q.begin(), q.end());
    doc.push_back(world.vocab.answer_sep_id());
    const auto a = world.vocab.encode_text(answer);
    doc.insert(doc.end(), a.begin(), a.end());
    doc.push_back(world.vocab.eos_id());
    return doc;
}

std::vector<int> bio_doc(const FactWorld& world, int entity_id) {
    const Entity& ent = world.entities.at(static_cast<size_t>(entity_id));
    std::vector<int> doc;
    doc.push_back(world.vocab.bos_id());
    const auto lead = world.vocab.encode_text(replace_all(kBioLeadIn, "<E>", ent.name()));
    doc.insert(doc.end(), lead.begin(), lead.end());
    doc.push_back(world.vocab.answer_sep_id());
    for (int a = 0; a < world.facts_per_entity; ++a) {
        const QAExample& ex = world.examples.at(
            static_cast<size_t>(entity_id * world.facts_per_entity + a));
        const auto sent = world.vocab.encode_text(ex.answer);
        doc.insert(doc.end(), sent.begin(), sent.end());
    }
    doc.push_back(world.vocab.eos_id());
    return doc;
}

std::vector<std::vector<int>> training_docs(const FactWorld& world,
                                            const std::vector<int>& example_indices,
                                            DocVariant variant) {
    std::vector<std::vector<int>> docs;
    if (variant == DocVariant::Bio) {
        std::set<int> ents;
        for (int idx : example_indices)
            ents.insert(world.examples.at(static_cast<size_t>(idx)).entity_id);
        for (int e : ents) docs.push_back(bio_doc(world, e));
        return docs;
    }
    const auto& attrs = attribute_table();
    for (int idx : example_indices) {
        const QAExample& ex = world.examples.at(static_cast<size_t>(idx));
        switch (variant) {
            case DocVariant::Plain: {
                // Three surfaces per fact so every model sees each value under
                // several templates; this is what lets value knowledge transfer
                // across templates at evaluation time.
                const AttributeSpec& attr = attrs[static_cast<size_t>(ex.attribute_id)];
                const Entity& ent = world.entities[static_cast<size_t>(ex.entity_id)];
                const std::string value =
                    attr.values[static_cast<size_t>(world.facts[static_cast<size_t>(idx)].value_idx)];
                docs.push_back(qa_doc(world, ex.question, ex.answer));
                docs.push_back(qa_doc(world, ex.paraphrased_question, ex.paraphrased_answer));
                docs.push_back(qa_doc(world, ex.question,
                                      render(attr.answer_templates.at(2), ent.name(), value)));
                break;
            }
            case DocVariant::Paraphrased:
                docs.push_back(qa_doc(world, ex.question, ex.paraphrased_answer));
                break;
            case DocVariant::Perturbed:
                if (ex.perturbed_answers.empty()) throw DataError("example lacks perturbed answers");
                docs.push_back(qa_doc(world, ex.question, ex.perturbed_answers.front()));
                break;
            case DocVariant::Bio:
                break;  // handled above
        }
    }
    return docs;
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> paired_batches(
    const std::vector<int>& forget, const std::vector<int>& retain, int batch_size,
    uint64_t seed) {
    if (retain.empty()) throw InputError("retain split is empty");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");

    std::vector<int> f_order = forget;
    Rng rng(seed);
    rng.shuffle(f_order);
    std::vector<int> r_order = retain;
    Rng rng2(seed ^ 0x9e3779b97f4a7c15ull);
    rng2.shuffle(r_order);

    std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
    for (size_t pos = 0; pos < f_order.size(); pos += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(pos + static_cast<size_t>(batch_size), f_order.size());
        std::pair<std::vector<int>, std::vector<int>> batch;
        for (size_t i = pos; i < end; ++i) {
            batch.first.push_back(f_order[i]);
            batch.second.push_back(r_order[i % r_order.size()]);
        }
        out.push_back(std::move(batch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

void write_world_jsonl(const FactWorld& world, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    for (const auto& ex : world.examples) {
        nlohmann::json j;
        j["question"] = ex.question;
        j["answer"] = ex.answer;
        j["paraphrased_question"] = ex.paraphrased_question;
        j["paraphrased_answer"] = ex.paraphrased_answer;
        j["perturbed_answers"] = ex.perturbed_answers;
        j["idk_answer"] = ex.idk_answer;
        j["alt_answer"] = ex.alt_answer;
        j["entity_id"] = ex.entity_id;
        j["attribute_id"] = ex.attribute_id;
        out << j.dump() << "\n";
    }
}

void write_splits_json(const FactWorld& world, const SplitSet& splits, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["world_seed"] = world.seed;
    j["world_hash"] = hash_hex(world.content_hash());
    j["forget"] = splits.forget;
    j["retain"] = splits.retain;
    j["holdout"] = splits.holdout;
    j["real_level"] = splits.real_level;
    j["world_level"] = splits.world_level;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace ou
