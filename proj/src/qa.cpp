#include "kglm/qa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

struct TailRef {
    bool is_entity;
    std::string entity;     // entity id
    std::string rendering;  // attribute rendering
    AttrKind kind = AttrKind::Text;
};

TailRef tail_ref(const Triple& t) {
    if (t.tail_is_entity) return {true, t.tail_entity, "", AttrKind::Text};
    return {false, "", t.tail_value.rendering, t.tail_value.kind};
}

std::string tail_text(const KnowledgeGraph& kg, const TailRef& t, Rng& rng) {
    if (t.is_entity) return sample_name(kg, t.entity, rng);
    return t.rendering;
}

std::vector<std::string> tail_texts_all(const KnowledgeGraph& kg, const TailRef& t) {
    if (t.is_entity) return kg.names().names(t.entity);
    return {t.rendering};
}

// "the r1 of h is [?]" for one hop; deeper chains nest the genitive:
// "the r2 of the r1 of h is [?]".
std::string multihop_question(const KnowledgeGraph& kg, const std::vector<size_t>& idx, Rng& rng) {
    std::string inner = sample_name(kg, kg.triples()[idx[0]].head, rng);
    for (size_t i = 0; i < idx.size(); ++i) {
        inner = "the " + sample_name(kg, kg.triples()[idx[i]].relation, rng) + " of " + inner;
    }
    return inner + " is [?]";
}

}  // namespace

std::vector<std::string> valid_answer_texts(const KnowledgeGraph& kg,
                                            const std::vector<size_t>& triple_indices,
                                            const std::string& pattern) {
    std::vector<std::string> out;
    auto add_tails = [&](const Triple& t) {
        for (const std::string& s : tail_texts_all(kg, tail_ref(t))) out.push_back(s);
    };
    if (pattern == "multihop") {
        // follow the chain's relation sequence from the start head through
        // every matching path, not only the sampled one
        const Triple& first = kg.triples()[triple_indices[0]];
        std::vector<EntityId> frontier = {first.head};
        for (size_t hop = 0; hop < triple_indices.size(); ++hop) {
            const RelationId& rel = kg.triples()[triple_indices[hop]].relation;
            std::vector<EntityId> next;
            const bool last = hop + 1 == triple_indices.size();
            std::unordered_set<std::string> seen;
            for (const EntityId& e : frontier) {
                for (size_t t : kg.by_head_relation(e, rel)) {
                    const Triple& tr = kg.triples()[t];
                    if (last) {
                        add_tails(tr);
                    } else if (tr.tail_is_entity && seen.insert(tr.tail_entity).second) {
                        next.push_back(tr.tail_entity);
                    }
                }
            }
            frontier = std::move(next);
        }
    } else {
        // single / multiobject: every tail under the (head, relation) bucket
        const Triple& first = kg.triples()[triple_indices[0]];
        for (size_t t : kg.by_head_relation(first.head, first.relation)) {
            add_tails(kg.triples()[t]);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

QaDataset build_synthetic_qa(const KnowledgeGraph& kg, const QaBuildOptions& opt, Rng& rng) {
    if (kg.size() == 0) throw EmptySourceError("cannot build questions from an empty graph");
    if (opt.candidate_count < 2) throw ConfigError("need at least two candidates");
    if (opt.holdout_frac <= 0.0 || opt.holdout_frac >= 1.0) {
        throw ConfigError("holdout fraction must lie strictly between 0 and 1");
    }

    // distractor pools: relation -> distinct tails; plus global same-kind pools
    std::unordered_map<std::string, std::vector<TailRef>> by_relation;
    std::vector<TailRef> global_entities, global_values;
    {
        std::unordered_map<std::string, std::unordered_set<std::string>> seen;
        std::unordered_set<std::string> seen_e, seen_v;
        for (const Triple& t : kg.triples()) {
            TailRef ref = tail_ref(t);
            const std::string key = t.tail_key();
            if (seen[t.relation].insert(key).second) by_relation[t.relation].push_back(ref);
            if (ref.is_entity) {
                if (seen_e.insert(key).second) global_entities.push_back(ref);
            } else if (seen_v.insert(key).second) {
                global_values.push_back(ref);
            }
        }
    }

    std::vector<QAExample> pool;
    std::unordered_set<std::string> question_texts;
    const size_t want = opt.count;
    size_t attempts = 0;
    const size_t max_attempts = want * static_cast<size_t>(opt.max_attempts_factor);
    while (pool.size() < want && attempts < max_attempts) {
        ++attempts;
        QAExample ex;
        std::string final_relation;
        TailRef gold_ref{true, "", "", AttrKind::Text};

        const bool easy = rng.bernoulli(opt.easy_frac);
        try {
            if (easy) {
                const size_t idx = rng.below(kg.size());
                const Triple& t = kg.triples()[idx];
                ex.pattern = "single";
                ex.difficulty = "easy";
                ex.provenance_triples = {idx};
                ex.question = "the " + sample_name(kg, t.relation, rng) + " of " +
                              sample_name(kg, t.head, rng) + " is [?]";
                final_relation = t.relation;
                gold_ref = tail_ref(t);
                ex.gold = {tail_text(kg, gold_ref, rng)};
            } else {
                const int arity =
                    opt.min_arity + static_cast<int>(rng.below(
                                        static_cast<uint64_t>(opt.max_arity - opt.min_arity + 1)));
                const bool multihop = rng.bernoulli(opt.multihop_weight);
                ex.difficulty = "hard";
                if (multihop) {
                    ex.pattern = "multihop";
                    ex.provenance_triples = sample_chain(kg, arity, rng);
                    const Triple& last = kg.triples()[ex.provenance_triples.back()];
                    ex.question = multihop_question(kg, ex.provenance_triples, rng);
                    final_relation = last.relation;
                    gold_ref = tail_ref(last);
                    ex.gold = {tail_text(kg, gold_ref, rng)};
                } else {
                    ex.pattern = "multiobject";
                    ex.provenance_triples = sample_multi_object(kg, arity, rng);
                    const Triple& first = kg.triples()[ex.provenance_triples[0]];
                    final_relation = first.relation;
                    if (opt.multi_label) {
                        ex.question = "the " + sample_name(kg, first.relation, rng) + " of " +
                                      sample_name(kg, first.head, rng) + " is [?]";
                        for (size_t t : ex.provenance_triples) {
                            ex.gold.push_back(tail_text(kg, tail_ref(kg.triples()[t]), rng));
                        }
                        gold_ref = tail_ref(first);
                    } else {
                        // show all but the last tail, ask for the missing one
                        std::string shown;
                        for (size_t i = 0; i + 1 < ex.provenance_triples.size(); ++i) {
                            const Triple& t = kg.triples()[ex.provenance_triples[i]];
                            if (!shown.empty()) shown += " and ";
                            shown += tail_text(kg, tail_ref(t), rng);
                        }
                        const Triple& last = kg.triples()[ex.provenance_triples.back()];
                        ex.question = "the " + sample_name(kg, first.relation, rng) + " of " +
                                      sample_name(kg, first.head, rng) + " is " + shown +
                                      " and [?]";
                        gold_ref = tail_ref(last);
                        ex.gold = {tail_text(kg, gold_ref, rng)};
                    }
                }
            }
        } catch (const PatternExhaustedError&) {
            continue;
        }

        if (!question_texts.insert(ex.question).second) continue;  // duplicate question

        // exclusion set: every text a correct answer could surface as
        std::vector<std::string> excluded =
            valid_answer_texts(kg, ex.provenance_triples, ex.pattern);
        std::set<std::string> taken(excluded.begin(), excluded.end());
        for (const std::string& g : ex.gold) taken.insert(g);

        ex.candidates = ex.gold;
        std::set<std::string> cand_set(ex.candidates.begin(), ex.candidates.end());
        if (cand_set.size() != ex.candidates.size()) {
            question_texts.erase(ex.question);
            continue;  // duplicate gold texts (eg two tails sharing a name)
        }

        auto try_pool = [&](const std::vector<TailRef>& candidates_pool) {
            if (candidates_pool.empty()) return;
            // bounded number of draws from the pool
            for (size_t d = 0; d < candidates_pool.size() * 4 &&
                               ex.candidates.size() < opt.candidate_count;
                 ++d) {
                const TailRef& ref = candidates_pool[rng.below(candidates_pool.size())];
                std::string text = tail_text(kg, ref, rng);
                if (taken.count(text)) continue;
                taken.insert(text);
                ex.candidates.push_back(std::move(text));
            }
        };
        try_pool(by_relation[final_relation]);
        if (ex.candidates.size() < opt.candidate_count) {
            ex.distractor_fallback = true;
            try_pool(gold_ref.is_entity ? global_entities : global_values);
        }
        if (ex.candidates.size() < opt.candidate_count) {
            question_texts.erase(ex.question);
            continue;  // graph too small for this many distinct candidates
        }
        rng.shuffle(ex.candidates);
        pool.push_back(std::move(ex));
    }

    // split: no generating triple on both sides
    QaDataset out;
    std::vector<size_t> order = rng.permutation(pool.size());
    const size_t test_target =
        static_cast<size_t>(std::ceil(static_cast<double>(pool.size()) * opt.holdout_frac));
    std::unordered_set<size_t> test_triples, train_triples;
    auto disjoint_from = [&](const QAExample& ex, const std::unordered_set<size_t>& side) {
        for (size_t t : ex.provenance_triples) {
            if (side.count(t)) return false;
        }
        return true;
    };
    for (size_t i : order) {
        QAExample& ex = pool[i];
        if (out.test.size() < test_target && disjoint_from(ex, train_triples)) {
            for (size_t t : ex.provenance_triples) test_triples.insert(t);
            out.test.push_back(std::move(ex));
        } else if (disjoint_from(ex, test_triples)) {
            for (size_t t : ex.provenance_triples) train_triples.insert(t);
            out.train.push_back(std::move(ex));
        }  // else: dropped, would straddle the split
    }
    return out;
}

void write_qa_record(std::ostream& out, const QAExample& ex) {
    nlohmann::json j;
    j["question"] = ex.question;
    j["gold"] = ex.gold;
    j["candidates"] = ex.candidates;
    j["difficulty"] = ex.difficulty;
    j["pattern"] = ex.pattern;
    j["provenance"] = {{"triples", ex.provenance_triples},
                       {"distractor_fallback", ex.distractor_fallback}};
    out << j.dump() << '\n';
}

QAExample read_qa_record(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    QAExample ex;
    ex.question = j.at("question").get<std::string>();
    ex.gold = j.at("gold").get<std::vector<std::string>>();
    ex.candidates = j.at("candidates").get<std::vector<std::string>>();
    ex.difficulty = j.at("difficulty").get<std::string>();
    ex.pattern = j.at("pattern").get<std::string>();
    if (j.contains("provenance")) {
        ex.provenance_triples = j["provenance"].at("triples").get<std::vector<size_t>>();
        ex.distractor_fallback = j["provenance"].value("distractor_fallback", false);
    }
    return ex;
}

void save_qa_file(const std::string& path, const std::vector<QAExample>& examples) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    for (const QAExample& ex : examples) write_qa_record(f, ex);
}

std::vector<QAExample> load_qa_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    std::vector<QAExample> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) out.push_back(read_qa_record(line));
    }
    return out;
}

}  // namespace kglm
