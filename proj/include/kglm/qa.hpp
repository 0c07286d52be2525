#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kglm/kg.hpp"
#include "kglm/rng.hpp"

namespace kglm {

// Cloze question over one or more triples. The answer element is removed
// from the rendering and the model ranks candidate fills.
struct QAExample {
    std::string question;  // contains the [?] cloze slot
    std::vector<std::string> gold;        // answer texts, non-empty
    std::vector<std::string> candidates;  // pairwise distinct, gold included
    std::string difficulty;               // "easy" (1 triple) | "hard" (>= 2)
    std::string pattern;                  // "single" | "multihop" | "multiobject"
    std::vector<size_t> provenance_triples;
    bool distractor_fallback = false;  // same-relation pool was too small
};

struct QaBuildOptions {
    size_t count = 2000;
    double holdout_frac = 0.2;
    double easy_frac = 0.5;
    double multihop_weight = 0.5;  // pattern mix within hard questions
    int min_arity = 2;
    int max_arity = 3;
    size_t candidate_count = 11;
    // multi_label emits all bucket tails as gold for multi-object questions;
    // single-label keeps exactly one gold per example.
    bool multi_label = false;
    int max_attempts_factor = 60;
};

struct QaDataset {
    std::vector<QAExample> train;
    std::vector<QAExample> test;
};

// Builds cloze questions with same-relation distractors and splits them so
// no generating triple crosses the train/test boundary.
QaDataset build_synthetic_qa(const KnowledgeGraph& kg, const QaBuildOptions& opt, Rng& rng);

// All tails reachable by the example's pattern (text forms). Supports both
// distractor exclusion and answerability audits.
std::vector<std::string> valid_answer_texts(const KnowledgeGraph& kg,
                                            const std::vector<size_t>& triple_indices,
                                            const std::string& pattern);

void write_qa_record(std::ostream& out, const QAExample& ex);
QAExample read_qa_record(const std::string& line);
void save_qa_file(const std::string& path, const std::vector<QAExample>& examples);
std::vector<QAExample> load_qa_file(const std::string& path);

}  // namespace kglm
