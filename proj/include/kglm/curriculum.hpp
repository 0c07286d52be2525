#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kglm/injection.hpp"
#include "kglm/kg.hpp"

namespace kglm {

enum class PatternKind { MultiHop, MultiObject };

struct ReasoningPattern {
    PatternKind kind = PatternKind::MultiHop;
    int arity = 2;
};

const char* pattern_name(PatternKind k);

struct LessonSpec {
    int lesson = 1;  // 1..3
    size_t examples_per_epoch = 0;
    MaskingConfig masking;
    // Pattern mix for lessons 2-3 (MultiObject weight = 1 - multihop_weight).
    double multihop_weight = 0.5;
    int min_arity = 2;
    int max_arity = 3;

    void validate() const;
};

// Defaults: lesson 1 covers the triple list once per epoch at select 0.15;
// lessons 2 and 3 draw ceil(0.25 * |triples|) pattern compositions per epoch
// at select 0.30 and 0.15 respectively.
LessonSpec default_lesson_spec(int lesson, size_t triple_count);

enum class Variant { CR, CR03, CR13 };

Variant parse_variant(const std::string& s);  // "cr" | "cr03" | "cr13"
const char* variant_name(Variant v);
// Checkpoint labels emitted at lesson boundaries, in training order.
std::vector<std::string> variant_checkpoint_labels(Variant v);

struct CurriculumSchedule {
    Variant variant = Variant::CR;
    std::vector<LessonSpec> lessons;

    static CurriculumSchedule make(Variant v, size_t triple_count);
    void validate() const;
};

struct CorpusExample {
    int lesson = 1;
    std::string pattern;  // "single" | "multihop" | "multiobject"
    MaskedSentence sentence;
    std::string text;  // detokenized clean rendering, [CLS] ... [SEP]
    std::vector<size_t> provenance_triples;
    std::vector<std::string> discarded;  // ids dropped from the composition
};

// Composition of pattern-conforming triples. MultiHop keeps the first head,
// every relation and the final tail; MultiObject keeps the first head and
// relation and every tail. Validates the structural predicate and throws
// PatternError naming the failing pair.
CompositionPlan compose(const KnowledgeGraph& kg, const std::vector<size_t>& triple_indices,
                        const ReasoningPattern& pattern, const Strategy& strategy, Rng& rng);

// One epoch of one lesson: deterministic random access to examples, so
// generation order and worker count cannot change the corpus.
class LessonStream {
public:
    LessonStream(const KnowledgeGraph& kg, const LessonSpec& spec, const Vocabulary& vocab,
                 Strategy strategy, uint64_t global_seed, int epoch);

    size_t size() const;
    CorpusExample example(size_t index) const;

private:
    const KnowledgeGraph& kg_;
    LessonSpec spec_;
    const Vocabulary& vocab_;
    Strategy strategy_;
    uint64_t global_seed_ = 0;
    int epoch_ = 0;
    std::vector<size_t> permutation_;  // lesson 1 only
};

// Lessons of a schedule in order, each addressable by (lesson, epoch).
class CorpusStream {
public:
    CorpusStream(const KnowledgeGraph& kg, CurriculumSchedule schedule, const Vocabulary& vocab,
                 Strategy strategy, uint64_t global_seed);

    const CurriculumSchedule& schedule() const { return schedule_; }
    LessonStream epoch_stream(const LessonSpec& spec, int epoch) const;

private:
    const KnowledgeGraph& kg_;
    CurriculumSchedule schedule_;
    const Vocabulary& vocab_;
    Strategy strategy_;
    uint64_t global_seed_;
};

// Line-delimited corpus records.
void write_corpus_record(std::ostream& out, const CorpusExample& ex);
CorpusExample read_corpus_record(const std::string& line);

}  // namespace kglm
