#include "kglm/curriculum.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

// Seed stream tags. Lesson streams depend only on (seed, lesson, epoch,
// index), so schedule variants that share a lesson see identical examples.
constexpr uint64_t kPermStream = 0;
constexpr uint64_t kExampleStream = 1;

uint64_t lesson_stream(int lesson, uint64_t tag) {
    return static_cast<uint64_t>(lesson) * 16 + tag;
}

struct RenderedElements {
    // element index = position in `texts`; (ordinal, field) -> element index
    std::vector<std::string> texts;
    std::vector<Origin> origins;
    std::vector<int> head_of;  // per ordinal
    std::vector<int> rel_of;
    std::vector<int> tail_of;
};

// Samples one rendering per element. Multi-object heads and relations alias
// the first triple's elements so the shared field surfaces as one string and
// masks as one element everywhere.
RenderedElements render_elements(const KnowledgeGraph& kg,
                                 const std::vector<size_t>& triple_indices,
                                 PatternKind kind, Rng& rng) {
    RenderedElements out;
    const size_t n = triple_indices.size();
    out.head_of.resize(n);
    out.rel_of.resize(n);
    out.tail_of.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const Triple& t = kg.triples()[triple_indices[i]];
        bool alias = kind == PatternKind::MultiObject && i > 0;
        if (alias) {
            out.head_of[i] = out.head_of[0];
            out.rel_of[i] = out.rel_of[0];
        } else {
            out.head_of[i] = static_cast<int>(out.texts.size());
            out.texts.push_back(sample_name(kg, t.head, rng));
            out.origins.push_back(Origin::HeadEntity);
            out.rel_of[i] = static_cast<int>(out.texts.size());
            out.texts.push_back(sample_name(kg, t.relation, rng));
            out.origins.push_back(Origin::Relation);
        }
        out.tail_of[i] = static_cast<int>(out.texts.size());
        if (t.tail_is_entity) {
            out.texts.push_back(sample_name(kg, t.tail_entity, rng));
            out.origins.push_back(Origin::TailEntity);
        } else {
            out.texts.push_back(t.tail_value.rendering);
            out.origins.push_back(Origin::AttributeValue);
        }
    }
    return out;
}

Segment element_segment(const RenderedElements& els, int element, int ordinal) {
    return {els.texts[element], els.origins[element], element, ordinal};
}

void check_pattern(const KnowledgeGraph& kg, const std::vector<size_t>& idx,
                   const ReasoningPattern& pattern) {
    const size_t n = idx.size();
    if (n == 0) throw PatternError("composition needs at least one triple");
    for (size_t i = 0; i < n; ++i) {
        if (idx[i] >= kg.size()) throw PatternError("triple index out of range");
        for (size_t j = i + 1; j < n; ++j) {
            if (idx[i] == idx[j]) {
                throw PatternError("triple repeated at positions " + std::to_string(i) + " and " +
                                   std::to_string(j));
            }
        }
    }
    if (pattern.kind == PatternKind::MultiHop) {
        for (size_t i = 0; i + 1 < n; ++i) {
            const Triple& a = kg.triples()[idx[i]];
            const Triple& b = kg.triples()[idx[i + 1]];
            if (!a.tail_is_entity || a.tail_entity != b.head) {
                throw PatternError("chain link broken between triples " + std::to_string(i) +
                                   " and " + std::to_string(i + 1) + ": tail '" +
                                   (a.tail_is_entity ? a.tail_entity : a.tail_value.rendering) +
                                   "' vs head '" + b.head + "'");
            }
        }
    } else {
        const Triple& first = kg.triples()[idx[0]];
        std::unordered_set<std::string> tails{first.tail_key()};
        for (size_t i = 1; i < n; ++i) {
            const Triple& t = kg.triples()[idx[i]];
            if (t.head != first.head || t.relation != first.relation) {
                throw PatternError("triples 0 and " + std::to_string(i) +
                                   " do not share (head, relation): (" + first.head + ", " +
                                   first.relation + ") vs (" + t.head + ", " + t.relation + ")");
            }
            if (!tails.insert(t.tail_key()).second) {
                throw PatternError("duplicate tail '" + t.tail_key() + "' at position " +
                                   std::to_string(i));
            }
        }
    }
}

CompositionPlan build_comp_plan(const KnowledgeGraph& kg, const std::vector<size_t>& idx,
                                const ReasoningPattern& pattern, const RenderedElements& els) {
    CompositionPlan plan;
    plan.source_triples = idx;
    const size_t n = idx.size();
    if (pattern.kind == PatternKind::MultiHop || n == 1) {
        plan.segments.push_back(element_segment(els, els.head_of[0], 0));
        for (size_t i = 0; i < n; ++i) {
            plan.segments.push_back(element_segment(els, els.rel_of[i], static_cast<int>(i)));
        }
        plan.segments.push_back(
            element_segment(els, els.tail_of[n - 1], static_cast<int>(n - 1)));
        for (size_t i = 0; i + 1 < n; ++i) {
            plan.discarded_entities.push_back(kg.triples()[idx[i]].tail_entity);
        }
    } else {
        plan.segments.push_back(element_segment(els, els.head_of[0], 0));
        plan.segments.push_back(element_segment(els, els.rel_of[0], 0));
        for (size_t i = 0; i < n; ++i) {
            plan.segments.push_back(element_segment(els, els.tail_of[i], static_cast<int>(i)));
        }
        for (size_t i = 1; i < n; ++i) {
            plan.discarded_other.push_back(kg.triples()[idx[i]].head);
            plan.discarded_other.push_back(kg.triples()[idx[i]].relation);
        }
    }
    return plan;
}

CompositionPlan build_step_plan(const RenderedElements& els, size_t ordinal,
                                const std::vector<size_t>& idx) {
    CompositionPlan plan;
    plan.source_triples = {idx[ordinal]};
    plan.segments.push_back(element_segment(els, els.head_of[ordinal], (int)ordinal));
    plan.segments.push_back(element_segment(els, els.rel_of[ordinal], (int)ordinal));
    plan.segments.push_back(element_segment(els, els.tail_of[ordinal], (int)ordinal));
    return plan;
}

ReasoningPattern draw_pattern(const LessonSpec& spec, Rng& rng) {
    ReasoningPattern p;
    p.kind = rng.bernoulli(spec.multihop_weight) ? PatternKind::MultiHop
                                                 : PatternKind::MultiObject;
    p.arity = spec.min_arity +
              static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_arity - spec.min_arity + 1)));
    return p;
}

std::vector<size_t> sample_pattern_triples(const KnowledgeGraph& kg, const ReasoningPattern& p,
                                           Rng& rng) {
    if (p.kind == PatternKind::MultiHop) return sample_chain(kg, p.arity, rng);
    return sample_multi_object(kg, p.arity, rng);
}

CorpusExample finish_example(int lesson, const char* pattern, CompositionPlan plan,
                             const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng) {
    CorpusExample ex;
    ex.lesson = lesson;
    ex.pattern = pattern;
    ex.provenance_triples = plan.source_triples;
    ex.discarded = plan.discarded_entities;
    ex.discarded.insert(ex.discarded.end(), plan.discarded_other.begin(),
                        plan.discarded_other.end());
    ex.sentence = mask(plan, vocab, cfg, rng);
    ex.text = detokenize(vocab, ex.sentence.clean_ids);
    return ex;
}

}  // namespace

const char* pattern_name(PatternKind k) {
    return k == PatternKind::MultiHop ? "multihop" : "multiobject";
}

void LessonSpec::validate() const {
    if (lesson < 1 || lesson > 3) throw ConfigError("lesson must be 1, 2 or 3");
    masking.validate();
    if (lesson >= 2) {
        if (multihop_weight < 0.0 || multihop_weight > 1.0) {
            throw ConfigError("pattern weights must lie in [0, 1] and sum to 1");
        }
        if (min_arity < 1 || max_arity < min_arity) {
            throw ConfigError("invalid pattern arity bounds");
        }
    }
}

LessonSpec default_lesson_spec(int lesson, size_t triple_count) {
    LessonSpec spec;
    spec.lesson = lesson;
    switch (lesson) {
        case 1:
            spec.examples_per_epoch = triple_count;
            spec.masking.select_prob = 0.15;
            break;
        case 2:
            spec.examples_per_epoch =
                static_cast<size_t>(std::ceil(0.25 * static_cast<double>(triple_count)));
            spec.masking.select_prob = 0.30;
            break;
        case 3:
            spec.examples_per_epoch =
                static_cast<size_t>(std::ceil(0.25 * static_cast<double>(triple_count)));
            spec.masking.select_prob = 0.15;
            break;
        default:
            throw ConfigError("lesson must be 1, 2 or 3");
    }
    return spec;
}

Variant parse_variant(const std::string& s) {
    if (s == "cr") return Variant::CR;
    if (s == "cr03") return Variant::CR03;
    if (s == "cr13") return Variant::CR13;
    throw ConfigError("unknown schedule variant '" + s + "' (expected cr, cr03 or cr13)");
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::CR: return "cr";
        case Variant::CR03: return "cr03";
        case Variant::CR13: return "cr13";
    }
    return "?";
}

std::vector<std::string> variant_checkpoint_labels(Variant v) {
    switch (v) {
        case Variant::CR: return {"L1", "L2", "L3"};
        case Variant::CR03: return {"L03"};
        case Variant::CR13: return {"L1", "L13"};
    }
    return {};
}

CurriculumSchedule CurriculumSchedule::make(Variant v, size_t triple_count) {
    CurriculumSchedule s;
    s.variant = v;
    std::vector<int> lessons;
    switch (v) {
        case Variant::CR: lessons = {1, 2, 3}; break;
        case Variant::CR03: lessons = {3}; break;
        case Variant::CR13: lessons = {1, 3}; break;
    }
    for (int l : lessons) s.lessons.push_back(default_lesson_spec(l, triple_count));
    return s;
}

void CurriculumSchedule::validate() const {
    std::vector<int> want;
    switch (variant) {
        case Variant::CR: want = {1, 2, 3}; break;
        case Variant::CR03: want = {3}; break;
        case Variant::CR13: want = {1, 3}; break;
    }
    if (lessons.size() != want.size()) {
        throw ConfigError("schedule lesson list does not match its variant");
    }
    for (size_t i = 0; i < want.size(); ++i) {
        if (lessons[i].lesson != want[i]) {
            throw ConfigError("schedule lesson list does not match its variant");
        }
        lessons[i].validate();
    }
}

CompositionPlan compose(const KnowledgeGraph& kg, const std::vector<size_t>& triple_indices,
                        const ReasoningPattern& pattern, const Strategy& strategy, Rng& rng) {
    check_pattern(kg, triple_indices, pattern);
    if (!strategy.is_concat() && triple_indices.size() > 1) {
        throw ConfigError("template strategies apply to single-triple plans only");
    }
    RenderedElements els = render_elements(kg, triple_indices, pattern.kind, rng);
    if (!strategy.is_concat()) {
        std::vector<Segment> segs = {element_segment(els, els.head_of[0], 0),
                                     element_segment(els, els.rel_of[0], 0),
                                     element_segment(els, els.tail_of[0], 0)};
        CompositionPlan plan = construct(segs, strategy);
        plan.source_triples = triple_indices;
        return plan;
    }
    return build_comp_plan(kg, triple_indices, pattern, els);
}

LessonStream::LessonStream(const KnowledgeGraph& kg, const LessonSpec& spec,
                           const Vocabulary& vocab, Strategy strategy, uint64_t global_seed,
                           int epoch)
    : kg_(kg), spec_(spec), vocab_(vocab), strategy_(std::move(strategy)),
      global_seed_(global_seed), epoch_(epoch) {
    spec_.validate();
    if (spec_.lesson == 1) {
        if (kg_.size() == 0) throw EmptySourceError("lesson 1 needs a non-empty graph");
        Rng perm_rng(derive_seed(global_seed_, lesson_stream(1, kPermStream), epoch_, 0));
        permutation_ = perm_rng.permutation(kg_.size());
    }
}

size_t LessonStream::size() const {
    return spec_.lesson == 1 ? kg_.size() : spec_.examples_per_epoch;
}

CorpusExample LessonStream::example(size_t index) const {
    if (index >= size()) throw LookupError("example index out of range");
    Rng rng(derive_seed(global_seed_, lesson_stream(spec_.lesson, kExampleStream), epoch_, index));

    if (spec_.lesson == 1) {
        size_t triple_idx = permutation_[index];
        const Triple& t = kg_.triples()[triple_idx];
        CharacterizedTriple c = characterize(kg_, t, rng);
        CompositionPlan plan = construct({c.head, c.relation, c.tail}, strategy_);
        plan.source_triples = {triple_idx};
        return finish_example(1, "single", std::move(plan), vocab_, spec_.masking, rng);
    }

    ReasoningPattern pattern = draw_pattern(spec_, rng);
    std::vector<size_t> idx = sample_pattern_triples(kg_, pattern, rng);
    check_pattern(kg_, idx, pattern);
    RenderedElements els = render_elements(kg_, idx, pattern.kind, rng);
    CompositionPlan comp = build_comp_plan(kg_, idx, pattern, els);

    if (spec_.lesson == 3) {
        return finish_example(3, pattern_name(pattern.kind), std::move(comp), vocab_,
                              spec_.masking, rng);
    }

    // Lesson 2: reasoning steps, each [SEP]-terminated, then the composition.
    CompositionPlan combined;
    combined.source_triples = idx;
    combined.discarded_entities = comp.discarded_entities;
    combined.discarded_other = comp.discarded_other;
    for (size_t i = 0; i < idx.size(); ++i) {
        CompositionPlan step = build_step_plan(els, i, idx);
        combined.segments.insert(combined.segments.end(), step.segments.begin(),
                                 step.segments.end());
        combined.segments.push_back({"", Origin::SeparatorToken, -1, -1});
    }
    combined.unit_scope_begin = combined.segments.size();
    combined.segments.insert(combined.segments.end(), comp.segments.begin(), comp.segments.end());
    return finish_example(2, pattern_name(pattern.kind), std::move(combined), vocab_,
                          spec_.masking, rng);
}

CorpusStream::CorpusStream(const KnowledgeGraph& kg, CurriculumSchedule schedule,
                           const Vocabulary& vocab, Strategy strategy, uint64_t global_seed)
    : kg_(kg), schedule_(std::move(schedule)), vocab_(vocab), strategy_(std::move(strategy)),
      global_seed_(global_seed) {
    schedule_.validate();
}

LessonStream CorpusStream::epoch_stream(const LessonSpec& spec, int epoch) const {
    return LessonStream(kg_, spec, vocab_, strategy_, global_seed_, epoch);
}

void write_corpus_record(std::ostream& out, const CorpusExample& ex) {
    nlohmann::json j;
    j["lesson"] = ex.lesson;
    j["pattern"] = ex.pattern;
    j["input_ids"] = ex.sentence.input_ids;
    nlohmann::json labels = nlohmann::json::array();
    for (int32_t l : ex.sentence.labels) {
        if (l == kNoLabel) {
            labels.push_back(nullptr);
        } else {
            labels.push_back(l);
        }
    }
    j["labels"] = std::move(labels);
    j["text"] = ex.text;
    j["provenance"] = {{"triples", ex.provenance_triples}, {"discarded", ex.discarded}};
    out << j.dump() << '\n';
}

CorpusExample read_corpus_record(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    CorpusExample ex;
    ex.lesson = j.at("lesson").get<int>();
    ex.pattern = j.at("pattern").get<std::string>();
    ex.sentence.input_ids = j.at("input_ids").get<std::vector<int32_t>>();
    for (const auto& l : j.at("labels")) {
        ex.sentence.labels.push_back(l.is_null() ? kNoLabel : l.get<int32_t>());
    }
    ex.text = j.at("text").get<std::string>();
    if (j.contains("provenance")) {
        ex.provenance_triples = j["provenance"].at("triples").get<std::vector<size_t>>();
        ex.discarded = j["provenance"].at("discarded").get<std::vector<std::string>>();
    }
    return ex;
}

}  // namespace kglm
