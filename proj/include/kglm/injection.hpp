#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kglm/kg.hpp"
#include "kglm/rng.hpp"
#include "kglm/tokenizer.hpp"

namespace kglm {

enum class Origin : uint8_t {
    HeadEntity,
    Relation,
    TailEntity,
    AttributeValue,
    Auxiliary,
    SeparatorToken,
};

const char* origin_name(Origin o);

inline bool is_knowledge_origin(Origin o) {
    return o == Origin::HeadEntity || o == Origin::Relation || o == Origin::TailEntity ||
           o == Origin::AttributeValue;
}

// One rendered field (or auxiliary word run) of a sentence under
// construction. `element` identifies the knowledge element the text came
// from: occurrences sharing an element id render identically and are masked
// together across regions.
struct Segment {
    std::string text;
    Origin origin = Origin::Auxiliary;
    int element = -1;
    int triple_ordinal = -1;  // position within the plan's source_triples, -1 for auxiliary
};

struct CompositionPlan {
    std::vector<Segment> segments;
    std::vector<size_t> source_triples;            // indices into the graph's triple list
    std::vector<std::string> discarded_entities;   // multi-hop intermediates (entity ids)
    std::vector<std::string> discarded_other;      // multi-object dropped head/relation ids
    // First segment of the region whose units drive selection. 0 means the
    // whole plan (lessons 1 and 3); lesson 2 points this at the composition.
    size_t unit_scope_begin = 0;

    std::string render() const;  // segments joined by single spaces
};

// Sentence construction strategy. The default concatenates the fields in
// head, relation, tail order. Template strategies substitute {h} {r} {t}
// into a fixed text, turning the remaining words into auxiliary segments.
class Strategy {
public:
    static Strategy concat();
    static Strategy from_template(const std::string& tmpl);
    // "concat" or "template:<text>"; anything else is a ConfigError.
    static Strategy parse(const std::string& id);

    bool is_concat() const { return tmpl_.empty(); }
    const std::string& template_text() const { return tmpl_; }

private:
    std::string tmpl_;
};

struct MaskingConfig {
    double select_prob = 0.15;
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;
    // Knowledge-origin units only by default. With weighted = true, auxiliary
    // words become maskable at select_prob and knowledge units are selected
    // at min(1, select_prob * knowledge_multiplier).
    bool weighted = false;
    double knowledge_multiplier = 2.0;
    // When set, overrides the maskable-origin set (testing hook).
    std::optional<std::set<Origin>> maskable_origins;
    // Redraw the unit selection once if it comes up empty. Off by default:
    // the redraw inflates the realized selection rate by p * (1-p)^units,
    // which breaks the +-0.01 selection-rate contract on short sentences.
    bool reroll_on_zero = false;
    size_t max_tokens = 128;

    void validate() const;
    bool origin_maskable(Origin o) const;
};

inline constexpr int32_t kNoLabel = -1;

struct SelectedUnit {
    size_t begin = 0;  // token span [begin, end)
    size_t end = 0;
    Origin origin = Origin::Auxiliary;
    int element = -1;
    int word = -1;  // word index within the element, -1 for whole-element units
};

// Per-token origin record, aligned with input_ids.
struct TokenInfo {
    Origin origin = Origin::SeparatorToken;
    int element = -1;
    int word = -1;      // word index within the element
    bool special = false;
};

struct MaskedSentence {
    std::vector<int32_t> input_ids;   // [CLS] ... [SEP], post-corruption
    std::vector<int32_t> labels;      // original id at selected positions, else kNoLabel
    std::vector<SelectedUnit> selected_units;
    std::vector<int32_t> clean_ids;   // uncorrupted token sequence, same layout
    std::vector<TokenInfo> tokens;    // provenance, aligned with input_ids
    size_t scope_begin = 1;           // first token of the unit-selection scope

    size_t size() const { return input_ids.size(); }
    size_t label_count() const;
};

// Field texts for one triple: head/relation names via name sampling, tail as
// a sampled entity name or the attribute rendering.
struct CharacterizedTriple {
    Segment head;
    Segment relation;
    Segment tail;
};
CharacterizedTriple characterize(const KnowledgeGraph& kg, const Triple& triple, Rng& rng);

CompositionPlan construct(const std::vector<Segment>& segments, const Strategy& strategy);

// Tokenize the rendered plan, partition maskable tokens into units (entity
// origins as one span, whole words otherwise), select units independently,
// propagate selection to all occurrences of the same element word, and apply
// mask/random/keep corruption per token.
MaskedSentence mask(const CompositionPlan& plan, const Vocabulary& v, const MaskingConfig& cfg,
                    Rng& rng);

// characterize -> construct -> mask for a single triple.
MaskedSentence ki(const KnowledgeGraph& kg, const Triple& triple, const Strategy& strategy,
                  const Vocabulary& v, const MaskingConfig& cfg, Rng& rng);

}  // namespace kglm
