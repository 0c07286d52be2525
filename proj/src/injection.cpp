#include "kglm/injection.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kglm/errors.hpp"

namespace kglm {

const char* origin_name(Origin o) {
    switch (o) {
        case Origin::HeadEntity: return "head";
        case Origin::Relation: return "relation";
        case Origin::TailEntity: return "tail";
        case Origin::AttributeValue: return "value";
        case Origin::Auxiliary: return "aux";
        case Origin::SeparatorToken: return "sep";
    }
    return "?";
}

std::string CompositionPlan::render() const {
    std::string out;
    for (const Segment& s : segments) {
        if (s.origin == Origin::SeparatorToken) {
            if (!out.empty()) out += ' ';
            out += "[SEP]";
            continue;
        }
        if (!out.empty()) out += ' ';
        out += s.text;
    }
    return out;
}

Strategy Strategy::concat() { return Strategy{}; }

Strategy Strategy::from_template(const std::string& tmpl) {
    if (tmpl.empty()) throw ConfigError("empty construction template");
    Strategy s;
    s.tmpl_ = tmpl;
    return s;
}

Strategy Strategy::parse(const std::string& id) {
    if (id == "concat") return concat();
    if (id.rfind("template:", 0) == 0) return from_template(id.substr(9));
    throw ConfigError("unknown construction strategy '" + id + "'");
}

void MaskingConfig::validate() const {
    if (select_prob < 0.0 || select_prob > 1.0) {
        throw ConfigError("select_prob must lie in [0, 1]");
    }
    double sum = mask_frac + random_frac + keep_frac;
    if (std::abs(sum - 1.0) > 1e-9 || mask_frac < 0 || random_frac < 0 || keep_frac < 0) {
        throw ConfigError("corruption fractions must be non-negative and sum to 1");
    }
    if (max_tokens < 3) throw ConfigError("max_tokens must fit [CLS] x [SEP]");
}

bool MaskingConfig::origin_maskable(Origin o) const {
    if (o == Origin::SeparatorToken) return false;
    if (maskable_origins) return maskable_origins->count(o) > 0;
    if (weighted) return o != Origin::SeparatorToken;
    return is_knowledge_origin(o);
}

size_t MaskedSentence::label_count() const {
    size_t n = 0;
    for (int32_t l : labels)
        if (l != kNoLabel) ++n;
    return n;
}

CharacterizedTriple characterize(const KnowledgeGraph& kg, const Triple& triple, Rng& rng) {
    CharacterizedTriple out;
    out.head = {sample_name(kg, triple.head, rng), Origin::HeadEntity, -1, 0};
    out.relation = {sample_name(kg, triple.relation, rng), Origin::Relation, -1, 0};
    if (triple.tail_is_entity) {
        out.tail = {sample_name(kg, triple.tail_entity, rng), Origin::TailEntity, -1, 0};
    } else {
        out.tail = {triple.tail_value.rendering, Origin::AttributeValue, -1, 0};
    }
    return out;
}

CompositionPlan construct(const std::vector<Segment>& segments, const Strategy& strategy) {
    if (segments.empty()) throw ConfigError("construct needs at least one segment");
    CompositionPlan plan;
    if (strategy.is_concat()) {
        plan.segments = segments;
    } else {
        // Substitute {h} {r} {t} by origin; literal words become Auxiliary.
        auto find_origin = [&](Origin a, Origin b) -> const Segment* {
            for (const Segment& s : segments)
                if (s.origin == a || s.origin == b) return &s;
            return nullptr;
        };
        const std::string& tmpl = strategy.template_text();
        std::string word;
        auto flush_aux = [&]() {
            if (!word.empty()) {
                plan.segments.push_back({word, Origin::Auxiliary, -1, -1});
                word.clear();
            }
        };
        for (size_t i = 0; i < tmpl.size(); ++i) {
            if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
                const Segment* src = nullptr;
                switch (tmpl[i + 1]) {
                    case 'h': src = find_origin(Origin::HeadEntity, Origin::HeadEntity); break;
                    case 'r': src = find_origin(Origin::Relation, Origin::Relation); break;
                    case 't': src = find_origin(Origin::TailEntity, Origin::AttributeValue); break;
                    default: throw ConfigError("template placeholder must be {h}, {r} or {t}");
                }
                if (!src) throw ConfigError("template placeholder has no matching segment");
                flush_aux();
                plan.segments.push_back(*src);
                i += 2;
            } else if (tmpl[i] == ' ') {
                flush_aux();
            } else {
                word.push_back(tmpl[i]);
            }
        }
        flush_aux();
    }
    bool any_content = false;
    for (auto& s : plan.segments) {
        if (s.origin != Origin::SeparatorToken) {
            if (s.text.empty()) throw ConfigError("non-separator segment with empty text");
            any_content = true;
        }
    }
    if (!any_content) throw ConfigError("plan has no non-separator segment");
    // assign element ids to segments that do not carry one yet
    int next = 0;
    for (const Segment& s : plan.segments) next = std::max(next, s.element + 1);
    for (Segment& s : plan.segments) {
        if (s.element < 0 && s.origin != Origin::SeparatorToken) s.element = next++;
    }
    return plan;
}

MaskedSentence mask(const CompositionPlan& plan, const Vocabulary& v, const MaskingConfig& cfg,
                    Rng& rng) {
    cfg.validate();

    MaskedSentence out;
    out.clean_ids.push_back(Vocabulary::kCls);
    out.tokens.push_back({Origin::SeparatorToken, -1, -1, true});

    // Tokenize per segment so token provenance lines up with elements. The
    // rendered plan is space-joined, so per-segment tokenization matches
    // tokenizing the full rendering.
    struct UnitKey {
        int element;
        int word;  // -1 = whole element
    };
    std::vector<UnitKey> unit_of_token;  // aligned with clean_ids
    unit_of_token.push_back({-1, -1});

    size_t scope_token_begin = 1;
    const size_t content_cap = cfg.max_tokens - 1;  // room for the final [SEP]
    for (size_t si = 0; si < plan.segments.size(); ++si) {
        const Segment& seg = plan.segments[si];
        if (si == plan.unit_scope_begin) scope_token_begin = out.clean_ids.size();
        if (seg.origin == Origin::SeparatorToken) {
            if (out.clean_ids.size() < content_cap) {
                out.clean_ids.push_back(Vocabulary::kSep);
                out.tokens.push_back({Origin::SeparatorToken, -1, -1, true});
                unit_of_token.push_back({-1, -1});
            }
            continue;
        }
        TokenizedText tt = tokenize(v, seg.text);
        for (size_t i = 0; i < tt.size() && out.clean_ids.size() < content_cap; ++i) {
            out.clean_ids.push_back(tt.tokens[i]);
            out.tokens.push_back({seg.origin, seg.element, tt.word_ids[i], false});
            bool entity_unit = seg.origin == Origin::HeadEntity || seg.origin == Origin::TailEntity;
            unit_of_token.push_back({seg.element, entity_unit ? -1 : tt.word_ids[i]});
        }
    }
    out.clean_ids.push_back(Vocabulary::kSep);
    out.tokens.push_back({Origin::SeparatorToken, -1, -1, true});
    unit_of_token.push_back({-1, -1});

    if (out.clean_ids.size() <= 2) {
        throw DegenerateInputError("plan tokenizes to zero non-special tokens");
    }
    if (plan.unit_scope_begin >= plan.segments.size()) scope_token_begin = 1;
    out.scope_begin = scope_token_begin;

    // Units inside the selection scope, in first-token order.
    struct Unit {
        int element;
        int word;
        Origin origin;
        size_t first;
    };
    std::vector<Unit> units;
    std::map<std::pair<int, int>, size_t> unit_index;
    for (size_t pos = scope_token_begin; pos < out.clean_ids.size(); ++pos) {
        const TokenInfo& info = out.tokens[pos];
        if (info.special || !cfg.origin_maskable(info.origin)) continue;
        auto key = std::make_pair(unit_of_token[pos].element, unit_of_token[pos].word);
        if (unit_index.emplace(key, units.size()).second) {
            units.push_back({key.first, key.second, info.origin, pos});
        }
    }

    auto unit_prob = [&](const Unit& u) {
        if (cfg.weighted && is_knowledge_origin(u.origin)) {
            return std::min(1.0, cfg.select_prob * cfg.knowledge_multiplier);
        }
        return cfg.select_prob;
    };

    std::vector<uint8_t> selected(units.size(), 0);
    auto draw = [&]() {
        bool any = false;
        for (size_t i = 0; i < units.size(); ++i) {
            selected[i] = rng.bernoulli(unit_prob(units[i])) ? 1 : 0;
            any = any || selected[i];
        }
        return any;
    };
    if (!units.empty()) {
        bool any = draw();
        if (!any && cfg.reroll_on_zero) draw();
    }

    // Propagate each selected unit to every occurrence of the same element
    // word, then corrupt per token.
    out.input_ids = out.clean_ids;
    out.labels.assign(out.clean_ids.size(), kNoLabel);
    std::vector<uint8_t> pos_selected(out.clean_ids.size(), 0);
    for (size_t pos = 1; pos + 1 < out.clean_ids.size(); ++pos) {
        if (out.tokens[pos].special) continue;
        const UnitKey& key = unit_of_token[pos];
        if (key.element < 0) continue;
        auto it = unit_index.find({key.element, key.word});
        if (it != unit_index.end() && selected[it->second]) pos_selected[pos] = 1;
    }

    const int32_t vocab_size = static_cast<int32_t>(v.size());
    for (size_t pos = 0; pos < out.clean_ids.size(); ++pos) {
        if (!pos_selected[pos]) continue;
        out.labels[pos] = out.clean_ids[pos];
        double u = rng.uniform01();
        if (u < cfg.mask_frac) {
            out.input_ids[pos] = Vocabulary::kMask;
        } else if (u < cfg.mask_frac + cfg.random_frac) {
            // uniform over non-special tokens
            if (vocab_size > 5) {
                out.input_ids[pos] = 5 + static_cast<int32_t>(rng.below(vocab_size - 5));
            } else {
                out.input_ids[pos] = Vocabulary::kMask;
            }
        }  // else keep
    }

    // Record every selected occurrence span (contiguous run of one unit's
    // tokens). Propagated occurrences outside the scope are included.
    size_t pos = 0;
    while (pos < out.clean_ids.size()) {
        if (!pos_selected[pos]) {
            ++pos;
            continue;
        }
        size_t begin = pos;
        const UnitKey key = unit_of_token[pos];
        while (pos < out.clean_ids.size() && pos_selected[pos] &&
               unit_of_token[pos].element == key.element && unit_of_token[pos].word == key.word) {
            ++pos;
        }
        out.selected_units.push_back(
            {begin, pos, out.tokens[begin].origin, key.element, key.word});
    }
    return out;
}

MaskedSentence ki(const KnowledgeGraph& kg, const Triple& triple, const Strategy& strategy,
                  const Vocabulary& v, const MaskingConfig& cfg, Rng& rng) {
    CharacterizedTriple c = characterize(kg, triple, rng);
    CompositionPlan plan = construct({c.head, c.relation, c.tail}, strategy);
    return mask(plan, v, cfg, rng);
}

}  // namespace kglm
