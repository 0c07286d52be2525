#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kglm/rng.hpp"

namespace kglm {

// Ids are short strings, unique within their namespace (entities vs
// relations). Kept as plain strings; the desk-scale graphs here do not
// justify dictionary encoding.
using EntityId = std::string;
using RelationId = std::string;

enum class AttrKind { Text, Number, Date };

struct AttributeValue {
    AttrKind kind = AttrKind::Text;
    std::string raw;
    // Text form used everywhere downstream. Numbers render in canonical
    // decimal form, dates ISO YYYY-MM-DD unless the raw value is free text.
    std::string rendering;

    static AttributeValue make(AttrKind kind, const std::string& raw);
};

struct Triple {
    EntityId head;
    RelationId relation;
    bool tail_is_entity = true;
    EntityId tail_entity;      // valid when tail_is_entity
    AttributeValue tail_value; // valid when !tail_is_entity

    // Comparable tail key: entity id for entity tails, kind-tagged rendering
    // for attribute tails. Used for multi-object tail distinctness.
    std::string tail_key() const;
};

// id -> non-empty ordered list of names. Insertion order preserved so a
// save/load round trip is byte identical.
class NameTable {
public:
    void add(const std::string& id, const std::string& name);
    bool has(const std::string& id) const { return names_.count(id) > 0; }
    const std::vector<std::string>& names(const std::string& id) const;
    const std::vector<std::string>& insertion_order() const { return order_; }
    size_t size() const { return names_.size(); }

private:
    std::unordered_map<std::string, std::vector<std::string>> names_;
    std::vector<std::string> order_;
};

struct PairHash {
    size_t operator()(const std::pair<std::string, std::string>& p) const {
        std::hash<std::string> h;
        size_t a = h(p.first);
        return a ^ (h(p.second) + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    }
};

// Immutable after load. Safe to share across concurrent readers; samplers
// own their generators.
class KnowledgeGraph {
public:
    static KnowledgeGraph from_triples(std::vector<Triple> triples, NameTable names);

    const std::vector<Triple>& triples() const { return triples_; }
    size_t size() const { return triples_.size(); }

    const std::vector<EntityId>& entities() const { return entities_; }
    const std::vector<RelationId>& relations() const { return relations_; }
    const NameTable& names() const { return names_; }

    const std::vector<size_t>& by_head(const EntityId& h) const;
    const std::vector<size_t>& by_head_relation(const EntityId& h, const RelationId& r) const;
    bool has_entity_tail_head(const EntityId& h) const { return entity_tail_heads_.count(h) > 0; }

    // Triple positions whose tail is an entity (chain starts / links).
    const std::vector<size_t>& entity_tail_triples() const { return entity_tail_triples_; }
    // (head, relation) buckets holding >= 2 triples, in first-seen order.
    const std::vector<std::pair<EntityId, RelationId>>& fat_buckets() const { return fat_buckets_; }

private:
    std::vector<Triple> triples_;
    NameTable names_;
    std::vector<EntityId> entities_;
    std::vector<RelationId> relations_;
    std::unordered_map<EntityId, std::vector<size_t>> by_head_;
    std::unordered_map<std::pair<std::string, std::string>, std::vector<size_t>, PairHash>
        by_head_relation_;
    std::unordered_set<EntityId> entity_tail_heads_;
    std::vector<size_t> entity_tail_triples_;
    std::vector<std::pair<EntityId, RelationId>> fat_buckets_;
    static const std::vector<size_t> kEmptyBucket;
};

// TSV loaders/savers. Formats:
//   triples: head_id <TAB> relation_id <TAB> tail <TAB> tail_kind
//            tail_kind in {entity, text, number, date}; '#' lines skipped
//   names:   id <TAB> name            (repeated lines accumulate)
KnowledgeGraph load_kg(const std::string& triples_path, const std::string& names_path);
void save_kg(const KnowledgeGraph& kg, const std::string& triples_path,
             const std::string& names_path);

// Uniform draw from the triple list.
const Triple& sample_triple(const KnowledgeGraph& kg, Rng& rng);

// Uniform draw from the id's name list (entity or relation id).
const std::string& sample_name(const KnowledgeGraph& kg, const std::string& id, Rng& rng);

struct ChainOptions {
    int max_restarts = 100;
    // Intermediate entities must differ from the chain's endpoints and from
    // each other, otherwise a composition that discards intermediates could
    // still contain one. Endpoint revisits (head == final tail) stay legal.
    bool distinct_intermediates = true;
};

// n triples where tail(k_i) is an entity equal to head(k_{i+1}); only the
// final tail may be an attribute. No triple repeats within the chain.
std::vector<size_t> sample_chain(const KnowledgeGraph& kg, int n, Rng& rng,
                                 const ChainOptions& opt = {});

// n triples sharing (head, relation) with pairwise-distinct tails.
std::vector<size_t> sample_multi_object(const KnowledgeGraph& kg, int n, Rng& rng,
                                        int max_restarts = 100);

struct SynthKgOptions {
    int entities = 300;
    int relations = 12;
    int triples = 1500;
    double chain_density = 0.4;   // chance a new head is an existing tail
    double multi_object_frac = 0.2;  // chance of extending an existing (h, r) bucket
    double attribute_frac = 0.15;    // chance of an attribute tail
    double second_name_frac = 0.25;  // chance an entity gets a second name
    double two_word_name_frac = 0.3;
    uint64_t seed = 1;
};

// Random graph with guaranteed chain links and multi-object buckets when the
// corresponding densities are positive. Entity, relation and attribute
// lexicons are word-disjoint so provenance audits can match tokens exactly.
KnowledgeGraph synth_kg(const SynthKgOptions& opt);

}  // namespace kglm
