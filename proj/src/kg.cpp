#include "kglm/kg.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

std::string normalize_ws(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = true;  // trims leading space
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
        size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cols;
}

}  // namespace

AttributeValue AttributeValue::make(AttrKind kind, const std::string& raw) {
    AttributeValue v;
    v.kind = kind;
    v.raw = raw;
    switch (kind) {
        case AttrKind::Text:
            v.rendering = normalize_ws(raw);
            break;
        case AttrKind::Number: {
            double d = 0.0;
            auto res = std::from_chars(raw.data(), raw.data() + raw.size(), d);
            if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size()) {
                throw ParseError("attribute value is not a number: '" + raw + "'");
            }
            // Canonical decimal: integral values render without a fraction.
            if (d == static_cast<long long>(d) && std::abs(d) < 1e15) {
                v.rendering = std::to_string(static_cast<long long>(d));
            } else {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%g", d);
                v.rendering = buf;
            }
            break;
        }
        case AttrKind::Date:
            // ISO form passes through; anything else is treated as a
            // free-text date and rendered as given.
            v.rendering = normalize_ws(raw);
            break;
    }
    if (v.rendering.empty()) throw ParseError("attribute value renders empty");
    return v;
}

std::string Triple::tail_key() const {
    if (tail_is_entity) return "e:" + tail_entity;
    return "v:" + std::to_string(static_cast<int>(tail_value.kind)) + ":" + tail_value.rendering;
}

void NameTable::add(const std::string& id, const std::string& name) {
    std::string n = normalize_ws(name);
    if (id.empty()) throw ParseError("empty id in name table");
    if (n.empty()) throw ParseError("empty name for id '" + id + "'");
    auto it = names_.find(id);
    if (it == names_.end()) {
        names_[id] = {n};
        order_.push_back(id);
    } else {
        it->second.push_back(n);
    }
}

const std::vector<std::string>& NameTable::names(const std::string& id) const {
    auto it = names_.find(id);
    if (it == names_.end()) throw LookupError("unknown id '" + id + "'");
    return it->second;
}

const std::vector<size_t> KnowledgeGraph::kEmptyBucket;

KnowledgeGraph KnowledgeGraph::from_triples(std::vector<Triple> triples, NameTable names) {
    KnowledgeGraph kg;
    kg.triples_ = std::move(triples);
    kg.names_ = std::move(names);

    std::vector<std::string> missing;
    std::unordered_set<std::string> seen_entities;
    std::unordered_set<std::string> seen_relations;
    auto note_entity = [&](const EntityId& e) {
        if (seen_entities.insert(e).second) {
            kg.entities_.push_back(e);
            if (!kg.names_.has(e)) missing.push_back(e);
        }
    };
    for (size_t i = 0; i < kg.triples_.size(); ++i) {
        const Triple& t = kg.triples_[i];
        note_entity(t.head);
        if (seen_relations.insert(t.relation).second) {
            kg.relations_.push_back(t.relation);
            if (!kg.names_.has(t.relation)) missing.push_back(t.relation);
        }
        kg.by_head_[t.head].push_back(i);
        kg.by_head_relation_[{t.head, t.relation}].push_back(i);
        if (t.tail_is_entity) {
            note_entity(t.tail_entity);
            kg.entity_tail_heads_.insert(t.head);
            kg.entity_tail_triples_.push_back(i);
        }
    }
    if (!missing.empty()) {
        std::string msg = "ids referenced by triples but not declared in the name table:";
        for (const auto& id : missing) msg += " " + id;
        throw IntegrityError(msg);
    }
    std::unordered_set<std::string> bucket_seen;
    for (size_t i = 0; i < kg.triples_.size(); ++i) {
        const Triple& t = kg.triples_[i];
        auto key = std::make_pair(t.head, t.relation);
        if (kg.by_head_relation_.at(key).size() >= 2 &&
            bucket_seen.insert(t.head + "\x1f" + t.relation).second) {
            kg.fat_buckets_.push_back(key);
        }
    }
    return kg;
}

const std::vector<size_t>& KnowledgeGraph::by_head(const EntityId& h) const {
    auto it = by_head_.find(h);
    return it == by_head_.end() ? kEmptyBucket : it->second;
}

const std::vector<size_t>& KnowledgeGraph::by_head_relation(const EntityId& h,
                                                            const RelationId& r) const {
    auto it = by_head_relation_.find({h, r});
    return it == by_head_relation_.end() ? kEmptyBucket : it->second;
}

KnowledgeGraph load_kg(const std::string& triples_path, const std::string& names_path) {
    std::ifstream tf(triples_path);
    if (!tf) throw ParseError("cannot open triples file '" + triples_path + "'");
    std::ifstream nf(names_path);
    if (!nf) throw ParseError("cannot open names file '" + names_path + "'");

    NameTable names;
    std::string line;
    int lineno = 0;
    while (std::getline(nf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cols = split_tabs(line);
        if (cols.size() != 2) {
            throw ParseError(names_path + ":" + std::to_string(lineno) +
                             ": expected 2 tab-separated columns, got " +
                             std::to_string(cols.size()));
        }
        names.add(cols[0], cols[1]);
    }

    std::vector<Triple> triples;
    lineno = 0;
    while (std::getline(tf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cols = split_tabs(line);
        if (cols.size() != 4) {
            throw ParseError(triples_path + ":" + std::to_string(lineno) +
                             ": expected 4 tab-separated columns, got " +
                             std::to_string(cols.size()));
        }
        Triple t;
        t.head = cols[0];
        t.relation = cols[1];
        const std::string& kind = cols[3];
        try {
            if (kind == "entity") {
                t.tail_is_entity = true;
                t.tail_entity = cols[2];
            } else if (kind == "text" || kind == "number" || kind == "date") {
                t.tail_is_entity = false;
                AttrKind k = kind == "text"   ? AttrKind::Text
                             : kind == "number" ? AttrKind::Number
                                                : AttrKind::Date;
                t.tail_value = AttributeValue::make(k, cols[2]);
            } else {
                throw ParseError("unknown tail_kind '" + kind + "'");
            }
        } catch (const ParseError& e) {
            throw ParseError(triples_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        triples.push_back(std::move(t));
    }
    return KnowledgeGraph::from_triples(std::move(triples), std::move(names));
}

void save_kg(const KnowledgeGraph& kg, const std::string& triples_path,
             const std::string& names_path) {
    std::ofstream tf(triples_path);
    if (!tf) throw Error("cannot write '" + triples_path + "'");
    for (const Triple& t : kg.triples()) {
        if (t.tail_is_entity) {
            tf << t.head << '\t' << t.relation << '\t' << t.tail_entity << "\tentity\n";
        } else {
            const char* kind = t.tail_value.kind == AttrKind::Text     ? "text"
                               : t.tail_value.kind == AttrKind::Number ? "number"
                                                                       : "date";
            tf << t.head << '\t' << t.relation << '\t' << t.tail_value.raw << '\t' << kind
               << '\n';
        }
    }
    std::ofstream nf(names_path);
    if (!nf) throw Error("cannot write '" + names_path + "'");
    for (const std::string& id : kg.names().insertion_order()) {
        for (const std::string& n : kg.names().names(id)) {
            nf << id << '\t' << n << '\n';
        }
    }
}

const Triple& sample_triple(const KnowledgeGraph& kg, Rng& rng) {
    if (kg.size() == 0) throw EmptySourceError("cannot sample from an empty graph");
    return kg.triples()[rng.below(kg.size())];
}

const std::string& sample_name(const KnowledgeGraph& kg, const std::string& id, Rng& rng) {
    const auto& names = kg.names().names(id);  // throws LookupError when unknown
    return names[rng.below(names.size())];
}

std::vector<size_t> sample_chain(const KnowledgeGraph& kg, int n, Rng& rng,
                                 const ChainOptions& opt) {
    if (n < 1) throw ConfigError("chain length must be >= 1");
    if (kg.size() == 0) throw EmptySourceError("cannot sample from an empty graph");
    if (n == 1) {
        return {rng.below(kg.size())};
    }
    const auto& starts = kg.entity_tail_triples();
    if (starts.empty()) {
        throw PatternExhaustedError("no entity-tail triples to start a chain");
    }
    for (int attempt = 0; attempt < opt.max_restarts; ++attempt) {
        std::vector<size_t> chain;
        chain.push_back(starts[rng.below(starts.size())]);
        const Triple* cur = &kg.triples()[chain[0]];
        std::unordered_set<std::string> interior;
        bool ok = true;
        for (int step = 1; step < n && ok; ++step) {
            const EntityId& link = cur->tail_entity;
            if (opt.distinct_intermediates &&
                (link == kg.triples()[chain[0]].head || interior.count(link))) {
                ok = false;
                break;
            }
            interior.insert(link);
            const auto& bucket = kg.by_head(link);
            std::vector<size_t> candidates;
            for (size_t idx : bucket) {
                const Triple& cand = kg.triples()[idx];
                if (std::find(chain.begin(), chain.end(), idx) != chain.end()) continue;
                bool is_last = step == n - 1;
                if (!is_last && !cand.tail_is_entity) continue;
                if (opt.distinct_intermediates && cand.tail_is_entity) {
                    // the next link (or final tail) may equal the start head
                    // only in the final position
                    if (!is_last && interior.count(cand.tail_entity)) continue;
                    if (!is_last && cand.tail_entity == kg.triples()[chain[0]].head) continue;
                    if (is_last && interior.count(cand.tail_entity)) continue;
                }
                candidates.push_back(idx);
            }
            if (candidates.empty()) {
                ok = false;
                break;
            }
            size_t pick = candidates[rng.below(candidates.size())];
            chain.push_back(pick);
            cur = &kg.triples()[pick];
        }
        if (ok && static_cast<int>(chain.size()) == n) return chain;
    }
    throw PatternExhaustedError("no chain of length " + std::to_string(n) + " found after " +
                                std::to_string(opt.max_restarts) + " restarts");
}

std::vector<size_t> sample_multi_object(const KnowledgeGraph& kg, int n, Rng& rng,
                                        int max_restarts) {
    if (n < 1) throw ConfigError("multi-object arity must be >= 1");
    if (kg.size() == 0) throw EmptySourceError("cannot sample from an empty graph");
    if (n == 1) return {rng.below(kg.size())};
    const auto& buckets = kg.fat_buckets();
    if (buckets.empty()) throw PatternExhaustedError("no (head, relation) bucket has >= 2 triples");
    for (int attempt = 0; attempt < max_restarts; ++attempt) {
        const auto& key = buckets[rng.below(buckets.size())];
        std::vector<size_t> pool = kg.by_head_relation(key.first, key.second);
        if (static_cast<int>(pool.size()) < n) continue;
        rng.shuffle(pool);
        std::vector<size_t> picked;
        std::unordered_set<std::string> tails;
        for (size_t idx : pool) {
            if (tails.insert(kg.triples()[idx].tail_key()).second) {
                picked.push_back(idx);
                if (static_cast<int>(picked.size()) == n) break;
            }
        }
        if (static_cast<int>(picked.size()) == n) return picked;
    }
    throw PatternExhaustedError("no (head, relation) bucket with " + std::to_string(n) +
                                " distinct tails found after " + std::to_string(max_restarts) +
                                " restarts");
}

namespace {

// Disjoint syllable classes keep entity, relation and attribute words from
// colliding, which lets tests match discarded elements by token.
const char* kEntitySyl[] = {"ba", "ko", "mi", "ra", "tu", "ve", "zo", "li", "na", "pe",
                            "su", "da", "fo", "gi", "hu", "ja", "ki", "lo", "mu", "ne"};
const char* kRelationSyl[] = {"bran", "crel", "drev", "fron", "gles", "hrim",
                              "jolt", "krev", "lorn", "mord", "nest", "plen"};
const char* kTextSyl[] = {"qua", "wex", "yol", "xen", "vau", "zim", "quo", "wik"};

std::string entity_word(uint64_t i) {
    std::string w;
    w += kEntitySyl[i % 20];
    w += kEntitySyl[(i / 20) % 20];
    if (i >= 400) w += kEntitySyl[(i / 400) % 20];
    return w;
}

std::string relation_word(uint64_t i) {
    std::string w = kRelationSyl[i % 12];
    if (i >= 12) w += kRelationSyl[(i / 12) % 12];
    return w;
}

std::string text_word(uint64_t i) {
    std::string w = kTextSyl[i % 8];
    w += kTextSyl[(i / 8) % 8];
    return w;
}

}  // namespace

KnowledgeGraph synth_kg(const SynthKgOptions& opt) {
    if (opt.entities < 2 || opt.relations < 1 || opt.triples < 1) {
        throw ConfigError("synthetic graph needs >= 2 entities, >= 1 relation, >= 1 triple");
    }
    Rng rng(derive_seed(opt.seed, /*stream=*/0x6b67));  // "kg"
    NameTable names;
    std::vector<std::string> eids(opt.entities), rids(opt.relations);
    // Entity and relation words stay globally unique so a discarded entity's
    // tokens can never reappear through an unrelated name. Names are kept
    // short: dense word reuse across facts is what lets a desk-scale model
    // memorize the graph in a reasonable number of passes.
    uint64_t word = 0;
    for (int i = 0; i < opt.entities; ++i) {
        eids[i] = "e" + std::to_string(i);
        std::string n = entity_word(word++);
        if (rng.bernoulli(opt.two_word_name_frac)) n += " " + entity_word(word++);
        names.add(eids[i], n);
        if (rng.bernoulli(opt.second_name_frac)) {
            names.add(eids[i], entity_word(word++));
        }
    }
    for (int i = 0; i < opt.relations; ++i) {
        rids[i] = "r" + std::to_string(i);
        std::string n = relation_word(2 * i);
        if (rng.bernoulli(0.25)) n += " " + relation_word(2 * i + 1);
        names.add(rids[i], n);
    }

    std::vector<Triple> triples;
    std::unordered_set<std::string> dedup;
    auto make_attr = [&](Rng& r) {
        int pick = static_cast<int>(r.below(3));
        if (pick == 0) {
            return AttributeValue::make(AttrKind::Number,
                                        std::to_string(1 + r.below(300)));
        }
        if (pick == 1) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", 1950 + (int)r.below(50),
                          1 + (int)r.below(12), 1 + (int)r.below(28));
            return AttributeValue::make(AttrKind::Date, buf);
        }
        std::string t = text_word(r.below(40));
        if (r.bernoulli(0.4)) t += " : " + std::to_string(r.below(24));
        return AttributeValue::make(AttrKind::Text, t);
    };

    int guard = 0;
    while (static_cast<int>(triples.size()) < opt.triples && guard < opt.triples * 50) {
        ++guard;
        Triple t;
        bool extend_bucket = !triples.empty() && rng.bernoulli(opt.multi_object_frac);
        if (extend_bucket) {
            const Triple& base = triples[rng.below(triples.size())];
            t.head = base.head;
            t.relation = base.relation;
        } else {
            bool chain = !triples.empty() && rng.bernoulli(opt.chain_density);
            if (chain) {
                // pick the tail of an existing entity-tail triple as the head
                std::vector<size_t> et;
                for (size_t i = 0; i < triples.size(); ++i)
                    if (triples[i].tail_is_entity) et.push_back(i);
                if (!et.empty()) {
                    t.head = triples[et[rng.below(et.size())]].tail_entity;
                } else {
                    t.head = eids[rng.below(eids.size())];
                }
            } else {
                t.head = eids[rng.below(eids.size())];
            }
            t.relation = rids[rng.below(rids.size())];
        }
        if (rng.bernoulli(opt.attribute_frac)) {
            t.tail_is_entity = false;
            t.tail_value = make_attr(rng);
        } else {
            t.tail_is_entity = true;
            t.tail_entity = eids[rng.below(eids.size())];
            if (t.tail_entity == t.head) continue;  // no self loops
        }
        std::string key = t.head + "\x1f" + t.relation + "\x1f" + t.tail_key();
        if (!dedup.insert(key).second) continue;
        triples.push_back(std::move(t));
    }

    // Make sure both reasoning patterns are samplable whenever their
    // densities ask for them.
    auto add_unique = [&](Triple t) {
        std::string key = t.head + "\x1f" + t.relation + "\x1f" + t.tail_key();
        if (dedup.insert(key).second) triples.push_back(std::move(t));
    };
    if (opt.multi_object_frac > 0 && triples.size() >= 1 && opt.entities >= 3) {
        bool has_bucket = false;
        std::unordered_map<std::string, int> bucket_count;
        for (const Triple& t : triples) {
            if (++bucket_count[t.head + "\x1f" + t.relation] >= 2) has_bucket = true;
        }
        if (!has_bucket) {
            const Triple& base = triples[0];
            for (const auto& e : eids) {
                if (e == base.head || e == base.tail_key().substr(2)) continue;
                Triple extra;
                extra.head = base.head;
                extra.relation = base.relation;
                extra.tail_is_entity = true;
                extra.tail_entity = e;
                add_unique(std::move(extra));
                break;
            }
        }
    }
    if (opt.chain_density > 0 && opt.entities >= 3) {
        bool has_chain = false;
        std::unordered_set<std::string> heads;
        for (const Triple& t : triples) heads.insert(t.head);
        for (const Triple& t : triples) {
            if (t.tail_is_entity && heads.count(t.tail_entity)) {
                has_chain = true;
                break;
            }
        }
        if (!has_chain) {
            for (const Triple& t : triples) {
                if (!t.tail_is_entity) continue;
                Triple link;
                link.head = t.tail_entity;
                link.relation = rids[0];
                link.tail_is_entity = true;
                for (const auto& e : eids) {
                    if (e != link.head) {
                        link.tail_entity = e;
                        break;
                    }
                }
                if (link.tail_entity.empty() || link.tail_entity == link.head) continue;
                add_unique(std::move(link));
                break;
            }
        }
    }
    return KnowledgeGraph::from_triples(std::move(triples), std::move(names));
}

}  // namespace kglm
