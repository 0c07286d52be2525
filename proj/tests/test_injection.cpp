#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "kglm/errors.hpp"
#include "kglm/injection.hpp"
#include "test_util.hpp"

using namespace kglm;
using namespace kglm::test;

namespace {

Vocabulary fixture_vocab() {
    static Vocabulary v = build_vocab(fixture_text(sample_fixture_kg()), 4096, 1);
    return v;
}

const Triple& find_triple(const KnowledgeGraph& kg, const std::string& head,
                          const std::string& rel) {
    const auto& bucket = kg.by_head_relation(head, rel);
    REQUIRE(!bucket.empty());
    return kg.triples()[bucket[0]];
}

MaskingConfig forced(std::set<Origin> origins) {
    MaskingConfig cfg;
    cfg.select_prob = 1.0;
    cfg.mask_frac = 1.0;
    cfg.random_frac = 0.0;
    cfg.keep_frac = 0.0;
    cfg.maskable_origins = std::move(origins);
    return cfg;
}

MaskingConfig unmasked() {
    MaskingConfig cfg;
    cfg.select_prob = 0.0;
    return cfg;
}

// Independent recount of maskable units from token provenance.
size_t count_units(const MaskedSentence& ms, const MaskingConfig& cfg) {
    std::set<std::pair<int, int>> keys;
    for (size_t i = ms.scope_begin; i < ms.size(); ++i) {
        const TokenInfo& t = ms.tokens[i];
        if (t.special || !cfg.origin_maskable(t.origin)) continue;
        bool entity = t.origin == Origin::HeadEntity || t.origin == Origin::TailEntity;
        keys.insert({t.element, entity ? -1 : t.word});
    }
    return keys.size();
}

size_t count_selected_units(const MaskedSentence& ms) {
    std::set<std::pair<int, int>> keys;
    for (const SelectedUnit& u : ms.selected_units) keys.insert({u.element, u.word});
    return keys.size();
}

}  // namespace

TEST_CASE("characterize renders the triple fields") {
    KnowledgeGraph kg = sample_fixture_kg();
    Rng rng(1);
    SUBCASE("entity triple") {
        CharacterizedTriple c = characterize(kg, find_triple(kg, "ashton", "nationality"), rng);
        CHECK(c.head.text == "sir frederick ashton");
        CHECK(c.head.origin == Origin::HeadEntity);
        CHECK(c.relation.text == "nationality");
        CHECK(c.relation.origin == Origin::Relation);
        CHECK(c.tail.text == "united kindom");
        CHECK(c.tail.origin == Origin::TailEntity);
    }
    SUBCASE("attribute triple renders the value") {
        CharacterizedTriple c = characterize(kg, find_triple(kg, "verne", "period"), rng);
        CHECK(c.tail.text == "1828-1905");
        CHECK(c.tail.origin == Origin::AttributeValue);
    }
    SUBCASE("single-name fields are seed independent") {
        for (uint64_t seed : {1ull, 2ull, 99ull}) {
            Rng r(seed);
            CharacterizedTriple c = characterize(kg, find_triple(kg, "maldives", "used_money"), r);
            CHECK(c.head.text == "republic of maldives");
            CHECK(c.tail.text == "maldivian rufiyah");
        }
    }
}

TEST_CASE("construct orders segments per strategy") {
    KnowledgeGraph kg = sample_fixture_kg();
    Rng rng(1);
    CharacterizedTriple c = characterize(kg, find_triple(kg, "ashton", "nationality"), rng);
    SUBCASE("default concatenation") {
        CompositionPlan p = construct({c.head, c.relation, c.tail}, Strategy::concat());
        CHECK(p.render() == "sir frederick ashton nationality united kindom");
    }
    SUBCASE("template strategy reorders and adds auxiliary words") {
        Rng r2(1);
        CharacterizedTriple f = characterize(kg, find_triple(kg, "comet", "author"), r2);
        CompositionPlan p = construct({f.head, f.relation, f.tail},
                                      Strategy::from_template("the {r} of {h} is {t}"));
        CHECK(p.render() == "the author of off on a comet is jules verne");
        CHECK(p.segments[0].origin == Origin::Auxiliary);
    }
    SUBCASE("single segment") {
        CompositionPlan p = construct({c.head}, Strategy::concat());
        CHECK(p.render() == "sir frederick ashton");
    }
    SUBCASE("unknown strategy id") {
        CHECK_THROWS_AS(Strategy::parse("grammar"), ConfigError);
        CHECK_NOTHROW(Strategy::parse("concat"));
        CHECK_NOTHROW(Strategy::parse("template:the {h} has {r} {t}"));
    }
}

TEST_CASE("mask reproduces the head-masked corpus sample") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    Rng rng(5);
    MaskedSentence ms = ki(kg, find_triple(kg, "ashton", "nationality"), Strategy::concat(), v,
                           forced({Origin::HeadEntity}), rng);
    CHECK(detokenize(v, ms.input_ids) ==
          "[CLS] [MASK] [MASK] [MASK] nationality united kindom [SEP]");
    CHECK(detokenize(v, ms.clean_ids) ==
          "[CLS] sir frederick ashton nationality united kindom [SEP]");
    REQUIRE(ms.size() == 8);
    for (size_t i = 0; i < ms.size(); ++i) {
        bool masked = i >= 1 && i <= 3;
        CHECK((ms.labels[i] != kNoLabel) == masked);
        if (masked) CHECK(ms.labels[i] == ms.clean_ids[i]);
    }
    REQUIRE(ms.selected_units.size() == 1);
    CHECK(ms.selected_units[0].begin == 1);
    CHECK(ms.selected_units[0].end == 4);
    CHECK(ms.selected_units[0].origin == Origin::HeadEntity);
}

TEST_CASE("select_prob zero yields the uncorrupted sentence without labels") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    for (bool reroll : {false, true}) {
        MaskingConfig cfg = unmasked();
        cfg.reroll_on_zero = reroll;
        Rng rng(3);
        MaskedSentence ms =
            ki(kg, find_triple(kg, "kuhne", "member_of"), Strategy::concat(), v, cfg, rng);
        CHECK(ms.input_ids == ms.clean_ids);
        CHECK(ms.label_count() == 0);
        CHECK(ms.selected_units.empty());
    }
}

TEST_CASE("ki golden renderings") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    Rng rng(1);
    SUBCASE("attribute triple with punctuation-splitting value") {
        MaskedSentence ms =
            ki(kg, find_triple(kg, "verne", "period"), Strategy::concat(), v, unmasked(), rng);
        CHECK(detokenize(v, ms.clean_ids) == "[CLS] jules verne period 1828 - 1905 [SEP]");
    }
    SUBCASE("relation masking covers both relation words") {
        MaskedSentence ms = ki(kg, find_triple(kg, "maldives", "used_money"), Strategy::concat(),
                               v, forced({Origin::Relation}), rng);
        CHECK(detokenize(v, ms.clean_ids) ==
              "[CLS] republic of maldives used money maldivian rufiyah [SEP]");
        CHECK(detokenize(v, ms.input_ids) ==
              "[CLS] republic of maldives [MASK] [MASK] maldivian rufiyah [SEP]");
    }
    SUBCASE("same seed, same triple, same output") {
        MaskingConfig cfg;
        cfg.select_prob = 0.5;
        Rng r1(77), r2(77);
        MaskedSentence a =
            ki(kg, find_triple(kg, "hellenic", "flag"), Strategy::concat(), v, cfg, r1);
        MaskedSentence b =
            ki(kg, find_triple(kg, "hellenic", "flag"), Strategy::concat(), v, cfg, r2);
        CHECK(a.input_ids == b.input_ids);
        CHECK(a.labels == b.labels);
    }
}

TEST_CASE("corruption split applies mask, random and keep branches") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    MaskingConfig cfg;
    cfg.select_prob = 1.0;  // default 0.8/0.1/0.1 split
    int masked = 0, kept = 0, random_repl = 0, total = 0;
    for (int i = 0; i < 2000; ++i) {
        Rng rng(1000 + i);
        MaskedSentence ms =
            ki(kg, find_triple(kg, "sarbogard", "time"), Strategy::concat(), v, cfg, rng);
        for (size_t p = 0; p < ms.size(); ++p) {
            if (ms.labels[p] == kNoLabel) continue;
            ++total;
            if (ms.input_ids[p] == Vocabulary::kMask) {
                ++masked;
            } else if (ms.input_ids[p] == ms.clean_ids[p]) {
                ++kept;
            } else {
                ++random_repl;
                CHECK(ms.input_ids[p] >= 5);  // random draws avoid specials
            }
        }
    }
    double m = double(masked) / total, k = double(kept) / total, r = double(random_repl) / total;
    CHECK(m == doctest::Approx(0.8).epsilon(0.05));
    CHECK(k == doctest::Approx(0.1).epsilon(0.35));
    CHECK(r == doctest::Approx(0.1).epsilon(0.35));
}

TEST_CASE("length preservation and label soundness over random configs") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    Rng outer(9);
    for (int trial = 0; trial < 500; ++trial) {
        MaskingConfig cfg;
        cfg.select_prob = outer.uniform01();
        Rng rng(outer.u64());
        const Triple& t = sample_triple(kg, outer);
        MaskedSentence ms = ki(kg, t, Strategy::concat(), v, cfg, rng);
        REQUIRE(ms.input_ids.size() == ms.clean_ids.size());
        REQUIRE(ms.labels.size() == ms.clean_ids.size());
        CHECK(ms.input_ids.front() == Vocabulary::kCls);
        CHECK(ms.input_ids.back() == Vocabulary::kSep);
        for (size_t p = 0; p < ms.size(); ++p) {
            if (ms.tokens[p].special) CHECK(ms.labels[p] == kNoLabel);
            if (ms.labels[p] != kNoLabel) {
                CHECK(ms.labels[p] == ms.clean_ids[p]);
            } else {
                CHECK(ms.input_ids[p] == ms.clean_ids[p]);  // untouched outside selection
            }
        }
        // selected spans carry labels on every token
        for (const SelectedUnit& u : ms.selected_units) {
            for (size_t p = u.begin; p < u.end; ++p) CHECK(ms.labels[p] != kNoLabel);
        }
    }
}

TEST_CASE("unit atomicity: entity spans and whole words select all-or-none") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = build_vocab(fixture_text(kg), 96, 3);  // force subword splits
    Rng outer(31);
    for (int trial = 0; trial < 1000; ++trial) {
        MaskingConfig cfg;
        cfg.select_prob = 0.3;
        Rng rng(outer.u64());
        const Triple& t = sample_triple(kg, outer);
        MaskedSentence ms = ki(kg, t, Strategy::concat(), v, cfg, rng);
        // group tokens by unit key and check uniform selection
        std::map<std::pair<int, int>, std::set<bool>> unit_state;
        for (size_t p = 0; p < ms.size(); ++p) {
            const TokenInfo& info = ms.tokens[p];
            if (info.special || info.element < 0) continue;
            bool entity = info.origin == Origin::HeadEntity || info.origin == Origin::TailEntity;
            unit_state[{info.element, entity ? -1 : info.word}].insert(ms.labels[p] != kNoLabel);
        }
        for (const auto& [key, states] : unit_state) CHECK(states.size() == 1);
    }
}

TEST_CASE("statistical selection rate stays within the contract") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    MaskingConfig cfg;
    cfg.select_prob = 0.15;
    size_t units = 0, selected = 0;
    Rng outer(101);
    for (int i = 0; i < 20000; ++i) {
        Rng rng(outer.u64());
        const Triple& t = sample_triple(kg, outer);
        MaskedSentence ms = ki(kg, t, Strategy::concat(), v, cfg, rng);
        units += count_units(ms, cfg);
        selected += count_selected_units(ms);
    }
    double rate = double(selected) / double(units);
    CHECK(rate > 0.14);
    CHECK(rate < 0.16);
}

TEST_CASE("specials immunity and knowledge restriction") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    MaskingConfig cfg;
    cfg.select_prob = 0.9;
    Rng outer(55);
    for (int i = 0; i < 300; ++i) {
        Rng rng(outer.u64());
        const Triple& t = sample_triple(kg, outer);
        // template strategy adds auxiliary words that must stay unmaskable
        MaskedSentence ms =
            ki(kg, t, Strategy::from_template("the {r} of {h} is {t}"), v, cfg, rng);
        for (const SelectedUnit& u : ms.selected_units) {
            CHECK(is_knowledge_origin(u.origin));
        }
        CHECK(ms.labels.front() == kNoLabel);
        CHECK(ms.labels.back() == kNoLabel);
    }
}

TEST_CASE("weighted mode makes auxiliary words maskable and favors knowledge") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    MaskingConfig cfg;
    cfg.select_prob = 0.2;
    cfg.weighted = true;
    cfg.knowledge_multiplier = 3.0;
    size_t aux_selected = 0, know_selected = 0, aux_units = 0, know_units = 0;
    Rng outer(77);
    for (int i = 0; i < 4000; ++i) {
        Rng rng(outer.u64());
        const Triple& t = sample_triple(kg, outer);
        MaskedSentence ms =
            ki(kg, t, Strategy::from_template("the {r} of {h} is {t}"), v, cfg, rng);
        std::set<std::pair<int, int>> seen;
        for (size_t p = ms.scope_begin; p < ms.size(); ++p) {
            const TokenInfo& info = ms.tokens[p];
            if (info.special || info.element < 0) continue;
            bool entity = info.origin == Origin::HeadEntity || info.origin == Origin::TailEntity;
            if (!seen.insert({info.element, entity ? -1 : info.word}).second) continue;
            bool is_know = is_knowledge_origin(info.origin);
            (is_know ? know_units : aux_units) += 1;
            if (ms.labels[p] != kNoLabel) (is_know ? know_selected : aux_selected) += 1;
        }
    }
    double aux_rate = double(aux_selected) / double(aux_units);
    double know_rate = double(know_selected) / double(know_units);
    CHECK(aux_rate == doctest::Approx(0.2).epsilon(0.1));
    CHECK(know_rate == doctest::Approx(0.6).epsilon(0.1));
}

TEST_CASE("reroll flag retries an empty selection once") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    MaskingConfig plain, reroll;
    plain.select_prob = reroll.select_prob = 0.15;
    reroll.reroll_on_zero = true;
    size_t plain_zero = 0, reroll_zero = 0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        Rng r1(i), r2(i);
        const Triple& t = kg.triples()[i % kg.size()];
        if (ki(kg, t, Strategy::concat(), v, plain, r1).label_count() == 0) ++plain_zero;
        if (ki(kg, t, Strategy::concat(), v, reroll, r2).label_count() == 0) ++reroll_zero;
    }
    // one redraw roughly squares the zero-selection probability
    CHECK(reroll_zero < plain_zero);
    double pz = double(plain_zero) / trials;
    CHECK(double(reroll_zero) / trials == doctest::Approx(pz * pz).epsilon(0.25));
}

TEST_CASE("mask validates its configuration") {
    KnowledgeGraph kg = sample_fixture_kg();
    Vocabulary v = fixture_vocab();
    Rng rng(1);
    MaskingConfig bad;
    bad.mask_frac = 0.9;
    bad.random_frac = 0.2;
    bad.keep_frac = 0.1;
    CHECK_THROWS_AS(ki(kg, kg.triples()[0], Strategy::concat(), v, bad, rng), ConfigError);
    MaskingConfig bad2;
    bad2.select_prob = 1.5;
    CHECK_THROWS_AS(ki(kg, kg.triples()[0], Strategy::concat(), v, bad2, rng), ConfigError);
}
