#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <map>

#include "kglm/checkpoint.hpp"
#include "kglm/errors.hpp"
#include "kglm/model.hpp"
#include "test_util.hpp"

using namespace kglm;
using namespace kglm::test;

namespace {

EncoderConfig tiny_config(int vocab = 40, bool adapter = true) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.dim = 16;
    cfg.heads = 4;
    cfg.ffn_dim = 32;
    cfg.max_positions = 32;
    cfg.vocab_size = vocab;
    cfg.use_adapter = adapter;
    cfg.dropout = 0.0;
    return cfg;
}

MaskedSentence tiny_sentence(int vocab) {
    MaskedSentence ms;
    ms.input_ids = {Vocabulary::kCls, 7, Vocabulary::kMask, 9, 12, Vocabulary::kMask, 11,
                    Vocabulary::kSep};
    ms.clean_ids = {Vocabulary::kCls, 7, 8, 9, 12, 6, 11, Vocabulary::kSep};
    ms.labels.assign(ms.input_ids.size(), kNoLabel);
    ms.labels[2] = 8;
    ms.labels[5] = 6;
    ms.labels[4] = 12;  // keep-branch position
    REQUIRE(vocab > 13);
    return ms;
}

// Central-difference oracle: perturb one coordinate, recompute the loss.
struct GradCheckStats {
    double max_rel = 0.0;
    int checked = 0;
};

GradCheckStats grad_check(Model<double>& model, const std::function<double()>& loss_fn,
                          const std::function<void()>& grad_fn, Rng& rng,
                          int coords_per_tensor = 20, double eps = 1e-5) {
    model.zero_grads();
    grad_fn();
    GradCheckStats stats;
    for (Parameter<double>& p : model.params()) {
        for (int c = 0; c < coords_per_tensor; ++c) {
            const size_t i = static_cast<size_t>(rng.below(p.value.data.size()));
            const double saved = p.value.data[i];
            p.value.data[i] = saved + eps;
            const double lp = loss_fn();
            p.value.data[i] = saved - eps;
            const double lm = loss_fn();
            p.value.data[i] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double g = p.grad.data[i];
            const double mag = std::max(std::abs(fd), std::abs(g));
            if (mag < 1e-5) {
                // below the oracle's cancellation floor; check absolutely
                INFO("tensor ", p.name, " coord ", i, " fd=", fd, " analytic=", g);
                CHECK(std::abs(fd - g) < 1e-8);
                continue;
            }
            const double rel = std::abs(fd - g) / mag;
            stats.max_rel = std::max(stats.max_rel, rel);
            ++stats.checked;
            if (rel >= 1e-4) {
                INFO("tensor ", p.name, " coord ", i, " fd=", fd, " analytic=", g);
                CHECK(rel < 1e-4);
            }
        }
    }
    return stats;
}

}  // namespace

TEST_CASE("lm_forward returns all layer states with the right shapes") {
    EncoderConfig cfg;
    cfg.layers = 4;
    cfg.dim = 64;
    cfg.heads = 4;
    cfg.ffn_dim = 256;
    cfg.vocab_size = 100;
    Model<double> model(cfg, 1);
    std::vector<int32_t> ids = {0, 7, 8, 9, 10, 11, 1};
    auto states = model.lm_forward(ids);
    REQUIRE(states.size() == 5);
    for (const auto& s : states) {
        CHECK(s.shape == std::vector<int64_t>{7, 64});
    }
    SUBCASE("length overflow is a shape error") {
        std::vector<int32_t> long_ids(cfg.max_positions + 1, 5);
        CHECK_THROWS_AS(model.lm_forward(long_ids), ShapeError);
    }
    SUBCASE("out-of-vocabulary id is rejected") {
        CHECK_THROWS_AS(model.lm_forward({0, 100, 1}), ShapeError);
    }
}

TEST_CASE("zeroed embeddings produce an all-zero embedding state") {
    Model<double> model(tiny_config(), 3);
    model.param("base.embed.token").value.zero();
    model.param("base.embed.position").value.zero();
    auto states = model.lm_forward({Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad});
    for (double v : states[0].data) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic in eval mode") {
    Model<double> model(tiny_config(), 5);
    std::vector<int32_t> ids = {0, 6, 7, 8, 1};
    auto a = model.ka_forward(ids);
    auto b = model.ka_forward(ids);
    CHECK(a.data == b.data);
}

TEST_CASE("adapter stack halves the hidden size and merges back to dim") {
    EncoderConfig cfg;
    cfg.layers = 4;
    cfg.dim = 64;
    cfg.heads = 4;
    cfg.ffn_dim = 256;
    cfg.vocab_size = 60;
    CHECK(cfg.adapter_hidden() == 32);
    Model<double> model(cfg, 7);
    auto cache = model.forward({0, 6, 7, 8, 9, 1});
    REQUIRE(cache.h.size() == 5);
    CHECK(cache.h.back().shape == std::vector<int64_t>{6, 32});
    CHECK(cache.fused.shape == std::vector<int64_t>{6, 64});
    // odd dim rounds the hidden size up
    EncoderConfig odd = tiny_config();
    odd.dim = 18;
    odd.heads = 3;
    CHECK(odd.adapter_hidden() == 9);
}

TEST_CASE("zero adapter with pass-through merge reproduces the base output") {
    Model<double> model(tiny_config(), 11);
    for (Parameter<double>& p : model.params()) {
        if (p.role == Role::Adapter) p.value.zero();
    }
    // merge = [I_d | 0]
    Tensor<double>& mw = model.param("adapter.merge.w").value;
    const int d = model.config().dim;
    for (int i = 0; i < d; ++i) mw.at(i, i) = 1.0;
    std::vector<int32_t> ids = {0, 8, 9, 10, 1};
    auto cache = model.forward(ids);
    const Tensor<double>& lm_final = cache.lm_final();
    REQUIRE(cache.fused.data.size() == lm_final.data.size());
    for (size_t i = 0; i < lm_final.data.size(); ++i) {
        CHECK(cache.fused.data[i] == doctest::Approx(lm_final.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("attention and MLM softmax rows sum to one") {
    Model<double> model(tiny_config(100), 13);
    MaskedSentence ms = tiny_sentence(100);
    auto cache = model.forward(ms.input_ids);
    for (const auto& block : cache.base) {
        const int64_t s = static_cast<int64_t>(ms.input_ids.size());
        for (int64_t r = 0; r < block.probs.shape[0] * s; ++r) {
            const double* row = block.probs.data.data() + r * s;
            double sum = 0.0;
            for (int64_t j = 0; j < s; ++j) sum += row[j];
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
    auto res = model.mlm_loss(ms);
    for (int64_t r = 0; r < res.probs.rows(); ++r) {
        double sum = 0.0;
        for (int64_t j = 0; j < res.probs.cols(); ++j) sum += res.probs.at(r, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("mlm_loss analytic values") {
    Model<double> model(tiny_config(100), 17);
    MaskedSentence ms = tiny_sentence(100);
    SUBCASE("uniform logits give ln(vocab)") {
        model.param("mlm.out.w").value.zero();
        model.param("mlm.out.b").value.zero();
        auto res = model.mlm_loss(ms);
        CHECK(res.loss == doctest::Approx(std::log(100.0)).epsilon(1e-12));
    }
    SUBCASE("large-margin correct logits drive the loss to zero") {
        model.param("mlm.out.w").value.zero();
        model.param("mlm.out.b").value.zero();
        MaskedSentence one = ms;
        one.labels.assign(one.labels.size(), kNoLabel);
        one.labels[2] = 8;
        one.labels[5] = 8;  // single favored token
        model.param("mlm.out.b").value.data[8] = 50.0;
        auto res = model.mlm_loss(one);
        CHECK(res.loss < 1e-9);
    }
    SUBCASE("no labels is a degenerate batch") {
        MaskedSentence empty = ms;
        empty.labels.assign(empty.labels.size(), kNoLabel);
        CHECK_THROWS_AS(model.mlm_loss(empty), DegenerateInputError);
    }
}

TEST_CASE("analytic gradients match central differences on the MLM path") {
    Model<double> model(tiny_config(40), 19);
    MaskedSentence ms = tiny_sentence(40);
    Rng rng(23);
    auto loss = [&]() { return model.mlm_loss(ms, false).loss; };
    auto grad = [&]() { model.mlm_loss(ms, true); };
    GradCheckStats stats = grad_check(model, loss, grad, rng);
    CHECK(stats.checked > 200);
    CHECK(stats.max_rel < 1e-4);
    MESSAGE("mlm grad check: ", stats.checked, " coords, max rel err ", stats.max_rel);
}

TEST_CASE("analytic gradients match central differences on the QA path") {
    Model<double> model(tiny_config(40), 29);
    std::vector<std::vector<int32_t>> cands = {
        {0, 6, 7, 8, 1, 9, 1}, {0, 6, 7, 8, 1, 10, 1}, {0, 6, 7, 8, 1, 11, 1}};
    std::vector<uint8_t> gold = {0, 1, 0};
    Rng rng(31);
    for (bool multi : {false, true}) {
        auto loss = [&]() { return model.qa_loss(cands, gold, multi).loss; };
        auto grad = [&]() { model.qa_loss(cands, gold, multi, true); };
        GradCheckStats stats = grad_check(model, loss, grad, rng, 8);
        CHECK(stats.max_rel < 1e-4);
    }
}

TEST_CASE("gradients of the ablated (no-adapter) model are exact too") {
    Model<double> model(tiny_config(40, /*adapter=*/false), 37);
    MaskedSentence ms = tiny_sentence(40);
    Rng rng(41);
    auto loss = [&]() { return model.mlm_loss(ms, false).loss; };
    auto grad = [&]() { model.mlm_loss(ms, true); };
    GradCheckStats stats = grad_check(model, loss, grad, rng, 10);
    CHECK(stats.max_rel < 1e-4);
}

TEST_CASE("frozen parameters receive no gradient") {
    Model<double> model(tiny_config(40), 43);
    model.set_trainable(Role::BaseLm, false);
    MaskedSentence ms = tiny_sentence(40);
    model.zero_grads();
    model.mlm_loss(ms, true);
    bool adapter_has_grad = false;
    for (const Parameter<double>& p : model.params()) {
        if (p.role == Role::BaseLm) {
            for (double g : p.grad.data) CHECK(g == 0.0);
        }
        if (p.role == Role::Adapter) {
            for (double g : p.grad.data) adapter_has_grad = adapter_has_grad || g != 0.0;
        }
    }
    CHECK(adapter_has_grad);
}

TEST_CASE("scaling the loss scales every gradient linearly") {
    Model<double> model(tiny_config(40), 47);
    MaskedSentence ms = tiny_sentence(40);
    model.zero_grads();
    model.mlm_loss(ms, true, 1.0);
    std::vector<std::vector<double>> grads1;
    for (const Parameter<double>& p : model.params()) grads1.push_back(p.grad.data);
    model.zero_grads();
    model.mlm_loss(ms, true, 2.0);
    size_t k = 0;
    for (const Parameter<double>& p : model.params()) {
        const auto& g1 = grads1[k++];
        for (size_t i = 0; i < g1.size(); ++i) {
            CHECK(p.grad.data[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("learning rate schedule hits the documented points") {
    CHECK(lr_at_step(5, 100, 5e-4) == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(lr_at_step(10, 100, 5e-4) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at_step(100, 100, 5e-4) == doctest::Approx(0.0));
    CHECK(lr_at_step(55, 100, 5e-4) == doctest::Approx(5e-4 * 45.0 / 90.0).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at_step(101, 100, 5e-4), ScheduleError);
    CHECK_THROWS_AS(lr_at_step(0, 100, 5e-4), ScheduleError);
}

TEST_CASE("optimizer updates trainable groups and leaves frozen ones bit-identical") {
    Model<float> model(tiny_config(40), 53);
    model.set_trainable(Role::BaseLm, false);
    std::vector<std::vector<float>> base_before;
    for (const Parameter<float>& p : model.params()) {
        if (p.role == Role::BaseLm) base_before.push_back(p.value.data);
    }
    MaskedSentence ms = tiny_sentence(40);
    AdamW<float> opt({});
    for (int step = 1; step <= 20; ++step) {
        model.zero_grads();
        model.mlm_loss(ms, true);
        opt.step(model, step, 20);
    }
    size_t k = 0;
    bool adapter_changed = false;
    Model<float> fresh(tiny_config(40), 53);
    for (size_t i = 0; i < model.params().size(); ++i) {
        const Parameter<float>& p = model.params()[i];
        if (p.role == Role::BaseLm) {
            const auto& before = base_before[k++];
            CHECK(std::memcmp(p.value.data.data(), before.data(),
                              before.size() * sizeof(float)) == 0);
        }
        if (p.role == Role::Adapter) {
            adapter_changed =
                adapter_changed || p.value.data != fresh.params()[i].value.data;
        }
    }
    CHECK(adapter_changed);
}

TEST_CASE("a ten-example set can be overfit below 0.05") {
    EncoderConfig cfg = tiny_config(60);
    cfg.dim = 32;
    cfg.heads = 4;
    cfg.ffn_dim = 64;
    Model<float> model(cfg, 59);
    Rng data_rng(61);
    std::vector<MaskedSentence> set;
    for (int i = 0; i < 10; ++i) {
        MaskedSentence ms;
        const int len = 6 + static_cast<int>(data_rng.below(4));
        ms.input_ids.push_back(Vocabulary::kCls);
        for (int p = 0; p < len; ++p) {
            ms.input_ids.push_back(5 + static_cast<int32_t>(data_rng.below(55)));
        }
        ms.input_ids.push_back(Vocabulary::kSep);
        ms.clean_ids = ms.input_ids;
        ms.labels.assign(ms.input_ids.size(), kNoLabel);
        const size_t pos = 1 + data_rng.below(len);
        ms.labels[pos] = ms.input_ids[pos];
        ms.input_ids[pos] = Vocabulary::kMask;
        set.push_back(std::move(ms));
    }
    AdamW<float> opt({.peak_lr = 2e-3});
    const int total = 300;
    std::vector<double> losses;
    for (int step = 1; step <= total; ++step) {
        model.zero_grads();
        double loss = 0.0;
        for (const MaskedSentence& ms : set) {
            loss += model.mlm_loss(ms, true, 1.0 / set.size()).loss;
        }
        losses.push_back(loss / set.size());
        opt.step(model, step, total);
    }
    // quarter-window means decrease monotonically and the end is memorized
    double q[4] = {0, 0, 0, 0};
    for (int i = 0; i < total; ++i) q[i / (total / 4)] += losses[i];
    for (int i = 0; i < 3; ++i) CHECK(q[i] > q[i + 1]);
    double tail = 0.0;
    for (int i = total - 10; i < total; ++i) tail += losses[i];
    CHECK(tail / 10.0 < 0.05);
}

TEST_CASE("checkpoints round trip bit-exactly") {
    TempDir dir("ckpt");
    Model<float> model(tiny_config(48), 67);
    CheckpointMeta meta;
    meta.step = 123;
    meta.lesson = 3;
    meta.variant = "cr13";
    meta.label = "L13";
    meta.seed = 67;
    save_checkpoint(model, dir.file("m"), meta);
    CheckpointMeta back;
    Model<float> loaded = load_checkpoint<float>(dir.file("m"), &back);
    CHECK(back.variant == "cr13");
    CHECK(back.label == "L13");
    CHECK(back.step == 123);
    REQUIRE(loaded.params().size() == model.params().size());
    for (size_t i = 0; i < model.params().size(); ++i) {
        const auto& a = model.params()[i].value.data;
        const auto& b = loaded.params()[i].value.data;
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("checkpoint with an altered manifest shape is rejected by name") {
    TempDir dir("ckpt_bad");
    Model<float> model(tiny_config(48), 71);
    save_checkpoint(model, dir.file("m"), {});
    // corrupt: swap the declared vocab so embedding shapes disagree
    std::ifstream in(dir.file("m") + "/manifest.json");
    std::string manifest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    size_t pos = manifest.find("\"vocab_size\": 48");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 16, "\"vocab_size\": 52");
    write_file(dir.file("m") + "/manifest.json", manifest);
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(dir.file("m")),
                         doctest::Contains("base.embed.token"), IntegrityError);
}

TEST_CASE("training-mode dropout is deterministic given the rng seed") {
    EncoderConfig cfg = tiny_config(40);
    cfg.dropout = 0.1;
    Model<float> model(cfg, 73);
    MaskedSentence ms = tiny_sentence(40);
    Rng r1(5), r2(5), r3(6);
    const double a = model.mlm_loss(ms, false, 1.0, true, &r1).loss;
    const double b = model.mlm_loss(ms, false, 1.0, true, &r2).loss;
    const double c = model.mlm_loss(ms, false, 1.0, true, &r3).loss;
    CHECK(a == b);
    CHECK(a != c);  // different mask draw
    CHECK(model.mlm_loss(ms, false).loss == model.mlm_loss(ms, false).loss);
}
