// Command-line driver: synthesize a knowledge graph, compile it into
// curriculum pretraining corpora, pretrain the adapter-equipped encoder,
// fine-tune on cloze QA and evaluate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kglm/checkpoint.hpp"
#include "kglm/curriculum.hpp"
#include "kglm/errors.hpp"
#include "kglm/kg.hpp"
#include "kglm/plot.hpp"
#include "kglm/qa.hpp"
#include "kglm/train.hpp"

namespace fs = std::filesystem;
using namespace kglm;

namespace {

struct CommonArgs {
    std::string config_path;
    RunConfig config;

    void load() {
        if (!config_path.empty()) config = RunConfig::load(config_path);
    }
};

KnowledgeGraph load_kg_dir(const std::string& dir) {
    return load_kg((fs::path(dir) / "triples.tsv").string(),
                   (fs::path(dir) / "names.tsv").string());
}

int cmd_build_kg(const std::string& out, const SynthKgOptions& opt) {
    KnowledgeGraph kg = synth_kg(opt);
    fs::create_directories(out);
    save_kg(kg, (fs::path(out) / "triples.tsv").string(),
            (fs::path(out) / "names.tsv").string());
    std::printf("wrote %zu triples, %zu entities, %zu relations to %s\n", kg.size(),
                kg.entities().size(), kg.relations().size(), out.c_str());
    return 0;
}

int cmd_gen_corpus(const std::string& kg_dir, const std::string& out, const std::string& lesson,
                   const std::string& variant, uint64_t seed, int epochs, CommonArgs& common) {
    common.load();
    KnowledgeGraph kg = load_kg_dir(kg_dir);
    Vocabulary vocab =
        vocab_from_kg(kg, common.config.vocab_max_size, common.config.vocab_min_freq);
    fs::create_directories(out);
    vocab.save((fs::path(out) / "vocab.txt").string());

    CurriculumSchedule schedule =
        common.config.schedule(parse_variant(variant), kg.size());
    CorpusStream stream(kg, schedule, vocab, Strategy::concat(), seed);
    for (const LessonSpec& spec : schedule.lessons) {
        if (lesson != "all" && lesson != std::to_string(spec.lesson)) continue;
        const std::string path =
            (fs::path(out) / ("lesson" + std::to_string(spec.lesson) + ".jsonl")).string();
        std::ofstream f(path);
        if (!f) throw Error("cannot write '" + path + "'");
        size_t written = 0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            LessonStream ls = stream.epoch_stream(spec, epoch);
            for (size_t i = 0; i < ls.size(); ++i) {
                write_corpus_record(f, ls.example(i));
                ++written;
            }
        }
        std::printf("lesson %d: %zu examples -> %s\n", spec.lesson, written, path.c_str());
    }
    return 0;
}

int cmd_pretrain(const std::string& kg_dir, const std::string& vocab_path,
                 const std::string& out, const std::string& variant, uint64_t seed,
                 const std::string& from, bool ablate_adapter, CommonArgs& common) {
    common.load();
    KnowledgeGraph kg = load_kg_dir(kg_dir);
    Vocabulary vocab = Vocabulary::load(vocab_path);

    PretrainConfig pcfg;
    pcfg.epochs_per_lesson = common.config.pretrain_epochs;
    pcfg.batch = common.config.pretrain_batch;
    pcfg.peak_lr = common.config.pretrain_lr;
    pcfg.seed = seed;
    pcfg.checkpoint_dir = out;
    pcfg.freeze_base = !ablate_adapter;

    Model<float> model = [&]() {
        if (!from.empty()) {
            CheckpointMeta meta;
            Model<float> m = load_checkpoint<float>(from, &meta);
            pcfg.start_step = meta.step;
            pcfg.parent = from;
            return m;
        }
        EncoderConfig ecfg = common.config.encoder(static_cast<int>(vocab.size()));
        if (ablate_adapter) ecfg.use_adapter = false;
        return Model<float>(ecfg, seed);
    }();
    if (model.config().vocab_size != static_cast<int>(vocab.size())) {
        throw IntegrityError("checkpoint vocabulary size does not match the vocabulary file");
    }

    CurriculumSchedule schedule = common.config.schedule(parse_variant(variant), kg.size());
    fs::create_directories(out);
    PretrainResult res = pretrain(kg, model, schedule, vocab, pcfg);
    res.log.save_csv((fs::path(out) / "runlog.csv").string());
    for (size_t i = 0; i < res.checkpoint_paths.size(); ++i) {
        std::printf("checkpoint %s -> %s\n", res.checkpoint_labels[i].c_str(),
                    res.checkpoint_paths[i].c_str());
    }
    std::printf("%zu steps logged -> %s\n", res.log.records.size(),
                (fs::path(out) / "runlog.csv").string().c_str());
    return 0;
}

int cmd_finetune(const std::string& from, bool scratch, const std::string& kg_dir,
                 const std::string& vocab_path, const std::string& out, double train_frac,
                 uint64_t seed, std::string qa_train_path, std::string qa_test_path,
                 bool multi_label, CommonArgs& common) {
    common.load();
    Vocabulary vocab = Vocabulary::load(vocab_path);
    fs::create_directories(out);

    std::vector<QAExample> train_set, test_set;
    if (!qa_train_path.empty()) {
        train_set = load_qa_file(qa_train_path);
        if (!qa_test_path.empty()) test_set = load_qa_file(qa_test_path);
    } else {
        if (kg_dir.empty()) throw ConfigError("--kg is required to synthesize QA data");
        KnowledgeGraph kg = load_kg_dir(kg_dir);
        QaBuildOptions qopt;
        qopt.count = common.config.qa_count;
        qopt.holdout_frac = common.config.qa_holdout;
        qopt.multi_label = multi_label;
        Rng rng(derive_seed(seed, /*stream=*/0x7161));  // "qa"
        QaDataset data = build_synthetic_qa(kg, qopt, rng);
        train_set = std::move(data.train);
        test_set = std::move(data.test);
        qa_train_path = (fs::path(out) / "qa_train.jsonl").string();
        qa_test_path = (fs::path(out) / "qa_test.jsonl").string();
        save_qa_file(qa_train_path, train_set);
        save_qa_file(qa_test_path, test_set);
        std::printf("built %zu train / %zu test questions\n", train_set.size(),
                    test_set.size());
    }

    CheckpointMeta parent_meta;
    Model<float> model = [&]() {
        if (scratch) {
            EncoderConfig ecfg = common.config.encoder(static_cast<int>(vocab.size()));
            return Model<float>(ecfg, seed);
        }
        if (from.empty()) throw ConfigError("either --from or --scratch is required");
        return load_checkpoint<float>(from, &parent_meta);
    }();
    if (model.config().vocab_size != static_cast<int>(vocab.size())) {
        throw IntegrityError("model vocabulary size does not match the vocabulary file");
    }

    FinetuneConfig fcfg;
    fcfg.epochs = common.config.finetune_epochs;
    fcfg.batch = common.config.finetune_batch;
    fcfg.peak_lr = common.config.finetune_lr;
    fcfg.seed = seed;
    fcfg.train_frac = train_frac;
    fcfg.multi_label = multi_label;
    RunLog log = finetune(model, train_set, vocab, fcfg);
    log.from_checkpoint = from;
    log.save_csv((fs::path(out) / "runlog.csv").string());

    CheckpointMeta meta;
    meta.step = parent_meta.step + (log.records.empty() ? 0 : log.records.back().step);
    meta.lesson = 0;
    meta.variant = parent_meta.variant;
    meta.label = "finetuned";
    meta.seed = seed;
    meta.parent = from;
    save_checkpoint(model, (fs::path(out) / "model").string(), meta);
    std::printf("fine-tuned model -> %s\n", (fs::path(out) / "model").string().c_str());
    return 0;
}

int cmd_eval(const std::string& from, const std::string& qa_path, const std::string& vocab_path,
             const std::string& out, const std::string& split, bool multi_label) {
    Vocabulary vocab = Vocabulary::load(vocab_path);
    Model<float> model = load_checkpoint<float>(from);
    std::vector<QAExample> all = load_qa_file(qa_path);
    std::vector<QAExample> subset;
    for (QAExample& ex : all) {
        if (split == "all" || ex.difficulty == split) subset.push_back(std::move(ex));
    }
    if (subset.empty()) throw ConfigError("no examples match split '" + split + "'");
    EvalMetrics m = evaluate(model, subset, vocab, multi_label);
    auto kv = m.to_kv();
    if (!out.empty()) save_kv(out, kv);
    for (const auto& [k, v] : kv) std::printf("%s = %.6f\n", k.c_str(), v);
    return 0;
}

int cmd_plot(const std::string& runlog_path, const std::string& eval_path,
             const std::string& out) {
    fs::create_directories(out);
    RunLog log = RunLog::load_csv(runlog_path);
    const std::string loss_path = (fs::path(out) / "loss.svg").string();
    write_loss_svg(log, loss_path);
    std::printf("loss curve -> %s\n", loss_path.c_str());
    if (!eval_path.empty()) {
        const std::string m_path = (fs::path(out) / "metrics.svg").string();
        write_metrics_svg(load_kv(eval_path), m_path);
        std::printf("metric bars -> %s\n", m_path.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-graph curriculum pretraining toolkit"};
    app.require_subcommand(1);

    CommonArgs common;

    // build-kg
    auto* build = app.add_subcommand("build-kg", "generate a synthetic knowledge graph");
    SynthKgOptions kopt;
    std::string build_out;
    build->add_option("--out", build_out, "output directory")->required();
    build->add_option("--entities", kopt.entities, "entity count");
    build->add_option("--relations", kopt.relations, "relation count");
    build->add_option("--triples", kopt.triples, "triple count");
    build->add_option("--chain-density", kopt.chain_density, "chance a head extends a tail");
    build->add_option("--multi-object-frac", kopt.multi_object_frac,
                      "chance of extending an existing (head, relation) bucket");
    build->add_option("--attribute-frac", kopt.attribute_frac, "chance of an attribute tail");
    build->add_option("--seed", kopt.seed, "generator seed");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "compile the graph into lesson corpora");
    std::string gen_kg, gen_out, gen_lesson = "all", gen_variant = "cr";
    uint64_t gen_seed = 1;
    int gen_epochs = 1;
    gen->add_option("--kg", gen_kg, "graph directory")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--lesson", gen_lesson, "all|1|2|3")
        ->check(CLI::IsMember({"all", "1", "2", "3"}));
    gen->add_option("--variant", gen_variant, "cr|cr03|cr13")
        ->check(CLI::IsMember({"cr", "cr03", "cr13"}));
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--epochs", gen_epochs, "epochs to materialize");
    gen->add_option("--config", common.config_path, "configuration file");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "curriculum-pretrain the encoder");
    std::string pre_kg, pre_vocab, pre_out, pre_variant = "cr", pre_from;
    uint64_t pre_seed = 1;
    bool pre_ablate = false;
    pre->add_option("--kg", pre_kg, "graph directory")->required();
    pre->add_option("--vocab", pre_vocab, "vocabulary file")->required();
    pre->add_option("--out", pre_out, "output directory")->required();
    pre->add_option("--variant", pre_variant, "cr|cr03|cr13")
        ->check(CLI::IsMember({"cr", "cr03", "cr13"}));
    pre->add_option("--seed", pre_seed, "run seed");
    pre->add_option("--from", pre_from, "resume from a checkpoint directory");
    pre->add_flag("--ablate-adapter", pre_ablate,
                  "train the base encoder directly, no adapter");
    pre->add_option("--config", common.config_path, "configuration file");

    // finetune
    auto* ft = app.add_subcommand("finetune", "fine-tune on cloze QA");
    std::string ft_from, ft_kg, ft_vocab, ft_out, ft_qa_train, ft_qa_test;
    double ft_frac = 1.0;
    uint64_t ft_seed = 1;
    bool ft_scratch = false, ft_multi = false;
    ft->add_option("--from", ft_from, "pretrained checkpoint directory");
    ft->add_flag("--scratch", ft_scratch, "start from a fresh model");
    ft->add_option("--kg", ft_kg, "graph directory (to synthesize QA data)");
    ft->add_option("--vocab", ft_vocab, "vocabulary file")->required();
    ft->add_option("--out", ft_out, "output directory")->required();
    ft->add_option("--train-frac", ft_frac, "fraction of the training set used");
    ft->add_option("--seed", ft_seed, "run seed");
    ft->add_option("--qa-train", ft_qa_train, "existing QA training file");
    ft->add_option("--qa-test", ft_qa_test, "existing QA test file (copied for eval)");
    ft->add_flag("--multi-label", ft_multi, "sigmoid multi-label objective");
    ft->add_option("--config", common.config_path, "configuration file");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model");
    std::string ev_from, ev_qa, ev_vocab, ev_out, ev_split = "all";
    bool ev_multi = false;
    ev->add_option("--from", ev_from, "fine-tuned checkpoint directory")->required();
    ev->add_option("--qa", ev_qa, "QA dataset file")->required();
    ev->add_option("--vocab", ev_vocab, "vocabulary file")->required();
    ev->add_option("--out", ev_out, "metrics output file");
    ev->add_option("--split", ev_split, "all|easy|hard")
        ->check(CLI::IsMember({"all", "easy", "hard"}));
    ev->add_flag("--multi-label", ev_multi, "report F1/EM under the 0.5 threshold");

    // plot
    auto* pl = app.add_subcommand("plot", "render SVG reports from run artifacts");
    std::string pl_runlog, pl_eval, pl_out;
    pl->add_option("--runlog", pl_runlog, "run log CSV")->required();
    pl->add_option("--eval", pl_eval, "metrics key-value file");
    pl->add_option("--out", pl_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) return cmd_build_kg(build_out, kopt);
        if (*gen) {
            return cmd_gen_corpus(gen_kg, gen_out, gen_lesson, gen_variant, gen_seed, gen_epochs,
                                  common);
        }
        if (*pre) {
            return cmd_pretrain(pre_kg, pre_vocab, pre_out, pre_variant, pre_seed, pre_from,
                                pre_ablate, common);
        }
        if (*ft) {
            return cmd_finetune(ft_from, ft_scratch, ft_kg, ft_vocab, ft_out, ft_frac, ft_seed,
                                ft_qa_train, ft_qa_test, ft_multi, common);
        }
        if (*ev) return cmd_eval(ev_from, ev_qa, ev_vocab, ev_out, ev_split, ev_multi);
        if (*pl) return cmd_plot(pl_runlog, pl_eval, pl_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
