#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kglm/checkpoint.hpp"
#include "kglm/curriculum.hpp"
#include "kglm/model.hpp"
#include "kglm/qa.hpp"

namespace kglm {

struct RunLogRecord {
    int64_t step = 0;
    int lesson = 0;  // 0 for fine-tuning
    double loss = 0.0;
    double lr = 0.0;
};

// Per-step training log. CSV format: header "step,lesson,loss,lr".
struct RunLog {
    std::vector<RunLogRecord> records;
    std::string from_checkpoint;  // lineage: checkpoint this run extended

    void append(int64_t step, int lesson, double loss, double lr);
    void save_csv(const std::string& path) const;
    static RunLog load_csv(const std::string& path);
};

struct PretrainConfig {
    int epochs_per_lesson = 3;
    int batch = 32;
    double peak_lr = 5e-4;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    uint64_t seed = 0;
    Strategy strategy = Strategy::concat();
    // Knowledge pretraining fixes the base encoder; the ablation mode trains
    // it directly (and usually runs without the adapter).
    bool freeze_base = true;
    std::string checkpoint_dir;  // empty: keep checkpoints in memory only
    int64_t start_step = 0;      // resumed runs continue step numbering
    std::string parent;
};

struct PretrainResult {
    RunLog log;
    std::vector<std::string> checkpoint_labels;
    std::vector<std::string> checkpoint_paths;  // empty when not persisted
};

// Runs the schedule's lessons in order. The optimizer and its schedule
// restart at each lesson boundary; a checkpoint is written per boundary.
PretrainResult pretrain(const KnowledgeGraph& kg, Model<float>& model,
                        const CurriculumSchedule& schedule, const Vocabulary& vocab,
                        const PretrainConfig& cfg);

struct FinetuneConfig {
    int epochs = 3;
    int batch = 32;
    double peak_lr = 1e-4;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    uint64_t seed = 0;
    double train_frac = 1.0;  // fraction of the training set used
    bool multi_label = false;
};

// Cross-encodes "[CLS] question [SEP] candidate [SEP]" and trains the scoring
// head with softmax (single-label) or sigmoid (multi-label) loss. Base,
// adapter and scoring head all train; the MLM head stays untouched.
RunLog finetune(Model<float>& model, const std::vector<QAExample>& train_set,
                const Vocabulary& vocab, const FinetuneConfig& cfg);

struct EvalMetrics {
    size_t count = 0;
    double acc = 0.0;
    double f1 = 0.0;  // multi-label mode only
    double em = 0.0;
    std::map<std::string, double> by_difficulty_acc;
    std::map<std::string, size_t> by_difficulty_count;

    std::map<std::string, double> to_kv() const;
};

EvalMetrics evaluate(const Model<float>& model, const std::vector<QAExample>& test_set,
                     const Vocabulary& vocab, bool multi_label = false);

// Token encoding used by fine-tuning and evaluation.
std::vector<int32_t> encode_pair(const Vocabulary& vocab, const std::string& question,
                                 const std::string& candidate, int max_positions);

void save_kv(const std::string& path, const std::map<std::string, double>& kv);
std::map<std::string, double> load_kv(const std::string& path);

// Vocabulary over every name, attribute rendering and the cloze-template
// words, so generated corpora and questions tokenize without [UNK].
Vocabulary vocab_from_kg(const KnowledgeGraph& kg, size_t max_size, size_t min_freq);

// Flat "key = value" configuration file. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 1;
    int model_layers = 4;
    int model_dim = 64;
    int model_heads = 4;
    int model_ffn = 256;
    int model_max_positions = 128;
    bool adapter = true;
    double dropout = 0.1;
    int pretrain_epochs = 3;
    int pretrain_batch = 32;
    double pretrain_lr = 5e-4;
    double lesson2_select_prob = 0.30;
    double lesson13_select_prob = 0.15;
    double lesson23_count_frac = 0.25;
    int finetune_epochs = 3;
    int finetune_batch = 32;
    double finetune_lr = 1e-4;
    size_t qa_count = 2000;
    double qa_holdout = 0.2;
    size_t vocab_max_size = 8192;
    size_t vocab_min_freq = 1;

    static RunConfig load(const std::string& path);
    EncoderConfig encoder(int vocab_size) const;
    CurriculumSchedule schedule(Variant v, size_t triple_count) const;
};

}  // namespace kglm
