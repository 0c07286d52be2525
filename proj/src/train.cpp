#include "kglm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kglm/errors.hpp"

namespace kglm {

void RunLog::append(int64_t step, int lesson, double loss, double lr) {
    if (!records.empty() && step <= records.back().step) {
        throw IntegrityError("run log steps must increase strictly");
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite loss in run log");
    records.push_back({step, lesson, loss, lr});
}

void RunLog::save_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    f << "step,lesson,loss,lr\n";
    for (const RunLogRecord& r : records) {
        f << r.step << ',' << r.lesson << ',' << r.loss << ',' << r.lr << '\n';
    }
}

RunLog RunLog::load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line != "step,lesson,loss,lr") {
        throw ParseError(path + ": missing run log header");
    }
    RunLog log;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        RunLogRecord r;
        char c1, c2, c3;
        std::istringstream ss(line);
        if (!(ss >> r.step >> c1 >> r.lesson >> c2 >> r.loss >> c3 >> r.lr) || c1 != ',' ||
            c2 != ',' || c3 != ',') {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed record");
        }
        log.append(r.step, r.lesson, r.loss, r.lr);
    }
    return log;
}

PretrainResult pretrain(const KnowledgeGraph& kg, Model<float>& model,
                        const CurriculumSchedule& schedule, const Vocabulary& vocab,
                        const PretrainConfig& cfg) {
    schedule.validate();
    if (cfg.batch < 1 || cfg.epochs_per_lesson < 1) {
        throw ConfigError("batch size and epochs must be positive");
    }
    model.set_trainable(Role::BaseLm, !cfg.freeze_base);
    model.set_trainable(Role::Adapter, true);
    model.set_trainable(Role::MlmHead, true);
    model.set_trainable(Role::QaHead, false);

    PretrainResult result;
    result.log.from_checkpoint = cfg.parent;
    const std::vector<std::string> labels = variant_checkpoint_labels(schedule.variant);
    CorpusStream stream(kg, schedule, vocab, cfg.strategy, cfg.seed);
    Rng dropout_rng(derive_seed(cfg.seed, /*stream=*/0x64726f70));  // "drop"

    int64_t global_step = cfg.start_step;
    OptimizerConfig ocfg;
    ocfg.peak_lr = cfg.peak_lr;
    ocfg.weight_decay = cfg.weight_decay;
    ocfg.beta1 = cfg.adam_beta1;
    ocfg.beta2 = cfg.adam_beta2;
    AdamW<float> opt(ocfg);

    for (size_t li = 0; li < schedule.lessons.size(); ++li) {
        const LessonSpec& spec = schedule.lessons[li];
        opt.reset(model);  // fresh moments and schedule per lesson
        LessonStream probe = stream.epoch_stream(spec, 0);
        const int64_t steps_per_epoch =
            (static_cast<int64_t>(probe.size()) + cfg.batch - 1) / cfg.batch;
        const int64_t total_steps = steps_per_epoch * cfg.epochs_per_lesson;
        int64_t lesson_step = 0;

        for (int epoch = 0; epoch < cfg.epochs_per_lesson; ++epoch) {
            LessonStream ls = stream.epoch_stream(spec, epoch);
            const size_t n = ls.size();
            for (size_t base = 0; base < n; base += static_cast<size_t>(cfg.batch)) {
                const size_t end = std::min(n, base + static_cast<size_t>(cfg.batch));
                std::vector<CorpusExample> batch;
                for (size_t i = base; i < end; ++i) {
                    CorpusExample ex = ls.example(i);
                    if (ex.sentence.label_count() > 0) batch.push_back(std::move(ex));
                }
                if (batch.empty()) continue;  // nothing to learn from this slice
                ++lesson_step;
                model.zero_grads();
                double loss = 0.0;
                const double scale = 1.0 / static_cast<double>(batch.size());
                for (const CorpusExample& ex : batch) {
                    loss += model.mlm_loss(ex.sentence, true, scale, true, &dropout_rng).loss;
                }
                loss *= scale;
                opt.step(model, lesson_step, total_steps);
                ++global_step;
                result.log.append(global_step, spec.lesson, loss,
                                  lr_at_step(lesson_step, total_steps, cfg.peak_lr));
            }
        }

        const std::string label = li < labels.size() ? labels[li] : "L" + std::to_string(li);
        result.checkpoint_labels.push_back(label);
        if (!cfg.checkpoint_dir.empty()) {
            CheckpointMeta meta;
            meta.step = global_step;
            meta.lesson = spec.lesson;
            meta.variant = variant_name(schedule.variant);
            meta.label = label;
            meta.seed = cfg.seed;
            meta.parent = cfg.parent;
            const std::string path =
                (std::filesystem::path(cfg.checkpoint_dir) / label).string();
            save_checkpoint(model, path, meta);
            result.checkpoint_paths.push_back(path);
        }
    }
    return result;
}

std::vector<int32_t> encode_pair(const Vocabulary& vocab, const std::string& question,
                                 const std::string& candidate, int max_positions) {
    std::vector<int32_t> ids;
    ids.push_back(Vocabulary::kCls);
    TokenizedText q = tokenize(vocab, question);
    ids.insert(ids.end(), q.tokens.begin(), q.tokens.end());
    ids.push_back(Vocabulary::kSep);
    TokenizedText c = tokenize(vocab, candidate);
    ids.insert(ids.end(), c.tokens.begin(), c.tokens.end());
    if (static_cast<int>(ids.size()) > max_positions - 1) {
        ids.resize(static_cast<size_t>(max_positions - 1));
    }
    ids.push_back(Vocabulary::kSep);
    return ids;
}

namespace {

std::vector<uint8_t> gold_mask(const QAExample& ex) {
    std::set<std::string> gold(ex.gold.begin(), ex.gold.end());
    std::vector<uint8_t> mask(ex.candidates.size(), 0);
    for (size_t i = 0; i < ex.candidates.size(); ++i) {
        mask[i] = gold.count(ex.candidates[i]) ? 1 : 0;
    }
    return mask;
}

}  // namespace

RunLog finetune(Model<float>& model, const std::vector<QAExample>& train_set,
                const Vocabulary& vocab, const FinetuneConfig& cfg) {
    if (train_set.empty()) throw ConfigError("fine-tuning needs a non-empty training set");
    if (cfg.train_frac <= 0.0 || cfg.train_frac > 1.0) {
        throw ConfigError("train_frac must lie in (0, 1]");
    }
    model.set_trainable(Role::BaseLm, true);
    model.set_trainable(Role::Adapter, true);
    model.set_trainable(Role::QaHead, true);
    model.set_trainable(Role::MlmHead, false);  // retained but unused here

    Rng shuffle_rng(derive_seed(cfg.seed, /*stream=*/0x66747368));  // "ftsh"
    Rng dropout_rng(derive_seed(cfg.seed, 0x66746472));             // "ftdr"
    std::vector<size_t> subset = shuffle_rng.permutation(train_set.size());
    const size_t used = std::max<size_t>(
        1, static_cast<size_t>(std::llround(cfg.train_frac * static_cast<double>(train_set.size()))));
    subset.resize(used);

    const int max_pos = model.config().max_positions;
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(used) + cfg.batch - 1) / cfg.batch;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    OptimizerConfig ocfg;
    ocfg.peak_lr = cfg.peak_lr;
    ocfg.weight_decay = cfg.weight_decay;
    ocfg.beta1 = cfg.adam_beta1;
    ocfg.beta2 = cfg.adam_beta2;
    AdamW<float> opt(ocfg);
    RunLog log;
    int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(subset);
        for (size_t base = 0; base < used; base += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(used, base + static_cast<size_t>(cfg.batch));
            model.zero_grads();
            double loss = 0.0;
            const double scale = 1.0 / static_cast<double>(end - base);
            for (size_t i = base; i < end; ++i) {
                const QAExample& ex = train_set[subset[i]];
                std::vector<std::vector<int32_t>> cands;
                cands.reserve(ex.candidates.size());
                for (const std::string& c : ex.candidates) {
                    cands.push_back(encode_pair(vocab, ex.question, c, max_pos));
                }
                loss += model
                            .qa_loss(cands, gold_mask(ex), cfg.multi_label, true, scale, true,
                                     &dropout_rng)
                            .loss;
            }
            loss *= scale;
            ++step;
            opt.step(model, step, total_steps);
            log.append(step, 0, loss, lr_at_step(step, total_steps, cfg.peak_lr));
        }
    }
    return log;
}

EvalMetrics evaluate(const Model<float>& model, const std::vector<QAExample>& test_set,
                     const Vocabulary& vocab, bool multi_label) {
    EvalMetrics m;
    m.count = test_set.size();
    const int max_pos = model.config().max_positions;
    std::map<std::string, double> diff_acc_sum;
    std::map<std::string, size_t> diff_count;
    double acc_sum = 0.0, f1_sum = 0.0, em_sum = 0.0;
    for (const QAExample& ex : test_set) {
        std::vector<std::vector<int32_t>> cands;
        cands.reserve(ex.candidates.size());
        for (const std::string& c : ex.candidates) {
            cands.push_back(encode_pair(vocab, ex.question, c, max_pos));
        }
        const std::vector<double> scores = model.qa_scores(cands);
        const std::set<std::string> gold(ex.gold.begin(), ex.gold.end());

        size_t top = 0;
        for (size_t i = 1; i < scores.size(); ++i) {
            if (scores[i] > scores[top]) top = i;
        }
        const double acc = gold.count(ex.candidates[top]) ? 1.0 : 0.0;
        acc_sum += acc;
        diff_acc_sum[ex.difficulty] += acc;
        diff_count[ex.difficulty] += 1;

        if (multi_label) {
            std::set<std::string> pred;
            for (size_t i = 0; i < scores.size(); ++i) {
                if (scores[i] > 0.0) pred.insert(ex.candidates[i]);  // sigmoid > 0.5
            }
            size_t inter = 0;
            for (const std::string& p : pred) inter += gold.count(p);
            const double precision = pred.empty() ? 0.0 : double(inter) / double(pred.size());
            const double recall = gold.empty() ? 0.0 : double(inter) / double(gold.size());
            const double f1 = (precision + recall) > 0.0
                                  ? 2.0 * precision * recall / (precision + recall)
                                  : 0.0;
            f1_sum += f1;
            em_sum += (pred == gold) ? 1.0 : 0.0;
        }
    }
    if (m.count) {
        acc_sum /= static_cast<double>(m.count);
        f1_sum /= static_cast<double>(m.count);
        em_sum /= static_cast<double>(m.count);
    }
    m.acc = acc_sum;
    m.f1 = f1_sum;
    m.em = em_sum;
    for (const auto& [k, v] : diff_acc_sum) {
        m.by_difficulty_acc[k] = v / static_cast<double>(diff_count[k]);
    }
    m.by_difficulty_count = diff_count;
    return m;
}

std::map<std::string, double> EvalMetrics::to_kv() const {
    std::map<std::string, double> kv;
    kv["count"] = static_cast<double>(count);
    kv["acc"] = acc;
    kv["f1"] = f1;
    kv["em"] = em;
    for (const auto& [k, v] : by_difficulty_acc) kv["acc_" + k] = v;
    for (const auto& [k, v] : by_difficulty_count) {
        kv["count_" + k] = static_cast<double>(v);
    }
    return kv;
}

void save_kv(const std::string& path, const std::map<std::string, double>& kv) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    f.precision(10);
    for (const auto& [k, v] : kv) f << k << " = " << v << '\n';
}

Vocabulary vocab_from_kg(const KnowledgeGraph& kg, size_t max_size, size_t min_freq) {
    std::string text;
    for (const std::string& id : kg.names().insertion_order()) {
        for (const std::string& n : kg.names().names(id)) text += n + "\n";
    }
    for (const Triple& t : kg.triples()) {
        if (!t.tail_is_entity) text += t.tail_value.rendering + "\n";
    }
    text += "the of is and [?]\n";
    return build_vocab(text, max_size, min_freq);
}

std::map<std::string, double> load_kv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    std::map<std::string, double> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path + ": malformed line '" + line + "'");
        std::string key = line.substr(0, eq);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        kv[key] = std::stod(line.substr(eq + 1));
    }
    return kv;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open config '" + path + "'");
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string key, value;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (blank) continue;
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        key = trim(line.substr(0, eq));
        value = trim(line.substr(eq + 1));
        try {
            if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "model.layers") cfg.model_layers = std::stoi(value);
            else if (key == "model.dim") cfg.model_dim = std::stoi(value);
            else if (key == "model.heads") cfg.model_heads = std::stoi(value);
            else if (key == "model.ffn") cfg.model_ffn = std::stoi(value);
            else if (key == "model.max_positions") cfg.model_max_positions = std::stoi(value);
            else if (key == "model.adapter") cfg.adapter = value == "true" || value == "1";
            else if (key == "model.dropout") cfg.dropout = std::stod(value);
            else if (key == "pretrain.epochs") cfg.pretrain_epochs = std::stoi(value);
            else if (key == "pretrain.batch") cfg.pretrain_batch = std::stoi(value);
            else if (key == "pretrain.lr") cfg.pretrain_lr = std::stod(value);
            else if (key == "mask.lesson2_select_prob") cfg.lesson2_select_prob = std::stod(value);
            else if (key == "mask.lesson13_select_prob") cfg.lesson13_select_prob = std::stod(value);
            else if (key == "corpus.lesson23_count_frac") cfg.lesson23_count_frac = std::stod(value);
            else if (key == "finetune.epochs") cfg.finetune_epochs = std::stoi(value);
            else if (key == "finetune.batch") cfg.finetune_batch = std::stoi(value);
            else if (key == "finetune.lr") cfg.finetune_lr = std::stod(value);
            else if (key == "qa.count") cfg.qa_count = std::stoull(value);
            else if (key == "qa.holdout") cfg.qa_holdout = std::stod(value);
            else if (key == "vocab.max_size") cfg.vocab_max_size = std::stoull(value);
            else if (key == "vocab.min_freq") cfg.vocab_min_freq = std::stoull(value);
            else throw ConfigError("unknown configuration key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    return cfg;
}

EncoderConfig RunConfig::encoder(int vocab_size) const {
    EncoderConfig e;
    e.layers = model_layers;
    e.dim = model_dim;
    e.heads = model_heads;
    e.ffn_dim = model_ffn;
    e.max_positions = model_max_positions;
    e.vocab_size = vocab_size;
    e.use_adapter = adapter;
    e.dropout = dropout;
    return e;
}

CurriculumSchedule RunConfig::schedule(Variant v, size_t triple_count) const {
    CurriculumSchedule s = CurriculumSchedule::make(v, triple_count);
    for (LessonSpec& lesson : s.lessons) {
        if (lesson.lesson == 2) {
            lesson.masking.select_prob = lesson2_select_prob;
        } else {
            lesson.masking.select_prob = lesson13_select_prob;
        }
        if (lesson.lesson >= 2) {
            lesson.examples_per_epoch = static_cast<size_t>(
                std::ceil(lesson23_count_frac * static_cast<double>(triple_count)));
        }
    }
    return s;
}

}  // namespace kglm
