#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kglm/injection.hpp"
#include "kglm/nn.hpp"
#include "kglm/rng.hpp"
#include "kglm/tensor.hpp"

namespace kglm {

enum class Role : uint8_t { BaseLm, Adapter, MlmHead, QaHead };

const char* role_name(Role r);

struct EncoderConfig {
    int layers = 4;
    int dim = 64;
    int heads = 4;
    int ffn_dim = 256;
    int max_positions = 128;
    int vocab_size = 0;
    // Adapter stack: same layer count as the base, hidden size ceil(dim/2),
    // merged with the base output through a linear map. use_adapter = false
    // drops the stack and trains the base directly (ablation mode).
    bool use_adapter = true;
    double dropout = 0.1;

    int adapter_hidden() const { return (dim + 1) / 2; }
    int adapter_ffn() const { return 4 * adapter_hidden(); }
    int adapter_heads() const;
    void validate() const;
};

template <typename T>
struct Parameter {
    std::string name;
    Role role = Role::BaseLm;
    bool trainable = true;
    Tensor<T> value;
    Tensor<T> grad;
    // AdamW state
    Tensor<T> m;
    Tensor<T> v;
};

template <typename T>
struct BlockCache {
    Tensor<T> x, q, k, v, probs, ctx, attn_out, res1, y, h1, a, ffn_out, res2, z;
    nn::LayerNormCache<T> ln1, ln2;
    std::vector<uint8_t> drop1, drop2;
};

template <typename T>
struct ForwardCache {
    std::vector<int32_t> ids;
    bool train = false;
    Tensor<T> emb_sum;
    nn::LayerNormCache<T> emb_ln;
    std::vector<uint8_t> emb_drop;
    std::vector<Tensor<T>> states;  // layers + 1 entries, [0] = embedding output
    std::vector<BlockCache<T>> base;
    std::vector<Tensor<T>> proj_out;  // adapter, per layer
    std::vector<Tensor<T>> a_in;
    std::vector<BlockCache<T>> ad;
    std::vector<Tensor<T>> h;  // adapter hiddens, h[0] = zeros
    Tensor<T> concat;
    Tensor<T> fused;

    const Tensor<T>& lm_final() const { return states.back(); }
};

template <typename T>
struct MlmResult {
    double loss = 0.0;
    std::vector<size_t> positions;  // labeled positions, row order of logits
    Tensor<T> logits;               // (labeled, vocab) softmax-ready scores
    Tensor<T> probs;                // softmax rows (kept for tests)
};

struct QaResult {
    double loss = 0.0;
    std::vector<double> scores;  // one per candidate
};

// Transformer encoder with a per-layer adapter stack, an MLM head and a
// scalar scoring head. Manual forward/backward; gradients accumulate into
// Parameter::grad until zero_grads().
template <typename T>
class Model {
public:
    Model(EncoderConfig cfg, uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }
    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }
    Parameter<T>& param(const std::string& name);
    const Parameter<T>* find_param(const std::string& name) const;

    void set_trainable(Role role, bool trainable);
    void zero_grads();

    // Forward through base and adapter. train enables dropout (rng required).
    ForwardCache<T> forward(const std::vector<int32_t>& ids, bool train = false,
                            Rng* dropout_rng = nullptr) const;

    // All layer states of the base encoder (embedding output first).
    std::vector<Tensor<T>> lm_forward(const std::vector<int32_t>& ids) const;
    // Fused knowledge-enhanced representation (eval mode).
    Tensor<T> ka_forward(const std::vector<int32_t>& ids) const;

    // Mean cross entropy over labeled positions of the masked sentence.
    // with_grad accumulates parameter gradients scaled by grad_scale.
    MlmResult<T> mlm_loss(const MaskedSentence& ms, bool with_grad = false,
                          double grad_scale = 1.0, bool train = false,
                          Rng* dropout_rng = nullptr);

    // Scores one candidate sequence: scoring head on the fused [CLS] state.
    // qa_loss runs all candidates, then softmax cross entropy over candidates
    // (single-label) or per-candidate sigmoid BCE (multi_label).
    QaResult qa_loss(const std::vector<std::vector<int32_t>>& candidates,
                     const std::vector<uint8_t>& gold, bool multi_label, bool with_grad = false,
                     double grad_scale = 1.0, bool train = false, Rng* dropout_rng = nullptr);
    std::vector<double> qa_scores(const std::vector<std::vector<int32_t>>& candidates) const;

    // Propagate d(fused) back through adapter, base and embeddings.
    void backward_from_fused(const ForwardCache<T>& cache, Tensor<T>& dfused);

private:
    struct BlockIdx {
        int wq, bq, wk, bk, wv, bv, wo, bo, ln1g, ln1b, w1, b1, w2, b2, ln2g, ln2b;
    };

    int add_param(const std::string& name, Role role, std::vector<int64_t> shape);
    BlockIdx add_block(const std::string& prefix, Role role, int dim, int ffn);
    void init_weights(uint64_t seed);

    Tensor<T>& val(int idx) { return params_[idx].value; }
    const Tensor<T>& val(int idx) const { return params_[idx].value; }
    // grad pointer, null when the owning parameter is frozen
    Tensor<T>* grad_of(int idx) {
        return params_[idx].trainable ? &params_[idx].grad : nullptr;
    }

    void block_forward(const BlockIdx& b, int heads, const Tensor<T>& x, BlockCache<T>& cache,
                       bool train, Rng* rng) const;
    void block_backward(const BlockIdx& b, int heads, const BlockCache<T>& cache,
                        Tensor<T>& dz, Tensor<T>& dx);
    void apply_dropout(Tensor<T>& t, std::vector<uint8_t>& mask, bool train, Rng* rng) const;
    void dropout_backward(Tensor<T>& dt, const std::vector<uint8_t>& mask) const;

    EncoderConfig cfg_;
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, int> by_name_;

    int tok_emb_ = -1, pos_emb_ = -1, emb_ln_g_ = -1, emb_ln_b_ = -1;
    std::vector<BlockIdx> base_blocks_;
    std::vector<int> proj_w_, proj_b_;
    std::vector<BlockIdx> adapter_blocks_;
    int merge_w_ = -1, merge_b_ = -1;
    int mlm_dense_w_ = -1, mlm_dense_b_ = -1, mlm_ln_g_ = -1, mlm_ln_b_ = -1, mlm_out_w_ = -1,
        mlm_out_b_ = -1;
    int qa_w_ = -1, qa_b_ = -1;
};

// Linear warmup over the first tenth of the run, then linear decay to zero.
// step runs 1..total_steps. Throws ScheduleError outside that range.
double lr_at_step(int64_t step, int64_t total_steps, double peak);

struct OptimizerConfig {
    double peak_lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam over the trainable parameters. Decay skips
// biases and norm/gain vectors (1-D tensors).
template <typename T>
class AdamW {
public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }
    int64_t steps_taken() const { return t_; }

    // step_index runs 1..total_steps and drives the schedule.
    void step(Model<T>& model, int64_t step_index, int64_t total_steps);
    // Clears Adam moments; used at lesson boundaries where the schedule restarts.
    void reset(Model<T>& model);

private:
    OptimizerConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace kglm
