#include "kglm/model.hpp"

#include <algorithm>
#include <cmath>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
double logsumexp_row(const T* z, int64_t n) {
    T mx = z[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(z[i] - mx));
    return static_cast<double>(mx) + std::log(sum);
}

}  // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::BaseLm: return "base_lm";
        case Role::Adapter: return "adapter";
        case Role::MlmHead: return "mlm_head";
        case Role::QaHead: return "qa_head";
    }
    return "?";
}

int EncoderConfig::adapter_heads() const {
    // largest head count <= base heads that divides the adapter hidden size
    for (int h = heads; h > 1; --h) {
        if (adapter_hidden() % h == 0) return h;
    }
    return 1;
}

void EncoderConfig::validate() const {
    if (layers < 1) throw ConfigError("encoder needs at least one layer");
    if (dim < 2 || dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
    if (max_positions < 3) throw ConfigError("max_positions too small");
    if (vocab_size < 6) throw ConfigError("vocab_size must cover the special tokens");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

template <typename T>
int Model<T>::add_param(const std::string& name, Role role, std::vector<int64_t> shape) {
    Parameter<T> p;
    p.name = name;
    p.role = role;
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(shape);
    p.m = Tensor<T>(shape);
    p.v = Tensor<T>(std::move(shape));
    params_.push_back(std::move(p));
    int idx = static_cast<int>(params_.size()) - 1;
    if (!by_name_.emplace(name, idx).second) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    return idx;
}

template <typename T>
typename Model<T>::BlockIdx Model<T>::add_block(const std::string& prefix, Role role, int dim,
                                                int ffn) {
    BlockIdx b;
    b.wq = add_param(prefix + ".attn.wq", role, {dim, dim});
    b.bq = add_param(prefix + ".attn.bq", role, {dim});
    b.wk = add_param(prefix + ".attn.wk", role, {dim, dim});
    b.bk = add_param(prefix + ".attn.bk", role, {dim});
    b.wv = add_param(prefix + ".attn.wv", role, {dim, dim});
    b.bv = add_param(prefix + ".attn.bv", role, {dim});
    b.wo = add_param(prefix + ".attn.wo", role, {dim, dim});
    b.bo = add_param(prefix + ".attn.bo", role, {dim});
    b.ln1g = add_param(prefix + ".ln1.g", role, {dim});
    b.ln1b = add_param(prefix + ".ln1.b", role, {dim});
    b.w1 = add_param(prefix + ".ffn.w1", role, {dim, ffn});
    b.b1 = add_param(prefix + ".ffn.b1", role, {ffn});
    b.w2 = add_param(prefix + ".ffn.w2", role, {ffn, dim});
    b.b2 = add_param(prefix + ".ffn.b2", role, {dim});
    b.ln2g = add_param(prefix + ".ln2.g", role, {dim});
    b.ln2b = add_param(prefix + ".ln2.b", role, {dim});
    return b;
}

template <typename T>
void Model<T>::init_weights(uint64_t seed) {
    Rng rng(derive_seed(seed, /*stream=*/0x6d6f64));  // "mod"
    for (Parameter<T>& p : params_) {
        if (p.value.shape.size() >= 2) {
            for (T& v : p.value.data) v = static_cast<T>(rng.normal() * 0.02);
        } else if (p.name.size() >= 2 && p.name.substr(p.name.size() - 2) == ".g") {
            p.value.fill(T(1));
        } else {
            p.value.fill(T(0));
        }
    }
}

template <typename T>
Model<T>::Model(EncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    tok_emb_ = add_param("base.embed.token", Role::BaseLm, {cfg_.vocab_size, cfg_.dim});
    pos_emb_ = add_param("base.embed.position", Role::BaseLm, {cfg_.max_positions, cfg_.dim});
    emb_ln_g_ = add_param("base.embed.ln.g", Role::BaseLm, {cfg_.dim});
    emb_ln_b_ = add_param("base.embed.ln.b", Role::BaseLm, {cfg_.dim});
    for (int l = 0; l < cfg_.layers; ++l) {
        base_blocks_.push_back(
            add_block("base.layer" + std::to_string(l), Role::BaseLm, cfg_.dim, cfg_.ffn_dim));
    }
    if (cfg_.use_adapter) {
        const int hidden = cfg_.adapter_hidden();
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string prefix = "adapter.layer" + std::to_string(l);
            proj_w_.push_back(add_param(prefix + ".proj.w", Role::Adapter, {cfg_.dim, hidden}));
            proj_b_.push_back(add_param(prefix + ".proj.b", Role::Adapter, {hidden}));
            adapter_blocks_.push_back(add_block(prefix, Role::Adapter, hidden, cfg_.adapter_ffn()));
        }
        merge_w_ = add_param("adapter.merge.w", Role::Adapter, {cfg_.dim + hidden, cfg_.dim});
        merge_b_ = add_param("adapter.merge.b", Role::Adapter, {cfg_.dim});
    }
    mlm_dense_w_ = add_param("mlm.dense.w", Role::MlmHead, {cfg_.dim, cfg_.dim});
    mlm_dense_b_ = add_param("mlm.dense.b", Role::MlmHead, {cfg_.dim});
    mlm_ln_g_ = add_param("mlm.ln.g", Role::MlmHead, {cfg_.dim});
    mlm_ln_b_ = add_param("mlm.ln.b", Role::MlmHead, {cfg_.dim});
    mlm_out_w_ = add_param("mlm.out.w", Role::MlmHead, {cfg_.dim, cfg_.vocab_size});
    mlm_out_b_ = add_param("mlm.out.b", Role::MlmHead, {cfg_.vocab_size});
    qa_w_ = add_param("qa.score.w", Role::QaHead, {cfg_.dim, 1});
    qa_b_ = add_param("qa.score.b", Role::QaHead, {1});
    init_weights(seed);
}

template <typename T>
Parameter<T>& Model<T>::param(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw LookupError("no parameter named '" + name + "'");
    return params_[it->second];
}

template <typename T>
const Parameter<T>* Model<T>::find_param(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &params_[it->second];
}

template <typename T>
void Model<T>::set_trainable(Role role, bool trainable) {
    for (Parameter<T>& p : params_) {
        if (p.role == role) p.trainable = trainable;
    }
}

template <typename T>
void Model<T>::zero_grads() {
    for (Parameter<T>& p : params_) p.grad.zero();
}

template <typename T>
void Model<T>::apply_dropout(Tensor<T>& t, std::vector<uint8_t>& mask, bool train,
                             Rng* rng) const {
    mask.clear();
    if (!train || cfg_.dropout <= 0.0) return;
    if (!rng) throw ConfigError("training-mode forward needs a dropout rng");
    mask.resize(t.data.size());
    const T scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
    for (size_t i = 0; i < t.data.size(); ++i) {
        const bool keep = rng->uniform01() >= cfg_.dropout;
        mask[i] = keep;
        t.data[i] = keep ? t.data[i] * scale : T(0);
    }
}

template <typename T>
void Model<T>::dropout_backward(Tensor<T>& dt, const std::vector<uint8_t>& mask) const {
    if (mask.empty()) return;
    const T scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
    for (size_t i = 0; i < dt.data.size(); ++i) {
        dt.data[i] = mask[i] ? dt.data[i] * scale : T(0);
    }
}

template <typename T>
void Model<T>::block_forward(const BlockIdx& b, int heads, const Tensor<T>& x,
                             BlockCache<T>& cache, bool train, Rng* rng) const {
    const int64_t s = x.rows(), d = x.cols();
    const int64_t hd = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    cache.x = x;
    nn::linear(x, val(b.wq), val(b.bq), cache.q);
    nn::linear(x, val(b.wk), val(b.bk), cache.k);
    nn::linear(x, val(b.wv), val(b.bv), cache.v);

    cache.probs = Tensor<T>({heads, s, s});
    cache.ctx = Tensor<T>({s, d});
    for (int h = 0; h < heads; ++h) {
        const int64_t off = h * hd;
        for (int64_t i = 0; i < s; ++i) {
            T* prow = cache.probs.data.data() + (h * s + i) * s;
            const T* qi = cache.q.row(i) + off;
            for (int64_t j = 0; j < s; ++j) {
                const T* kj = cache.k.row(j) + off;
                T acc = T(0);
                for (int64_t c = 0; c < hd; ++c) acc += qi[c] * kj[c];
                prow[j] = acc * scale;
            }
            nn::softmax_row(prow, s);
            T* ci = cache.ctx.row(i) + off;
            for (int64_t j = 0; j < s; ++j) {
                const T p = prow[j];
                const T* vj = cache.v.row(j) + off;
                for (int64_t c = 0; c < hd; ++c) ci[c] += p * vj[c];
            }
        }
    }

    nn::linear(cache.ctx, val(b.wo), val(b.bo), cache.attn_out);
    Tensor<T> attn_dropped = cache.attn_out;
    apply_dropout(attn_dropped, cache.drop1, train, rng);
    cache.res1 = x;
    axpy(cache.res1, attn_dropped);
    nn::layer_norm(cache.res1, val(b.ln1g), val(b.ln1b), cache.y, cache.ln1);

    nn::linear(cache.y, val(b.w1), val(b.b1), cache.h1);
    nn::gelu_forward(cache.h1, cache.a);
    nn::linear(cache.a, val(b.w2), val(b.b2), cache.ffn_out);
    Tensor<T> ffn_dropped = cache.ffn_out;
    apply_dropout(ffn_dropped, cache.drop2, train, rng);
    cache.res2 = cache.y;
    axpy(cache.res2, ffn_dropped);
    nn::layer_norm(cache.res2, val(b.ln2g), val(b.ln2b), cache.z, cache.ln2);
}

template <typename T>
void Model<T>::block_backward(const BlockIdx& b, int heads, const BlockCache<T>& cache,
                              Tensor<T>& dz, Tensor<T>& dx) {
    const int64_t s = cache.x.rows(), d = cache.x.cols();
    const int64_t hd = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    Tensor<T> dres2({s, d});
    nn::layer_norm_backward(cache.ln2, val(b.ln2g), dz, &dres2, grad_of(b.ln2g),
                            grad_of(b.ln2b));
    Tensor<T> dy = dres2;  // residual branch
    Tensor<T> dffn = dres2;
    dropout_backward(dffn, cache.drop2);
    Tensor<T> da({s, cache.a.cols()});
    nn::linear_backward(cache.a, val(b.w2), dffn, &da, grad_of(b.w2), grad_of(b.b2));
    Tensor<T> dh1({s, cache.h1.cols()});
    nn::gelu_backward(cache.h1, da, dh1);
    nn::linear_backward(cache.y, val(b.w1), dh1, &dy, grad_of(b.w1), grad_of(b.b1));

    Tensor<T> dres1({s, d});
    nn::layer_norm_backward(cache.ln1, val(b.ln1g), dy, &dres1, grad_of(b.ln1g),
                            grad_of(b.ln1b));
    axpy(dx, dres1);  // residual branch into the block input
    Tensor<T> dattn = dres1;
    dropout_backward(dattn, cache.drop1);
    Tensor<T> dctx({s, d});
    nn::linear_backward(cache.ctx, val(b.wo), dattn, &dctx, grad_of(b.wo), grad_of(b.bo));

    Tensor<T> dq({s, d}), dk({s, d}), dv({s, d});
    std::vector<T> dprobs(static_cast<size_t>(s));
    for (int h = 0; h < heads; ++h) {
        const int64_t off = h * hd;
        for (int64_t i = 0; i < s; ++i) {
            const T* prow = cache.probs.data.data() + (h * s + i) * s;
            const T* dci = dctx.row(i) + off;
            // dprobs and dv
            for (int64_t j = 0; j < s; ++j) {
                const T* vj = cache.v.row(j) + off;
                T acc = T(0);
                for (int64_t c = 0; c < hd; ++c) acc += dci[c] * vj[c];
                dprobs[static_cast<size_t>(j)] = acc;
            }
            for (int64_t j = 0; j < s; ++j) {
                const T p = prow[j];
                T* dvj = dv.row(j) + off;
                for (int64_t c = 0; c < hd; ++c) dvj[c] += p * dci[c];
            }
            nn::softmax_backward_row(prow, dprobs.data(), s);
            // dscores -> dq, dk
            T* dqi = dq.row(i) + off;
            for (int64_t j = 0; j < s; ++j) {
                const T ds = dprobs[static_cast<size_t>(j)] * scale;
                const T* kj = cache.k.row(j) + off;
                T* dkj = dk.row(j) + off;
                const T* qi = cache.q.row(i) + off;
                for (int64_t c = 0; c < hd; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
    nn::linear_backward(cache.x, val(b.wq), dq, &dx, grad_of(b.wq), grad_of(b.bq));
    nn::linear_backward(cache.x, val(b.wk), dk, &dx, grad_of(b.wk), grad_of(b.bk));
    nn::linear_backward(cache.x, val(b.wv), dv, &dx, grad_of(b.wv), grad_of(b.bv));
}

template <typename T>
ForwardCache<T> Model<T>::forward(const std::vector<int32_t>& ids, bool train,
                                  Rng* dropout_rng) const {
    const int64_t s = static_cast<int64_t>(ids.size());
    if (s == 0) throw ShapeError("empty input sequence");
    if (s > cfg_.max_positions) {
        throw ShapeError("sequence length " + std::to_string(s) + " exceeds max positions " +
                         std::to_string(cfg_.max_positions));
    }
    for (int32_t id : ids) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw ShapeError("token id " + std::to_string(id) + " outside vocabulary");
        }
    }

    ForwardCache<T> cache;
    cache.ids = ids;
    cache.train = train;

    cache.emb_sum = Tensor<T>({s, cfg_.dim});
    const Tensor<T>& tok = val(tok_emb_);
    const Tensor<T>& pos = val(pos_emb_);
    for (int64_t i = 0; i < s; ++i) {
        const T* trow = tok.row(ids[static_cast<size_t>(i)]);
        const T* prow = pos.row(i);
        T* out = cache.emb_sum.row(i);
        for (int64_t j = 0; j < cfg_.dim; ++j) out[j] = trow[j] + prow[j];
    }
    Tensor<T> emb;
    nn::layer_norm(cache.emb_sum, val(emb_ln_g_), val(emb_ln_b_), emb, cache.emb_ln);
    apply_dropout(emb, cache.emb_drop, train, dropout_rng);

    cache.states.reserve(cfg_.layers + 1);
    cache.states.push_back(std::move(emb));
    cache.base.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
        block_forward(base_blocks_[l], cfg_.heads, cache.states.back(), cache.base[l], train,
                      dropout_rng);
        cache.states.push_back(cache.base[l].z);
    }

    if (!cfg_.use_adapter) {
        cache.fused = cache.states.back();
        return cache;
    }

    const int hidden = cfg_.adapter_hidden();
    cache.h.resize(cfg_.layers + 1);
    cache.h[0] = Tensor<T>({s, hidden});
    cache.proj_out.resize(cfg_.layers);
    cache.a_in.resize(cfg_.layers);
    cache.ad.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
        nn::linear(cache.states[l + 1], val(proj_w_[l]), val(proj_b_[l]), cache.proj_out[l]);
        cache.a_in[l] = cache.proj_out[l];
        axpy(cache.a_in[l], cache.h[l]);
        block_forward(adapter_blocks_[l], cfg_.adapter_heads(), cache.a_in[l], cache.ad[l], train,
                      dropout_rng);
        cache.h[l + 1] = cache.ad[l].z;
    }

    cache.concat = Tensor<T>({s, cfg_.dim + hidden});
    const Tensor<T>& lm_final = cache.states.back();
    const Tensor<T>& ad_final = cache.h.back();
    for (int64_t i = 0; i < s; ++i) {
        T* row = cache.concat.row(i);
        const T* a = lm_final.row(i);
        const T* b = ad_final.row(i);
        std::copy(a, a + cfg_.dim, row);
        std::copy(b, b + hidden, row + cfg_.dim);
    }
    nn::linear(cache.concat, val(merge_w_), val(merge_b_), cache.fused);
    return cache;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::lm_forward(const std::vector<int32_t>& ids) const {
    return forward(ids, false, nullptr).states;
}

template <typename T>
Tensor<T> Model<T>::ka_forward(const std::vector<int32_t>& ids) const {
    return forward(ids, false, nullptr).fused;
}

template <typename T>
void Model<T>::backward_from_fused(const ForwardCache<T>& cache, Tensor<T>& dfused) {
    const int64_t s = dfused.rows();
    std::vector<Tensor<T>> dstates(cfg_.layers + 1);
    for (auto& t : dstates) t = Tensor<T>({s, cfg_.dim});

    if (cfg_.use_adapter) {
        const int hidden = cfg_.adapter_hidden();
        Tensor<T> dconcat({s, cfg_.dim + hidden});
        nn::linear_backward(cache.concat, val(merge_w_), dfused, &dconcat, grad_of(merge_w_),
                            grad_of(merge_b_));
        std::vector<Tensor<T>> dh(cfg_.layers + 1);
        for (auto& t : dh) t = Tensor<T>({s, hidden});
        for (int64_t i = 0; i < s; ++i) {
            const T* row = dconcat.row(i);
            T* dl = dstates[cfg_.layers].row(i);
            T* dhr = dh[cfg_.layers].row(i);
            for (int j = 0; j < cfg_.dim; ++j) dl[j] += row[j];
            for (int j = 0; j < hidden; ++j) dhr[j] += row[cfg_.dim + j];
        }
        for (int l = cfg_.layers - 1; l >= 0; --l) {
            Tensor<T> da_in({s, hidden});
            block_backward(adapter_blocks_[l], cfg_.adapter_heads(), cache.ad[l], dh[l + 1],
                           da_in);
            axpy(dh[l], da_in);  // a_in = proj + h_prev
            nn::linear_backward(cache.states[l + 1], val(proj_w_[l]), da_in, &dstates[l + 1],
                                grad_of(proj_w_[l]), grad_of(proj_b_[l]));
        }
    } else {
        axpy(dstates[cfg_.layers], dfused);
    }

    for (int l = cfg_.layers - 1; l >= 0; --l) {
        block_backward(base_blocks_[l], cfg_.heads, cache.base[l], dstates[l + 1], dstates[l]);
    }

    dropout_backward(dstates[0], cache.emb_drop);
    Tensor<T> demb({s, cfg_.dim});
    nn::layer_norm_backward(cache.emb_ln, val(emb_ln_g_), dstates[0], &demb, grad_of(emb_ln_g_),
                            grad_of(emb_ln_b_));
    Tensor<T>* dtok = grad_of(tok_emb_);
    Tensor<T>* dpos = grad_of(pos_emb_);
    for (int64_t i = 0; i < s; ++i) {
        const T* row = demb.row(i);
        if (dtok) {
            T* t = dtok->row(cache.ids[static_cast<size_t>(i)]);
            for (int j = 0; j < cfg_.dim; ++j) t[j] += row[j];
        }
        if (dpos) {
            T* p = dpos->row(i);
            for (int j = 0; j < cfg_.dim; ++j) p[j] += row[j];
        }
    }
}

template <typename T>
MlmResult<T> Model<T>::mlm_loss(const MaskedSentence& ms, bool with_grad, double grad_scale,
                                bool train, Rng* dropout_rng) {
    MlmResult<T> res;
    for (size_t i = 0; i < ms.labels.size(); ++i) {
        if (ms.labels[i] != kNoLabel) res.positions.push_back(i);
    }
    if (res.positions.empty()) {
        throw DegenerateInputError("masked sentence has no labeled positions");
    }
    ForwardCache<T> cache = forward(ms.input_ids, train, dropout_rng);

    const int64_t m = static_cast<int64_t>(res.positions.size());
    Tensor<T> rows({m, cfg_.dim});
    for (int64_t r = 0; r < m; ++r) {
        const T* src = cache.fused.row(static_cast<int64_t>(res.positions[r]));
        std::copy(src, src + cfg_.dim, rows.row(r));
    }
    Tensor<T> t1, act, t3;
    nn::linear(rows, val(mlm_dense_w_), val(mlm_dense_b_), t1);
    nn::gelu_forward(t1, act);
    nn::LayerNormCache<T> lnc;
    nn::layer_norm(act, val(mlm_ln_g_), val(mlm_ln_b_), t3, lnc);
    nn::linear(t3, val(mlm_out_w_), val(mlm_out_b_), res.logits);

    res.probs = res.logits;
    double loss = 0.0;
    for (int64_t r = 0; r < m; ++r) {
        const int32_t y = ms.labels[res.positions[static_cast<size_t>(r)]];
        loss += logsumexp_row(res.logits.row(r), cfg_.vocab_size) -
                static_cast<double>(res.logits.at(r, y));
        nn::softmax_row(res.probs.row(r), cfg_.vocab_size);
    }
    res.loss = loss / static_cast<double>(m);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite MLM loss");
    if (!with_grad) return res;

    Tensor<T> dlogits({m, cfg_.vocab_size});
    const T scale = static_cast<T>(grad_scale / static_cast<double>(m));
    for (int64_t r = 0; r < m; ++r) {
        const int32_t y = ms.labels[res.positions[static_cast<size_t>(r)]];
        const T* p = res.probs.row(r);
        T* d = dlogits.row(r);
        for (int64_t j = 0; j < cfg_.vocab_size; ++j) d[j] = p[j] * scale;
        d[y] -= scale;
    }
    Tensor<T> dt3({m, cfg_.dim});
    nn::linear_backward(t3, val(mlm_out_w_), dlogits, &dt3, grad_of(mlm_out_w_),
                        grad_of(mlm_out_b_));
    Tensor<T> dact({m, cfg_.dim});
    nn::layer_norm_backward(lnc, val(mlm_ln_g_), dt3, &dact, grad_of(mlm_ln_g_),
                            grad_of(mlm_ln_b_));
    Tensor<T> dt1({m, cfg_.dim});
    nn::gelu_backward(t1, dact, dt1);
    Tensor<T> drows({m, cfg_.dim});
    nn::linear_backward(rows, val(mlm_dense_w_), dt1, &drows, grad_of(mlm_dense_w_),
                        grad_of(mlm_dense_b_));

    Tensor<T> dfused({static_cast<int64_t>(ms.input_ids.size()), cfg_.dim});
    for (int64_t r = 0; r < m; ++r) {
        T* dst = dfused.row(static_cast<int64_t>(res.positions[r]));
        const T* src = drows.row(r);
        for (int j = 0; j < cfg_.dim; ++j) dst[j] += src[j];
    }
    backward_from_fused(cache, dfused);
    return res;
}

template <typename T>
QaResult Model<T>::qa_loss(const std::vector<std::vector<int32_t>>& candidates,
                           const std::vector<uint8_t>& gold, bool multi_label, bool with_grad,
                           double grad_scale, bool train, Rng* dropout_rng) {
    const size_t n = candidates.size();
    if (n == 0) throw DegenerateInputError("no candidate sequences");
    if (gold.size() != n) throw ShapeError("gold mask size does not match candidates");

    std::vector<ForwardCache<T>> caches;
    caches.reserve(n);
    QaResult res;
    res.scores.resize(n);
    const Tensor<T>& qw = val(qa_w_);
    for (size_t c = 0; c < n; ++c) {
        caches.push_back(forward(candidates[c], train, dropout_rng));
        const T* cls = caches.back().fused.row(0);
        double s = static_cast<double>(val(qa_b_).data[0]);
        for (int j = 0; j < cfg_.dim; ++j) {
            s += static_cast<double>(cls[j]) * static_cast<double>(qw.data[j]);
        }
        res.scores[c] = s;
    }

    std::vector<double> dscore(n, 0.0);
    if (multi_label) {
        double loss = 0.0;
        for (size_t c = 0; c < n; ++c) {
            const double s = res.scores[c], y = gold[c] ? 1.0 : 0.0;
            loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
            dscore[c] = (1.0 / (1.0 + std::exp(-s)) - y) / static_cast<double>(n);
        }
        res.loss = loss / static_cast<double>(n);
    } else {
        int gold_idx = -1;
        for (size_t c = 0; c < n; ++c) {
            if (gold[c]) {
                if (gold_idx >= 0) throw ConfigError("single-label QA needs exactly one gold");
                gold_idx = static_cast<int>(c);
            }
        }
        if (gold_idx < 0) throw ConfigError("single-label QA needs exactly one gold");
        double mx = res.scores[0];
        for (double s : res.scores) mx = std::max(mx, s);
        double sum = 0.0;
        for (double s : res.scores) sum += std::exp(s - mx);
        res.loss = mx + std::log(sum) - res.scores[static_cast<size_t>(gold_idx)];
        for (size_t c = 0; c < n; ++c) {
            const double p = std::exp(res.scores[c] - mx) / sum;
            dscore[c] = p - (static_cast<int>(c) == gold_idx ? 1.0 : 0.0);
        }
    }
    if (!std::isfinite(res.loss)) throw NumericError("non-finite QA loss");
    if (!with_grad) return res;

    Tensor<T>* dqw = grad_of(qa_w_);
    Tensor<T>* dqb = grad_of(qa_b_);
    for (size_t c = 0; c < n; ++c) {
        const T ds = static_cast<T>(dscore[c] * grad_scale);
        if (ds == T(0)) continue;
        const T* cls = caches[c].fused.row(0);
        if (dqw) {
            for (int j = 0; j < cfg_.dim; ++j) dqw->data[j] += ds * cls[j];
        }
        if (dqb) dqb->data[0] += ds;
        Tensor<T> dfused({static_cast<int64_t>(candidates[c].size()), cfg_.dim});
        T* drow = dfused.row(0);
        for (int j = 0; j < cfg_.dim; ++j) drow[j] = ds * qw.data[j];
        backward_from_fused(caches[c], dfused);
    }
    return res;
}

template <typename T>
std::vector<double> Model<T>::qa_scores(const std::vector<std::vector<int32_t>>& candidates) const {
    std::vector<double> out(candidates.size());
    const Tensor<T>& qw = val(qa_w_);
    for (size_t c = 0; c < candidates.size(); ++c) {
        Tensor<T> fused = ka_forward(candidates[c]);
        const T* cls = fused.row(0);
        double s = static_cast<double>(val(qa_b_).data[0]);
        for (int j = 0; j < cfg_.dim; ++j) {
            s += static_cast<double>(cls[j]) * static_cast<double>(qw.data[j]);
        }
        out[c] = s;
    }
    return out;
}

double lr_at_step(int64_t step, int64_t total_steps, double peak) {
    if (total_steps < 1) throw ScheduleError("total_steps must be >= 1");
    if (step < 1 || step > total_steps) {
        throw ScheduleError("step " + std::to_string(step) + " outside schedule of " +
                            std::to_string(total_steps) + " steps");
    }
    const double t = static_cast<double>(step);
    const double total = static_cast<double>(total_steps);
    const double warmup_end = 0.1 * total;
    if (t <= warmup_end) return peak * t / warmup_end;
    return peak * (total - t) / (total - warmup_end);
}

template <typename T>
void AdamW<T>::step(Model<T>& model, int64_t step_index, int64_t total_steps) {
    const double lr = lr_at_step(step_index, total_steps, cfg_.peak_lr);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_index));
    for (Parameter<T>& p : model.params()) {
        if (!p.trainable) continue;
        require_finite(p.grad, "gradient of " + p.name);
        const bool decay = p.value.shape.size() >= 2;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = static_cast<double>(p.grad.data[i]);
            double m = cfg_.beta1 * static_cast<double>(p.m.data[i]) + (1.0 - cfg_.beta1) * g;
            double v = cfg_.beta2 * static_cast<double>(p.v.data[i]) + (1.0 - cfg_.beta2) * g * g;
            p.m.data[i] = static_cast<T>(m);
            p.v.data[i] = static_cast<T>(v);
            double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            if (decay) update += cfg_.weight_decay * static_cast<double>(p.value.data[i]);
            p.value.data[i] -= static_cast<T>(lr * update);
        }
    }
}

template <typename T>
void AdamW<T>::reset(Model<T>& model) {
    t_ = 0;
    for (Parameter<T>& p : model.params()) {
        p.m.zero();
        p.v.zero();
    }
}

template class Model<float>;
template class Model<double>;
template class AdamW<float>;
template class AdamW<double>;

}  // namespace kglm
