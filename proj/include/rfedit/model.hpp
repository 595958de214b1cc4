#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfedit/config.hpp"
#include "rfedit/ops.hpp"
#include "rfedit/rng.hpp"
#include "rfedit/tensor.hpp"
#include "rfedit/text_encoder.hpp"

namespace rfedit {

namespace detail {

// Taped gather through a precomputed index map (patch <-> pixel layouts).
template <typename T>
TensorT<T> permute_gather(const TensorT<T>& x, std::shared_ptr<std::vector<size_t>> map,
                          std::vector<int> out_shape) {
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at((*map)[i]);
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [map](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (size_t i = 0; i < o.numel(); ++i) (*px.grad)[(*map)[i]] += (*o.grad)[i];
        });
    }
    return out;
}

}  // namespace detail

// Sinusoidal features for a scalar (timestep or guidance), cos half then sin
// half; value scaled by 1000 so the [0,1] range spans the frequency bands.
template <typename T>
TensorT<T> sincos_embedding(T value, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("sincos_embedding: dim must be even");
    const int half = dim / 2;
    TensorT<T> out = TensorT<T>::zeros({dim});
    const T scaled = value * T(1000);
    for (int i = 0; i < half; ++i) {
        const T freq = std::exp(-std::log(T(10000)) * static_cast<T>(i) / static_cast<T>(half));
        out.at(i) = std::cos(scaled * freq);
        out.at(half + i) = std::sin(scaled * freq);
    }
    return out;
}

// m = c_pool + t_emb + g_emb, the per-stream conditioning vector feeding the
// modulation maps.
template <typename T>
TensorT<T> modulation_embedding(const TensorT<T>& c_pool, const TensorT<T>& t_emb,
                                const TensorT<T>& g_emb) {
    return add(add(c_pool, t_emb), g_emb);
}

template <typename T>
struct LinearLayerT {
    TensorT<T> w;  // [out, in]
    TensorT<T> b;  // [out], may be undefined (no bias)
};

template <typename T>
struct JointBlockT {
    LinearLayerT<T> mod_img, mod_txt;  // d_pool -> 6*hidden
    LinearLayerT<T> q_img, k_img, v_img, out_img;
    LinearLayerT<T> q_txt, k_txt, v_txt, out_txt;
    LinearLayerT<T> mlp1_img, mlp2_img;
    LinearLayerT<T> mlp1_txt, mlp2_txt;
};

// One text stream flowing jointly with the shared image stream. `pool` is the
// modulation pool for this stream's text tokens (the pooled condition, or its
// edited version).
template <typename T>
struct ConditionStreamT {
    TensorT<T> ctxt;  // [n_tokens, d_ctxt]
    TensorT<T> pool;  // [d_pool]
};

// What a block hook sees after attention: shared image queries and keys,
// per-stream text keys, and per-stream image attention outputs (post output
// projection, pre gate). The hook returns the image attention rows that the
// residual update should use.
template <typename T>
struct BlockAttentionT {
    int block;
    const TensorT<T>& img_q;                  // [n_img, hidden]
    const TensorT<T>& img_k;                  // [n_img, hidden], shared
    const std::vector<TensorT<T>>& txt_k;     // per stream [n_s, hidden]
    const std::vector<TensorT<T>>& img_attn;  // per stream [n_img, hidden]
};

template <typename T>
struct BlockHookT {
    virtual ~BlockHookT() = default;
    virtual TensorT<T> edit_image_attention(const BlockAttentionT<T>& a) = 0;
};

enum class InitStyle {
    kTrain,      // modulation maps and output head start at zero
    kAllRandom,  // every tensor random (gradient checking)
};

template <typename T>
struct ModelT {
    ModelConfig cfg;

    TensorT<T> token_embedding;  // [vocab, d_ctxt]
    LinearLayerT<T> pool_proj;   // d_ctxt -> d_pool, no bias
    LinearLayerT<T> ctx_proj;    // d_ctxt -> hidden
    LinearLayerT<T> t_proj;      // d_pool -> d_pool
    LinearLayerT<T> g_proj;      // d_pool -> d_pool
    LinearLayerT<T> patch_proj;  // patch_dim -> hidden
    TensorT<T> pos_img;          // [n_img, hidden]
    TensorT<T> pos_txt;          // [max_text_tokens, hidden]
    std::vector<JointBlockT<T>> blocks;
    LinearLayerT<T> head_mod;  // d_pool -> 2*hidden
    LinearLayerT<T> head_out;  // hidden -> patch_dim

    static ModelT init(const ModelConfig& cfg, Rng& rng, InitStyle style = InitStyle::kTrain) {
        cfg.validate();
        ModelT m;
        m.cfg = cfg;
        const bool zero_gates = (style == InitStyle::kTrain);
        const int h = cfg.hidden_dim;

        auto fan_in = [&rng](int out, int in, bool zero) {
            const T s = zero ? T(0) : T(1) / std::sqrt(static_cast<T>(in));
            TensorT<T> w = TensorT<T>::zeros({out, in}, true);
            if (!zero)
                for (auto& v : *w.data) v = static_cast<T>(rng.normal()) * s;
            return w;
        };
        auto lin = [&](int out, int in, bool zero = false) {
            return LinearLayerT<T>{fan_in(out, in, zero), TensorT<T>::zeros({out}, true)};
        };

        m.token_embedding = TensorT<T>::randn({cfg.vocab.size(), cfg.d_ctxt}, rng, T(1), true);
        m.pool_proj.w = fan_in(cfg.d_pool, cfg.d_ctxt, false);
        m.ctx_proj = lin(h, cfg.d_ctxt);
        m.t_proj = lin(cfg.d_pool, cfg.d_pool);
        m.g_proj = lin(cfg.d_pool, cfg.d_pool);
        m.patch_proj = lin(h, cfg.patch_dim());
        m.pos_img = TensorT<T>::randn({cfg.num_image_tokens(), h}, rng, T(0.02), true);
        m.pos_txt = TensorT<T>::randn({cfg.max_text_tokens, h}, rng, T(0.02), true);
        m.blocks.resize(static_cast<size_t>(cfg.num_blocks));
        for (auto& blk : m.blocks) {
            blk.mod_img = lin(6 * h, cfg.d_pool, zero_gates);
            blk.mod_txt = lin(6 * h, cfg.d_pool, zero_gates);
            blk.q_img = lin(h, h);
            blk.k_img = lin(h, h);
            blk.v_img = lin(h, h);
            blk.out_img = lin(h, h);
            blk.q_txt = lin(h, h);
            blk.k_txt = lin(h, h);
            blk.v_txt = lin(h, h);
            blk.out_txt = lin(h, h);
            blk.mlp1_img = lin(4 * h, h);
            blk.mlp2_img = lin(h, 4 * h);
            blk.mlp1_txt = lin(4 * h, h);
            blk.mlp2_txt = lin(h, 4 * h);
        }
        m.head_mod = lin(2 * h, cfg.d_pool, zero_gates);
        m.head_out = lin(cfg.patch_dim(), h, zero_gates);
        return m;
    }

    // Stable name -> tensor registry; ordering defines checkpoint layout.
    std::vector<std::pair<std::string, TensorT<T>*>> named_params() {
        std::vector<std::pair<std::string, TensorT<T>*>> out;
        auto addt = [&out](const std::string& name, TensorT<T>& t) { out.emplace_back(name, &t); };
        auto addl = [&](const std::string& name, LinearLayerT<T>& l) {
            addt(name + ".w", l.w);
            if (l.b.defined()) addt(name + ".b", l.b);
        };
        addt("token_embedding", token_embedding);
        addl("pool_proj", pool_proj);
        addl("ctx_proj", ctx_proj);
        addl("t_proj", t_proj);
        addl("g_proj", g_proj);
        addl("patch_proj", patch_proj);
        addt("pos_img", pos_img);
        addt("pos_txt", pos_txt);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "blocks." + std::to_string(i) + ".";
            auto& b = blocks[i];
            addl(p + "mod_img", b.mod_img);
            addl(p + "mod_txt", b.mod_txt);
            addl(p + "q_img", b.q_img);
            addl(p + "k_img", b.k_img);
            addl(p + "v_img", b.v_img);
            addl(p + "out_img", b.out_img);
            addl(p + "q_txt", b.q_txt);
            addl(p + "k_txt", b.k_txt);
            addl(p + "v_txt", b.v_txt);
            addl(p + "out_txt", b.out_txt);
            addl(p + "mlp1_img", b.mlp1_img);
            addl(p + "mlp2_img", b.mlp2_img);
            addl(p + "mlp1_txt", b.mlp1_txt);
            addl(p + "mlp2_txt", b.mlp2_txt);
        }
        addl("head_mod", head_mod);
        addl("head_out", head_out);
        return out;
    }

    // Token ids -> per-token context and pooled summary. Differentiable with
    // respect to the embedding table and pooling weights.
    PromptEmbeddingT<T> encode(const std::string& prompt) const {
        std::vector<int> ids = tokenize(cfg.vocab, prompt);
        if (static_cast<int>(ids.size()) > cfg.max_text_tokens)
            ids.resize(static_cast<size_t>(cfg.max_text_tokens));
        PromptEmbeddingT<T> e;
        e.token_ids = ids;
        e.ctxt = embedding(token_embedding, ids);
        e.pool = linear(mean_rows(e.ctxt), pool_proj.w, pool_proj.b);
        return e;
    }

    PromptEmbeddingT<T> null_condition() const { return encode(""); }

    // [S,S,C] image -> [n_img, patch_dim] tokens, row-major patches.
    TensorT<T> patchify(const TensorT<T>& x) const {
        check_image_shape(x);
        return detail::permute_gather(x, patch_map(), {cfg.num_image_tokens(), cfg.patch_dim()});
    }

    TensorT<T> unpatchify(const TensorT<T>& tokens) const {
        if (tokens.ndim() != 2 || tokens.dim(0) != cfg.num_image_tokens() ||
            tokens.dim(1) != cfg.patch_dim())
            throw std::invalid_argument("unpatchify: token shape mismatch");
        return detail::permute_gather(tokens, unpatch_map(),
                                      {cfg.image_size, cfg.image_size, cfg.channels});
    }

    // Velocity prediction for one conditioned stream.
    TensorT<T> predict_velocity(const TensorT<T>& x, const PromptEmbeddingT<T>& prompt, T t,
                                T guidance = T(1)) const {
        std::vector<ConditionStreamT<T>> streams{{prompt.ctxt, prompt.pool}};
        return predict_velocity_multi(x, t, guidance, streams, prompt.pool, nullptr);
    }

    // Shared image stream attended jointly against several text streams in
    // one pass. Stream 0 drives the image residual unless a hook substitutes
    // an edited attention output. `img_mod_pool` modulates the image tokens;
    // each stream's own pool modulates its text tokens.
    TensorT<T> predict_velocity_multi(const TensorT<T>& x, T t, T guidance,
                                      const std::vector<ConditionStreamT<T>>& streams,
                                      const TensorT<T>& img_mod_pool,
                                      BlockHookT<T>* hook) const {
        check_image_shape(x);
        if (t < T(0) || t > T(1)) throw std::invalid_argument("time must lie in [0,1]");
        if (streams.empty()) throw std::invalid_argument("need at least one condition stream");
        const int n_img = cfg.num_image_tokens();
        const int h = cfg.hidden_dim;
        const size_t ns = streams.size();

        TensorT<T> img = add(linear(patchify(x), patch_proj.w, patch_proj.b), pos_img);
        std::vector<TensorT<T>> txt(ns);
        for (size_t s = 0; s < ns; ++s) {
            const auto& c = streams[s].ctxt;
            if (c.ndim() != 2 || c.dim(1) != cfg.d_ctxt || c.dim(0) < 1 ||
                c.dim(0) > cfg.max_text_tokens)
                throw std::invalid_argument("condition stream shape mismatch");
            txt[s] = add(linear(c, ctx_proj.w, ctx_proj.b), slice_rows(pos_txt, 0, c.dim(0)));
        }

        TensorT<T> t_emb = linear(sincos_embedding(t, cfg.d_pool), t_proj.w, t_proj.b);
        TensorT<T> g_emb = linear(sincos_embedding(guidance, cfg.d_pool), g_proj.w, g_proj.b);
        TensorT<T> m_img = modulation_embedding(img_mod_pool, t_emb, g_emb);
        std::vector<TensorT<T>> m_txt(ns);
        for (size_t s = 0; s < ns; ++s) m_txt[s] = modulation_embedding(streams[s].pool, t_emb, g_emb);

        struct Mod6 {
            TensorT<T> shift_a, scale_a, gate_a, shift_m, scale_m, gate_m;
        };
        auto mod6 = [h](const TensorT<T>& m, const LinearLayerT<T>& l) {
            TensorT<T> v = linear(silu(m), l.w, l.b);
            return Mod6{slice_vec(v, 0, h),     slice_vec(v, h, h),     slice_vec(v, 2 * h, h),
                        slice_vec(v, 3 * h, h), slice_vec(v, 4 * h, h), slice_vec(v, 5 * h, h)};
        };
        auto modulate = [](const TensorT<T>& xx, const TensorT<T>& shift, const TensorT<T>& sc) {
            return add_rowvec(mul_rowvec(layer_norm(xx), add_scalar(sc, T(1))), shift);
        };

        for (int bi = 0; bi < cfg.num_blocks; ++bi) {
            const auto& blk = blocks[static_cast<size_t>(bi)];
            Mod6 mi = mod6(m_img, blk.mod_img);
            TensorT<T> hi = modulate(img, mi.shift_a, mi.scale_a);
            TensorT<T> qi = linear(hi, blk.q_img.w, blk.q_img.b);
            TensorT<T> ki = linear(hi, blk.k_img.w, blk.k_img.b);
            TensorT<T> vi = linear(hi, blk.v_img.w, blk.v_img.b);

            std::vector<Mod6> mt(ns);
            std::vector<TensorT<T>> txt_k(ns), txt_attn(ns), img_attn(ns);
            for (size_t s = 0; s < ns; ++s) {
                mt[s] = mod6(m_txt[s], blk.mod_txt);
                TensorT<T> ht = modulate(txt[s], mt[s].shift_a, mt[s].scale_a);
                TensorT<T> qt = linear(ht, blk.q_txt.w, blk.q_txt.b);
                TensorT<T> kt = linear(ht, blk.k_txt.w, blk.k_txt.b);
                TensorT<T> vt = linear(ht, blk.v_txt.w, blk.v_txt.b);
                const int n_s = kt.dim(0);
                TensorT<T> attn = multihead_attention(concat_rows(qt, qi), concat_rows(kt, ki),
                                                      concat_rows(vt, vi), cfg.num_heads);
                txt_k[s] = kt;
                txt_attn[s] = linear(slice_rows(attn, 0, n_s), blk.out_txt.w, blk.out_txt.b);
                img_attn[s] = linear(slice_rows(attn, n_s, n_img), blk.out_img.w, blk.out_img.b);
            }

            TensorT<T> chosen = img_attn[0];
            if (hook) {
                BlockAttentionT<T> view{bi, qi, ki, txt_k, img_attn};
                chosen = hook->edit_image_attention(view);
            }
            img = add(img, mul_rowvec(chosen, mi.gate_a));
            for (size_t s = 0; s < ns; ++s)
                txt[s] = add(txt[s], mul_rowvec(txt_attn[s], mt[s].gate_a));

            TensorT<T> him = modulate(img, mi.shift_m, mi.scale_m);
            TensorT<T> mlp_i =
                linear(silu(linear(him, blk.mlp1_img.w, blk.mlp1_img.b)), blk.mlp2_img.w,
                       blk.mlp2_img.b);
            img = add(img, mul_rowvec(mlp_i, mi.gate_m));
            for (size_t s = 0; s < ns; ++s) {
                TensorT<T> htm = modulate(txt[s], mt[s].shift_m, mt[s].scale_m);
                TensorT<T> mlp_t =
                    linear(silu(linear(htm, blk.mlp1_txt.w, blk.mlp1_txt.b)), blk.mlp2_txt.w,
                           blk.mlp2_txt.b);
                txt[s] = add(txt[s], mul_rowvec(mlp_t, mt[s].gate_m));
            }
        }

        TensorT<T> head_vec = linear(silu(m_img), head_mod.w, head_mod.b);
        TensorT<T> shift_f = slice_vec(head_vec, 0, h);
        TensorT<T> scale_f = slice_vec(head_vec, h, h);
        TensorT<T> hf = modulate(img, shift_f, scale_f);
        TensorT<T> y = linear(hf, head_out.w, head_out.b);
        return unpatchify(y);
    }

    void check_image_shape(const TensorT<T>& x) const {
        if (x.ndim() != 3 || x.dim(0) != cfg.image_size || x.dim(1) != cfg.image_size ||
            x.dim(2) != cfg.channels)
            throw std::invalid_argument("image shape mismatch");
    }

private:
    // pixel (y,x,c) laid out row-major; patch token (ty*tps+tx) with inner
    // layout (dy*p+dx)*C+c.
    std::shared_ptr<std::vector<size_t>> patch_map() const {
        auto map = std::make_shared<std::vector<size_t>>(
            static_cast<size_t>(cfg.num_image_tokens()) * cfg.patch_dim());
        const int p = cfg.patch_size, tps = cfg.tokens_per_side(), C = cfg.channels;
        size_t o = 0;
        for (int ty = 0; ty < tps; ++ty)
            for (int tx = 0; tx < tps; ++tx)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        for (int c = 0; c < C; ++c)
                            (*map)[o++] = (static_cast<size_t>(ty * p + dy) * cfg.image_size +
                                           (tx * p + dx)) * C + c;
        return map;
    }

    std::shared_ptr<std::vector<size_t>> unpatch_map() const {
        auto fwd = patch_map();
        auto inv = std::make_shared<std::vector<size_t>>(fwd->size());
        for (size_t i = 0; i < fwd->size(); ++i) (*inv)[(*fwd)[i]] = i;
        return inv;
    }
};

using Model = ModelT<float>;
using ConditionStream = ConditionStreamT<float>;
using BlockAttention = BlockAttentionT<float>;
using BlockHook = BlockHookT<float>;

}  // namespace rfedit
