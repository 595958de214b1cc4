#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfedit/flow.hpp"
#include "rfedit/model.hpp"
#include "rfedit/ops.hpp"

namespace rfedit {

// Knobs for inference-time editing. Target blocks empty means every block.
struct EditConfig {
    std::string edit_prompt;
    float lambda_fine = 5.0f;
    float lambda_coarse = 0.5f;
    float tau_m = 0.5f;
    float boundary = 10.0f;  // sharpness of the soft mask
    // First sampling step the edit applies to; at or past the step count the
    // run degenerates to plain generation.
    int start_step = 0;
    bool masking = true;
    std::vector<int> target_blocks;

    void validate(int num_blocks) const {
        if (lambda_coarse < 0.0f || lambda_coarse > 1.0f)
            throw std::invalid_argument("coarse strength must lie in [0,1]");
        if (tau_m < 0.0f || tau_m > 1.0f)
            throw std::invalid_argument("mask threshold must lie in [0,1]");
        if (start_step < 0) throw std::invalid_argument("start step must be nonnegative");
        for (int b : target_blocks)
            if (b < 0 || b >= num_blocks) throw std::invalid_argument("target block out of range");
    }
};

// Named presets from the reference configuration sweeps.
inline void apply_preset(EditConfig& cfg, const std::string& name) {
    if (name == "eyeglasses") {
        cfg.lambda_coarse = 0.8f;
        cfg.lambda_fine = 5.0f;
        cfg.tau_m = 0.5f;
        cfg.start_step = 3;
    } else if (name == "smile") {
        cfg.lambda_coarse = 0.5f;
        cfg.lambda_fine = 8.0f;
        cfg.tau_m = 0.5f;
        cfg.start_step = 5;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
}

// The three image-token attention outputs of one block: base condition,
// edit condition, unconditional. Rows are image tokens.
struct AttentionTriple {
    Tensor base;   // l(x, c, t)
    Tensor edit;   // l(x, c_e, t)
    Tensor prior;  // l(x, phi, t)
};

// Per-token direction transfer: remove from the edit response its component
// along the unconditional response, then push the base output that way.
// Rows where the mask is zero (or when lambda is zero) are copied from the
// base bit-for-bit, which is what makes disabled edits exact no-ops.
inline Tensor fine_edit(const AttentionTriple& a, float lambda,
                        const std::vector<uint8_t>* mask = nullptr) {
    if (a.base.shape != a.edit.shape || a.base.shape != a.prior.shape)
        throw std::invalid_argument("fine_edit: mismatched attention shapes");
    if (a.base.ndim() != 2) throw std::invalid_argument("fine_edit: expected [tokens, dim]");
    const int n = a.base.dim(0), d = a.base.dim(1);
    if (mask && static_cast<int>(mask->size()) != n)
        throw std::invalid_argument("fine_edit: mask length mismatch");

    Tensor out = a.base.clone();
    if (lambda == 0.0f) return out;
    for (int i = 0; i < n; ++i) {
        if (mask && (*mask)[static_cast<size_t>(i)] == 0) continue;
        const float* eb = a.edit.ptr() + static_cast<size_t>(i) * d;
        const float* pb = a.prior.ptr() + static_cast<size_t>(i) * d;
        float* ob = out.ptr() + static_cast<size_t>(i) * d;
        float ep = 0.0f, pp = 0.0f;
        for (int j = 0; j < d; ++j) {
            ep += eb[j] * pb[j];
            pp += pb[j] * pb[j];
        }
        const float coef = (pp == 0.0f) ? 0.0f : ep / pp;
        for (int j = 0; j < d; ++j) ob[j] += lambda * (eb[j] - coef * pb[j]);
    }
    return out;
}

// Which image tokens an edit prompt attends to. Per head, softmax the image
// queries against the edit-prompt keys, keep the first edit token's column,
// average heads, rescale to [0,1], sharpen through a sigmoid around 0.5, and
// threshold. Returns one 0/1 flag per image token.
inline std::vector<uint8_t> attention_mask(const Tensor& img_q, const Tensor& edit_k, int heads,
                                           float boundary, float tau) {
    if (img_q.ndim() != 2 || edit_k.ndim() != 2 || img_q.dim(1) != edit_k.dim(1))
        throw std::invalid_argument("attention_mask: shape mismatch");
    const int n = img_q.dim(0), h = img_q.dim(1), nk = edit_k.dim(0);
    if (heads <= 0 || h % heads != 0)
        throw std::invalid_argument("attention_mask: heads must divide feature dim");
    const int hd = h / heads;
    const float inv_scale = 1.0f / std::sqrt(static_cast<float>(hd));

    std::vector<float> map(static_cast<size_t>(n), 0.0f);
    std::vector<float> scores(static_cast<size_t>(nk));
    for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        for (int i = 0; i < n; ++i) {
            const float* qi = img_q.ptr() + static_cast<size_t>(i) * h + off;
            for (int j = 0; j < nk; ++j) {
                const float* kj = edit_k.ptr() + static_cast<size_t>(j) * h + off;
                float acc = 0.0f;
                for (int d = 0; d < hd; ++d) acc += qi[d] * kj[d];
                scores[static_cast<size_t>(j)] = acc * inv_scale;
            }
            auto sm = softmax_vec(scores.data(), nk);
            map[static_cast<size_t>(i)] += sm[0];
        }
    }
    for (auto& v : map) v /= static_cast<float>(heads);

    auto normed = minmax_normalize(map);
    std::vector<uint8_t> mask(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float soft = sigmoid_scalar(boundary * (normed[static_cast<size_t>(i)] - 0.5f));
        mask[static_cast<size_t>(i)] = soft >= tau ? 1 : 0;
    }
    return mask;
}

// Pooled-condition shift: the edit pool with its component along the base
// pool removed, blended in by lambda. Zero lambda returns the base pool
// bit-for-bit.
inline Tensor coarse_edit(const Tensor& c_pool, const Tensor& c_e_pool, float lambda) {
    detail::check_same_shape(c_pool, c_e_pool, "coarse_edit");
    if (lambda == 0.0f) return c_pool.clone();
    Tensor dir = orthogonal_component(c_e_pool, c_pool);
    Tensor out = Tensor::zeros(c_pool.shape);
    for (size_t i = 0; i < out.numel(); ++i)
        out.at(i) = (1.0f - lambda) * c_pool.at(i) + lambda * dir.at(i);
    return out;
}

// One mask as computed at (step, block) during an edited generation.
struct MaskRecord {
    int step = 0;
    int block = 0;
    std::vector<uint8_t> mask;  // per image token
};

// Captured attention rows for one edited (step, block), for inspection.
struct EditTrace {
    int step = 0;
    int block = 0;
    Tensor base;
    Tensor edited;
};

// Instrumentation and cache for one edited generation. Masks are cached per
// (step, block) while a step is integrated and recorded in order.
struct EditSession {
    std::vector<MaskRecord> masks;
    std::vector<EditTrace> traces;
    bool capture_traces = false;
};

namespace detail {

struct EditHook final : BlockHook {
    const EditConfig* cfg;
    int heads;
    int step = 0;
    EditSession* session;

    bool block_targeted(int b) const {
        if (cfg->target_blocks.empty()) return true;
        return std::find(cfg->target_blocks.begin(), cfg->target_blocks.end(), b) !=
               cfg->target_blocks.end();
    }

    Tensor edit_image_attention(const BlockAttention& a) override {
        if (!block_targeted(a.block)) return a.img_attn[0];
        const std::vector<uint8_t>* mask_ptr = nullptr;
        std::vector<uint8_t> mask;
        if (cfg->masking) {
            // Keys span the edit stream's joint sequence, so column 0 is the
            // first edit text token and stays informative for one-word prompts.
            mask = attention_mask(a.img_q, concat_rows(a.txt_k[1], a.img_k), heads, cfg->boundary,
                                  cfg->tau_m);
            if (session) {
                MaskRecord rec;
                rec.step = step;
                rec.block = a.block;
                rec.mask = mask;
                session->masks.push_back(std::move(rec));
            }
            mask_ptr = &mask;
        }
        AttentionTriple triple{a.img_attn[0], a.img_attn[1], a.img_attn[2]};
        Tensor edited = fine_edit(triple, cfg->lambda_fine, mask_ptr);
        if (session && session->capture_traces)
            session->traces.push_back(EditTrace{step, a.block, a.img_attn[0].clone(), edited.clone()});
        return edited;
    }
};

}  // namespace detail

// Full edited generation: runs the sampler from the given noise; before
// start_step the plain conditioned velocity is used, afterwards the base,
// edit, and null streams run jointly and targeted blocks receive the fine
// edit. The base text stream is modulated with the coarse-shifted pool; the
// image stream keeps the unedited pool.
inline Tensor edited_generate(const Model& model, const Tensor& noise, const std::string& prompt,
                              const EditConfig& cfg, const Schedule& sched, float guidance = 1.0f,
                              EditSession* session = nullptr) {
    NoGradGuard ng;
    cfg.validate(model.cfg.num_blocks);
    model.check_image_shape(noise);

    PromptEmbedding base = model.encode(prompt);
    PromptEmbedding edit = model.encode(cfg.edit_prompt);
    PromptEmbedding null_cond = model.null_condition();
    Tensor pool_hat = coarse_edit(base.pool, edit.pool, cfg.lambda_coarse);

    std::vector<ConditionStream> streams{{base.ctxt, pool_hat},
                                         {edit.ctxt, edit.pool},
                                         {null_cond.ctxt, null_cond.pool}};

    detail::EditHook hook;
    hook.cfg = &cfg;
    hook.heads = model.cfg.num_heads;
    hook.session = session;

    auto vel = [&](const Tensor& x, float t, int step) -> Tensor {
        if (step < cfg.start_step)
            return model.predict_velocity(x, base, t, guidance);
        hook.step = step;
        return model.predict_velocity_multi(x, t, guidance, streams, base.pool, &hook);
    };
    return integrate<float>(vel, noise.clone(), sched.knots);
}

}  // namespace rfedit
