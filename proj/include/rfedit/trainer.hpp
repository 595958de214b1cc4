#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfedit/flow.hpp"
#include "rfedit/model.hpp"
#include "rfedit/synth.hpp"

namespace rfedit {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;     // global norm; 0 disables
    double uncond_prob = 0.1;   // caption dropout, trains the null condition
    int batch_size = 8;
    int total_steps = 2000;
    uint64_t seed = 0;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("learning rate must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw std::invalid_argument("betas must lie in [0,1)");
        if (adam_eps <= 0) throw std::invalid_argument("adam eps must be positive");
        if (grad_clip < 0) throw std::invalid_argument("grad clip must be nonnegative");
        if (uncond_prob < 0 || uncond_prob > 1)
            throw std::invalid_argument("uncond prob must lie in [0,1]");
        if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
        if (total_steps < 0) throw std::invalid_argument("step count must be nonnegative");
    }
};

// First and second moment buffers, one pair per parameter tensor.
struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    int64_t step = 0;
};

// One bias-corrected update over a parameter list. Gradients live in the
// tensors' grad buffers.
inline void adam_step(std::vector<Tensor*>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->numel(), 0.0f);
            state.v[i].assign(params[i]->numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.grad) continue;
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.numel())
            throw std::invalid_argument("adam_step: state size mismatch");
        for (size_t j = 0; j < p.numel(); ++j) {
            const double g = (*p.grad)[j];
            m[j] = static_cast<float>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g);
            v[j] = static_cast<float>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.at(j) -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

// Scales all gradients so their global norm is at most max_norm. Returns the
// pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params) {
        if (!p->grad) continue;
        for (float g : *p->grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto* p : params) {
            if (!p->grad) continue;
            for (float& g : *p->grad) g *= s;
        }
    }
    return norm;
}

struct TrainResult {
    std::vector<std::pair<int, double>> loss_log;  // (step, loss), step from 1
    bool diverged = false;
    int diverged_step = -1;
};

// Minimizes the matching loss over the corpus. Per step the rng draws, in
// order: batch indices, caption dropout flags, then per item t and noise.
// On a non-finite loss the step is not applied and training stops, leaving
// the parameters from the last finite step in place.
inline TrainResult train(Model& model, const std::vector<SynthSample>& corpus,
                         const TrainConfig& cfg,
                         const std::function<void(int, double)>& on_step = nullptr) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    for (const auto& s : corpus) model.check_image_shape(s.image);

    Rng rng(cfg.seed);
    auto named = model.named_params();
    std::vector<Tensor*> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(t);

    AdamState state;
    TrainResult result;
    result.loss_log.reserve(static_cast<size_t>(cfg.total_steps));

    for (int step = 1; step <= cfg.total_steps; ++step) {
        std::vector<std::pair<Tensor, PromptEmbedding>> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        std::vector<size_t> idx(static_cast<size_t>(cfg.batch_size));
        for (auto& i : idx)
            i = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1));
        for (auto i : idx) {
            const bool drop = rng.uniform() < cfg.uncond_prob;
            const std::string& caption = drop ? std::string() : corpus[i].caption;
            batch.emplace_back(corpus[i].image, model.encode(caption));
        }

        for (auto* p : params) p->zero_grad();
        Tensor loss = cfm_loss(model, batch, rng);
        const double loss_val = static_cast<double>(loss.at(0));
        if (!std::isfinite(loss_val)) {
            result.diverged = true;
            result.diverged_step = step;
            break;
        }
        backward(loss);
        clip_grad_norm(params, cfg.grad_clip);
        adam_step(params, state, cfg);

        result.loss_log.emplace_back(step, loss_val);
        if (on_step) on_step(step, loss_val);
    }
    return result;
}

// Loss log format: one "<step> <loss>" line per step.
inline void write_loss_log(const std::string& path,
                           const std::vector<std::pair<int, double>>& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open loss log for writing: " + path);
    for (const auto& [step, loss] : log) f << step << " " << loss << "\n";
    if (!f) throw std::runtime_error("loss log write failed: " + path);
}

}  // namespace rfedit
