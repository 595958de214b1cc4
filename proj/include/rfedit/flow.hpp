#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfedit/model.hpp"
#include "rfedit/ops.hpp"
#include "rfedit/rng.hpp"
#include "rfedit/tensor.hpp"

namespace rfedit {

// Time runs from 1 (pure noise) to 0 (data). Sampling walks the knots
// in descending order; inversion walks them ascending.
struct Schedule {
    int steps;
    std::vector<double> knots;  // steps+1 values, descending from 1 to 0

    static Schedule uniform(int steps) {
        if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
        Schedule s;
        s.steps = steps;
        s.knots.resize(static_cast<size_t>(steps) + 1);
        for (int k = 0; k <= steps; ++k)
            s.knots[static_cast<size_t>(k)] = static_cast<double>(steps - k) / steps;
        return s;
    }

    std::vector<double> ascending() const {
        return std::vector<double>(knots.rbegin(), knots.rend());
    }
};

// x_t = (1-t) x0 + t eps, the straight path between data and noise.
template <typename T>
TensorT<T> forward_sample(const TensorT<T>& x0, const TensorT<T>& eps, T t) {
    detail::check_same_shape(x0, eps, "forward_sample");
    if (t < T(0) || t > T(1)) throw std::invalid_argument("time must lie in [0,1]");
    TensorT<T> out = TensorT<T>::zeros(x0.shape);
    for (size_t i = 0; i < x0.numel(); ++i)
        out.at(i) = (T(1) - t) * x0.at(i) + t * eps.at(i);
    return out;
}

// Matching loss at a fixed (t, eps): || v(x_t, t) - (eps - x0) ||^2 averaged
// over elements. Uniform weighting over t. `velocity` is any callable
// (x_t, t) -> tensor, which keeps the term testable against closed forms.
template <typename T, typename F>
TensorT<T> cfm_loss_at(F&& velocity, const TensorT<T>& x0, const TensorT<T>& eps, T t) {
    TensorT<T> xt = forward_sample(x0, eps, t);
    TensorT<T> target = TensorT<T>::zeros(x0.shape);
    for (size_t i = 0; i < x0.numel(); ++i) target.at(i) = eps.at(i) - x0.at(i);
    TensorT<T> v = velocity(xt, t);
    return mse(v, target);
}

// One mini-batch of the matching objective. Per item the rng draws t, then
// the noise elements, in that order. Prompts arrive pre-encoded so caption
// dropout stays the caller's choice.
template <typename T>
TensorT<T> cfm_loss(const ModelT<T>& model,
                    const std::vector<std::pair<TensorT<T>, PromptEmbeddingT<T>>>& batch,
                    Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
    TensorT<T> total = TensorT<T>::scalar(T(0));
    for (const auto& [x0, prompt] : batch) {
        const T t = static_cast<T>(rng.uniform());
        TensorT<T> eps = TensorT<T>::randn(x0.shape, rng);
        auto vel = [&](const TensorT<T>& xt, T tt) { return model.predict_velocity(xt, prompt, tt); };
        total = add(total, cfm_loss_at<T>(vel, x0, eps, t));
    }
    return scale(total, T(1) / static_cast<T>(batch.size()));
}

// Plain Euler integration of dx/dt = v(x, t) along the given knots. Knot
// direction decides sampling (descending) vs inversion (ascending).
// `velocity` is (x, t, step_index) -> tensor.
template <typename T, typename F>
TensorT<T> integrate(F&& velocity, TensorT<T> x, const std::vector<double>& knots) {
    if (knots.size() < 2) throw std::invalid_argument("integrate: need at least two knots");
    for (size_t k = 0; k + 1 < knots.size(); ++k) {
        const T t = static_cast<T>(knots[k]);
        const T dt = static_cast<T>(knots[k + 1] - knots[k]);
        TensorT<T> v = velocity(x, t, static_cast<int>(k));
        detail::check_same_shape(x, v, "integrate");
        TensorT<T> next = TensorT<T>::zeros(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) next.at(i) = x.at(i) + dt * v.at(i);
        x = next;
    }
    return x;
}

// Noise -> image under a fixed prompt.
template <typename T>
TensorT<T> euler_sample(const ModelT<T>& model, const TensorT<T>& x1, const Schedule& sched,
                        const PromptEmbeddingT<T>& prompt, T guidance = T(1)) {
    NoGradGuard ng;
    auto vel = [&](const TensorT<T>& x, T t, int) {
        return model.predict_velocity(x, prompt, t, guidance);
    };
    return integrate<T>(vel, x1.clone(), sched.knots);
}

// Image -> noise along the same field, walking time upward.
template <typename T>
TensorT<T> invert(const ModelT<T>& model, const TensorT<T>& x0, const Schedule& sched,
                  const PromptEmbeddingT<T>& prompt, T guidance = T(1)) {
    NoGradGuard ng;
    auto vel = [&](const TensorT<T>& x, T t, int) {
        return model.predict_velocity(x, prompt, t, guidance);
    };
    return integrate<T>(vel, x0.clone(), sched.ascending());
}

}  // namespace rfedit
