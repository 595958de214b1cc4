#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "rfedit/rng.hpp"

namespace rfedit {

// Reverse-mode autodiff on a dynamic tape. A tensor owns flat storage plus an
// optional node recording its parents and a backward closure. Ops record
// nodes only while grad mode is on and some input requires grad, so the
// sampling path pays nothing for the tape.

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool is_grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorT;

template <typename T>
struct NodeT {
    std::vector<TensorT<T>> parents;
    std::function<void(const TensorT<T>&)> backward;  // receives the output tensor
};

template <typename T>
struct TensorT {
    using Scalar = T;

    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::shared_ptr<NodeT<T>> node;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(count(t.shape), T(0));
        t.requires_grad = requires_grad;
        if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T(0));
        return t;
    }

    static TensorT full(std::vector<int> shape, T value) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : *t.data) v = value;
        return t;
    }

    static TensorT scalar(T value) { return full({1}, value); }

    static TensorT from_values(std::vector<int> shape, std::vector<T> values) {
        if (count(shape) != values.size()) throw std::invalid_argument("from_values: size mismatch");
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, T scale = T(1), bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : *t.data) v = static_cast<T>(rng.normal()) * scale;
        return t;
    }

    size_t numel() const { return data ? data->size() : 0; }
    bool defined() const { return static_cast<bool>(data); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T& at(size_t i) { return (*data)[i]; }
    T at(size_t i) const { return (*data)[i]; }

    // Fresh storage, same values; never shares buffers, drops the tape.
    TensorT clone() const {
        TensorT t;
        t.shape = shape;
        if (data) t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<T>>(numel(), T(0));
    }

    void zero_grad() {
        if (grad)
            for (auto& g : *grad) g = T(0);
    }

    bool all_finite() const {
        for (T v : *data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }
};

// True when an op with these inputs should record a node.
template <typename T>
inline bool want_grad(std::initializer_list<const TensorT<T>*> inputs) {
    if (!is_grad_enabled()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad || t->node) return true;
    return false;
}

template <typename T>
inline void attach_node(TensorT<T>& out, std::vector<TensorT<T>> parents,
                        std::function<void(const TensorT<T>&)> backward) {
    out.node = std::make_shared<NodeT<T>>(NodeT<T>{std::move(parents), std::move(backward)});
    out.ensure_grad();
}

// Backpropagates from a scalar loss through the recorded tape. Gradients
// accumulate into .grad of every reachable tensor that has one.
template <typename T>
inline void backward(TensorT<T>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (!loss.node) {
        if (loss.requires_grad) {
            loss.ensure_grad();
            (*loss.grad)[0] += T(1);
        }
        return;
    }

    // Topological order via iterative DFS over node identity.
    std::vector<TensorT<T>> order;
    std::unordered_set<const NodeT<T>*> seen;
    std::vector<std::pair<TensorT<T>, size_t>> stack;
    stack.emplace_back(loss, 0);
    if (loss.node) seen.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        auto& parents = t.node->parents;
        bool descended = false;
        while (next < parents.size()) {
            auto& p = parents[next++];
            if (p.node && !seen.count(p.node.get())) {
                seen.insert(p.node.get());
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next >= parents.size()) {
            order.push_back(t);
            stack.pop_back();
        }
    }

    loss.ensure_grad();
    (*loss.grad)[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& t = *it;
        if (t.node && t.node->backward) t.node->backward(t);
    }
}

using Tensor = TensorT<float>;

}  // namespace rfedit
