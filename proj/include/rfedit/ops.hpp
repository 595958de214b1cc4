#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "rfedit/tensor.hpp"

namespace rfedit {

// Matmul kernels with a fixed accumulation order (ascending k) so results are
// reproducible bit-for-bit across runs. Single-threaded on purpose.
namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn(T* c, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            T* crow = c + i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void mm_nt(T* c, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const T* arow = a + i * k;
            const T* brow = b + j * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void mm_tn(T* c, const T* a, const T* b, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape != b.shape) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Treats [d] as one row, [n,d] as n rows.
template <typename T>
std::pair<int, int> as_rows(const TensorT<T>& x, const char* op) {
    if (x.ndim() == 1) return {1, x.dim(0)};
    if (x.ndim() == 2) return {x.dim(0), x.dim(1)};
    throw std::invalid_argument(std::string(op) + ": expected 1-D or 2-D input");
}

}  // namespace detail

// ---- plain (untaped) vector math used by the editing path ----

// Projection of v onto b. Zero-norm b projects to the zero vector.
template <typename T>
TensorT<T> project_onto(const TensorT<T>& v, const TensorT<T>& b) {
    detail::check_same_shape(v, b, "project_onto");
    T vb = T(0), bb = T(0);
    for (size_t i = 0; i < v.numel(); ++i) {
        vb += v.at(i) * b.at(i);
        bb += b.at(i) * b.at(i);
    }
    TensorT<T> out = TensorT<T>::zeros(v.shape);
    if (bb == T(0)) return out;
    const T s = vb / bb;
    for (size_t i = 0; i < v.numel(); ++i) out.at(i) = s * b.at(i);
    return out;
}

template <typename T>
TensorT<T> orthogonal_component(const TensorT<T>& v, const TensorT<T>& b) {
    TensorT<T> p = project_onto(v, b);
    TensorT<T> out = TensorT<T>::zeros(v.shape);
    for (size_t i = 0; i < v.numel(); ++i) out.at(i) = v.at(i) - p.at(i);
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Numerically stable softmax over a flat vector (max subtraction).
template <typename T>
std::vector<T> softmax_vec(const T* x, int n) {
    T mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    std::vector<T> out(static_cast<size_t>(n));
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = std::exp(x[i] - mx);
        sum += out[static_cast<size_t>(i)];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Rescales to [0,1]; a constant input maps to all zeros.
template <typename T>
std::vector<T> minmax_normalize(const std::vector<T>& x) {
    if (x.empty()) return {};
    T lo = x[0], hi = x[0];
    for (T v : x) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<T> out(x.size(), T(0));
    if (hi == lo) return out;
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / (hi - lo);
    return out;
}

template <typename T>
T dot_all(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "dot_all");
    T s = T(0);
    for (size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
    return s;
}

template <typename T>
T norm2(const TensorT<T>& a) {
    return std::sqrt(dot_all(a, a));
}

// ---- taped elementwise and shape ops ----

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
    if (want_grad<T>({&a, &b})) {
        attach_node<T>(out, {a, b}, [](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (size_t i = 0; i < o.numel(); ++i) {
                const T g = (*o.grad)[i];
                if (pa.grad) (*pa.grad)[i] += g;
                if (pb.grad) (*pb.grad)[i] += g;
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    TensorT<T> out = TensorT<T>::zeros(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) - b.at(i);
    if (want_grad<T>({&a, &b})) {
        attach_node<T>(out, {a, b}, [](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (size_t i = 0; i < o.numel(); ++i) {
                const T g = (*o.grad)[i];
                if (pa.grad) (*pa.grad)[i] += g;
                if (pb.grad) (*pb.grad)[i] -= g;
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
    if (want_grad<T>({&a, &b})) {
        attach_node<T>(out, {a, b}, [](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (size_t i = 0; i < o.numel(); ++i) {
                const T g = (*o.grad)[i];
                if (pa.grad) (*pa.grad)[i] += g * pb.at(i);
                if (pb.grad) (*pb.grad)[i] += g * pa.at(i);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * s;
    if (want_grad<T>({&a})) {
        attach_node<T>(out, {a}, [s](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            if (!pa.grad) return;
            for (size_t i = 0; i < o.numel(); ++i) (*pa.grad)[i] += (*o.grad)[i] * s;
        });
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + s;
    if (want_grad<T>({&a})) {
        attach_node<T>(out, {a}, [](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            if (!pa.grad) return;
            for (size_t i = 0; i < o.numel(); ++i) (*pa.grad)[i] += (*o.grad)[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("concat_rows: incompatible shapes");
    const int na = a.dim(0), nb = b.dim(0), d = a.dim(1);
    TensorT<T> out = TensorT<T>::zeros({na + nb, d});
    std::copy(a.ptr(), a.ptr() + a.numel(), out.ptr());
    std::copy(b.ptr(), b.ptr() + b.numel(), out.ptr() + a.numel());
    if (want_grad<T>({&a, &b})) {
        attach_node<T>(out, {a, b}, [na, nb, d](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            const size_t asz = static_cast<size_t>(na) * d;
            if (pa.grad)
                for (size_t i = 0; i < asz; ++i) (*pa.grad)[i] += (*o.grad)[i];
            if (pb.grad)
                for (size_t i = 0; i < static_cast<size_t>(nb) * d; ++i)
                    (*pb.grad)[i] += (*o.grad)[asz + i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& x, int start, int len) {
    if (x.ndim() != 2) throw std::invalid_argument("slice_rows: expected 2-D input");
    if (start < 0 || len < 0 || start + len > x.dim(0))
        throw std::invalid_argument("slice_rows: range out of bounds");
    const int d = x.dim(1);
    TensorT<T> out = TensorT<T>::zeros({len, d});
    std::copy(x.ptr() + static_cast<size_t>(start) * d,
              x.ptr() + static_cast<size_t>(start + len) * d, out.ptr());
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [start, d](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            const size_t off = static_cast<size_t>(start) * d;
            for (size_t i = 0; i < o.numel(); ++i) (*px.grad)[off + i] += (*o.grad)[i];
        });
    }
    return out;
}

// Contiguous slice of a flat vector (modulation chunking).
template <typename T>
TensorT<T> slice_vec(const TensorT<T>& x, int start, int len) {
    if (x.ndim() != 1) throw std::invalid_argument("slice_vec: expected 1-D input");
    if (start < 0 || len < 0 || start + len > x.dim(0))
        throw std::invalid_argument("slice_vec: range out of bounds");
    TensorT<T> out = TensorT<T>::zeros({len});
    std::copy(x.ptr() + start, x.ptr() + start + len, out.ptr());
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [start](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (size_t i = 0; i < o.numel(); ++i)
                (*px.grad)[static_cast<size_t>(start) + i] += (*o.grad)[i];
        });
    }
    return out;
}

// y[i,:] = x[i,:] * v  (broadcast over rows)
template <typename T>
TensorT<T> mul_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
    auto [n, d] = detail::as_rows(x, "mul_rowvec");
    if (v.ndim() != 1 || v.dim(0) != d) throw std::invalid_argument("mul_rowvec: bad vector size");
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(static_cast<size_t>(i) * d + j) = x.at(static_cast<size_t>(i) * d + j) * v.at(j);
    if (want_grad<T>({&x, &v})) {
        attach_node<T>(out, {x, v}, [n, d](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            auto& pv = o.node->parents[1];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) {
                    const size_t idx = static_cast<size_t>(i) * d + j;
                    const T g = (*o.grad)[idx];
                    if (px.grad) (*px.grad)[idx] += g * pv.at(j);
                    if (pv.grad) (*pv.grad)[j] += g * px.at(idx);
                }
        });
    }
    return out;
}

// y[i,:] = x[i,:] + v
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
    auto [n, d] = detail::as_rows(x, "add_rowvec");
    if (v.ndim() != 1 || v.dim(0) != d) throw std::invalid_argument("add_rowvec: bad vector size");
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out.at(static_cast<size_t>(i) * d + j) = x.at(static_cast<size_t>(i) * d + j) + v.at(j);
    if (want_grad<T>({&x, &v})) {
        attach_node<T>(out, {x, v}, [n, d](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            auto& pv = o.node->parents[1];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) {
                    const T g = (*o.grad)[static_cast<size_t>(i) * d + j];
                    if (px.grad) (*px.grad)[static_cast<size_t>(i) * d + j] += g;
                    if (pv.grad) (*pv.grad)[j] += g;
                }
        });
    }
    return out;
}

// ---- taped layers ----

// y = x W^T + b with W[out,in]; x may be [in] or [n,in].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    auto [n, in] = detail::as_rows(x, "linear");
    if (w.ndim() != 2 || w.dim(1) != in) throw std::invalid_argument("linear: weight shape mismatch");
    const int out_dim = w.dim(0);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim))
        throw std::invalid_argument("linear: bias shape mismatch");

    std::vector<int> oshape = (x.ndim() == 1) ? std::vector<int>{out_dim}
                                              : std::vector<int>{n, out_dim};
    TensorT<T> out = TensorT<T>::zeros(oshape);
    detail::mm_nt(out.ptr(), x.ptr(), w.ptr(), n, in, out_dim);
    if (b.defined())
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) out.at(static_cast<size_t>(i) * out_dim + j) += b.at(j);

    const bool has_bias = b.defined();
    bool taped = has_bias ? want_grad<T>({&x, &w, &b}) : want_grad<T>({&x, &w});
    if (taped) {
        std::vector<TensorT<T>> parents = has_bias ? std::vector<TensorT<T>>{x, w, b}
                                                   : std::vector<TensorT<T>>{x, w};
        attach_node<T>(out, std::move(parents), [n, in, out_dim, has_bias](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            auto& pw = o.node->parents[1];
            const T* gy = o.grad->data();
            if (px.grad) detail::mm_nn(px.grad->data(), gy, pw.ptr(), n, out_dim, in);
            if (pw.grad) detail::mm_tn(pw.grad->data(), gy, px.ptr(), out_dim, n, in);
            if (has_bias) {
                auto& pb = o.node->parents[2];
                if (pb.grad)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < out_dim; ++j)
                            (*pb.grad)[j] += gy[static_cast<size_t>(i) * out_dim + j];
            }
        });
    }
    return out;
}

// Row-wise layer norm without affine parameters; eps inside the sqrt.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, T eps = T(1e-6)) {
    auto [n, d] = detail::as_rows(x, "layer_norm");
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = x.ptr() + static_cast<size_t>(i) * d;
        T* orow = out.ptr() + static_cast<size_t>(i) * d;
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = inv;
        for (int j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv;
    }
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [n, d, inv_std](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (int i = 0; i < n; ++i) {
                const T* y = o.ptr() + static_cast<size_t>(i) * d;
                const T* gy = o.grad->data() + static_cast<size_t>(i) * d;
                T* gx = px.grad->data() + static_cast<size_t>(i) * d;
                T gmean = T(0), gdoty = T(0);
                for (int j = 0; j < d; ++j) {
                    gmean += gy[j];
                    gdoty += gy[j] * y[j];
                }
                gmean /= static_cast<T>(d);
                gdoty /= static_cast<T>(d);
                const T inv = (*inv_std)[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j) gx[j] += inv * (gy[j] - gmean - y[j] * gdoty);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) {
        const T s = sigmoid_scalar(x.at(i));
        out.at(i) = x.at(i) * s;
    }
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (size_t i = 0; i < o.numel(); ++i) {
                const T xi = px.at(i);
                const T s = sigmoid_scalar(xi);
                (*px.grad)[i] += (*o.grad)[i] * (s + xi * s * (T(1) - s));
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) out.at(i) = sigmoid_scalar(x.at(i));
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (size_t i = 0; i < o.numel(); ++i) {
                const T y = o.at(i);
                (*px.grad)[i] += (*o.grad)[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    auto [n, d] = detail::as_rows(x, "softmax_rows");
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (int i = 0; i < n; ++i) {
        auto row = softmax_vec(x.ptr() + static_cast<size_t>(i) * d, d);
        std::copy(row.begin(), row.end(), out.ptr() + static_cast<size_t>(i) * d);
    }
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [n, d](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (int i = 0; i < n; ++i) {
                const T* y = o.ptr() + static_cast<size_t>(i) * d;
                const T* gy = o.grad->data() + static_cast<size_t>(i) * d;
                T* gx = px.grad->data() + static_cast<size_t>(i) * d;
                T dot = T(0);
                for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// Post-softmax attention weights, [heads, n, n] flattened; shared by the
// fused op below and by tests that check row sums.
template <typename T>
std::vector<T> attention_weights(const TensorT<T>& q, const TensorT<T>& k, int heads) {
    const int n = q.dim(0), h = q.dim(1);
    const int nk = k.dim(0);
    const int hd = h / heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> w(static_cast<size_t>(heads) * n * nk);
    std::vector<T> scores(static_cast<size_t>(nk));
    for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        for (int i = 0; i < n; ++i) {
            const T* qi = q.ptr() + static_cast<size_t>(i) * h + off;
            for (int j = 0; j < nk; ++j) {
                const T* kj = k.ptr() + static_cast<size_t>(j) * h + off;
                T acc = T(0);
                for (int d = 0; d < hd; ++d) acc += qi[d] * kj[d];
                scores[static_cast<size_t>(j)] = acc * inv_scale;
            }
            auto sm = softmax_vec(scores.data(), nk);
            std::copy(sm.begin(), sm.end(),
                      w.begin() + (static_cast<size_t>(hh) * n + i) * nk);
        }
    }
    return w;
}

// Fused multi-head self-attention over one sequence: softmax(QK^T/sqrt(hd))V
// per head, heads split along the feature dim. q,k,v are [n,h] already
// projected; output is [n,h] before the output projection.
template <typename T>
TensorT<T> multihead_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                               int heads) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw std::invalid_argument("multihead_attention: expected 2-D inputs");
    const int n = q.dim(0), h = q.dim(1);
    const int nk = k.dim(0);
    if (k.dim(1) != h || v.dim(1) != h || v.dim(0) != nk)
        throw std::invalid_argument("multihead_attention: shape mismatch");
    if (heads <= 0 || h % heads != 0)
        throw std::invalid_argument("multihead_attention: heads must divide feature dim");
    const int hd = h / heads;

    auto weights = std::make_shared<std::vector<T>>(attention_weights(q, k, heads));
    TensorT<T> out = TensorT<T>::zeros({n, h});
    for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        for (int i = 0; i < n; ++i) {
            const T* wrow = weights->data() + (static_cast<size_t>(hh) * n + i) * nk;
            T* orow = out.ptr() + static_cast<size_t>(i) * h + off;
            for (int j = 0; j < nk; ++j) {
                const T wij = wrow[j];
                const T* vj = v.ptr() + static_cast<size_t>(j) * h + off;
                for (int d = 0; d < hd; ++d) orow[d] += wij * vj[d];
            }
        }
    }

    if (want_grad<T>({&q, &k, &v})) {
        attach_node<T>(out, {q, k, v}, [n, nk, h, heads, hd, weights](const TensorT<T>& o) {
            auto& pq = o.node->parents[0];
            auto& pk = o.node->parents[1];
            auto& pv = o.node->parents[2];
            const T inv_scale = T(1) / std::sqrt(static_cast<T>(hd));
            std::vector<T> gw(static_cast<size_t>(nk));
            std::vector<T> gs(static_cast<size_t>(nk));
            for (int hh = 0; hh < heads; ++hh) {
                const int off = hh * hd;
                for (int i = 0; i < n; ++i) {
                    const T* go = o.grad->data() + static_cast<size_t>(i) * h + off;
                    const T* wrow = weights->data() + (static_cast<size_t>(hh) * n + i) * nk;
                    // dW and dV
                    for (int j = 0; j < nk; ++j) {
                        const T* vj = pv.ptr() + static_cast<size_t>(j) * h + off;
                        T acc = T(0);
                        for (int d = 0; d < hd; ++d) acc += go[d] * vj[d];
                        gw[static_cast<size_t>(j)] = acc;
                        if (pv.grad) {
                            T* gvj = pv.grad->data() + static_cast<size_t>(j) * h + off;
                            const T wij = wrow[j];
                            for (int d = 0; d < hd; ++d) gvj[d] += wij * go[d];
                        }
                    }
                    // softmax backward to raw scores
                    T dot = T(0);
                    for (int j = 0; j < nk; ++j) dot += gw[static_cast<size_t>(j)] * wrow[j];
                    for (int j = 0; j < nk; ++j)
                        gs[static_cast<size_t>(j)] = wrow[j] * (gw[static_cast<size_t>(j)] - dot) * inv_scale;
                    // dQ and dK
                    const T* qi = pq.ptr() + static_cast<size_t>(i) * h + off;
                    T* gqi = pq.grad ? pq.grad->data() + static_cast<size_t>(i) * h + off : nullptr;
                    for (int j = 0; j < nk; ++j) {
                        const T s = gs[static_cast<size_t>(j)];
                        const T* kj = pk.ptr() + static_cast<size_t>(j) * h + off;
                        if (gqi)
                            for (int d = 0; d < hd; ++d) gqi[d] += s * kj[d];
                        if (pk.grad) {
                            T* gkj = pk.grad->data() + static_cast<size_t>(j) * h + off;
                            for (int d = 0; d < hd; ++d) gkj[d] += s * qi[d];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Row gather from an embedding table; backward scatter-adds.
template <typename T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v) throw std::invalid_argument("embedding: id out of range");
    TensorT<T> out = TensorT<T>::zeros({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table.ptr() + static_cast<size_t>(ids[i]) * d,
                  table.ptr() + static_cast<size_t>(ids[i] + 1) * d, out.ptr() + i * d);
    if (want_grad<T>({&table})) {
        attach_node<T>(out, {table}, [ids, d](const TensorT<T>& o) {
            auto& pt = o.node->parents[0];
            if (!pt.grad) return;
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    (*pt.grad)[static_cast<size_t>(ids[i]) * d + j] += (*o.grad)[i * d + j];
        });
    }
    return out;
}

// Column means over rows: [n,d] -> [d].
template <typename T>
TensorT<T> mean_rows(const TensorT<T>& x) {
    if (x.ndim() != 2) throw std::invalid_argument("mean_rows: expected 2-D input");
    const int n = x.dim(0), d = x.dim(1);
    if (n == 0) throw std::invalid_argument("mean_rows: empty input");
    TensorT<T> out = TensorT<T>::zeros({d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(j) += x.at(static_cast<size_t>(i) * d + j);
    for (int j = 0; j < d; ++j) out.at(j) /= static_cast<T>(n);
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [n, d](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    (*px.grad)[static_cast<size_t>(i) * d + j] += (*o.grad)[j] / static_cast<T>(n);
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros({1});
    T s = T(0);
    for (size_t i = 0; i < x.numel(); ++i) s += x.at(i);
    out.at(0) = s;
    if (want_grad<T>({&x})) {
        attach_node<T>(out, {x}, [](const TensorT<T>& o) {
            auto& px = o.node->parents[0];
            if (!px.grad) return;
            for (size_t i = 0; i < px.numel(); ++i) (*px.grad)[i] += (*o.grad)[0];
        });
    }
    return out;
}

// Mean squared error over all elements -> scalar.
template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mse");
    const size_t n = a.numel();
    if (n == 0) throw std::invalid_argument("mse: empty input");
    TensorT<T> out = TensorT<T>::zeros({1});
    T s = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T d = a.at(i) - b.at(i);
        s += d * d;
    }
    out.at(0) = s / static_cast<T>(n);
    if (want_grad<T>({&a, &b})) {
        attach_node<T>(out, {a, b}, [n](const TensorT<T>& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            const T g = (*o.grad)[0] * T(2) / static_cast<T>(n);
            for (size_t i = 0; i < n; ++i) {
                const T d = pa.at(i) - pb.at(i);
                if (pa.grad) (*pa.grad)[i] += g * d;
                if (pb.grad) (*pb.grad)[i] -= g * d;
            }
        });
    }
    return out;
}

}  // namespace rfedit
