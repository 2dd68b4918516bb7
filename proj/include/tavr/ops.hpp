#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "tavr/tensor.hpp"

namespace tavr {

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (T x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string(op) + ": non-finite value produced");
}

template <typename T>
Tape<T>* tape_of(const char* op, std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : inputs) {
        if (!t->on_tape()) continue;
        if (tape && tape != t->tape())
            throw std::runtime_error(std::string(op) + ": inputs live on different tapes");
        tape = t->tape();
    }
    return tape;
}

template <typename T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data,
                 std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void(const std::vector<T>&, Tape<T>&)> pull) {
    check_finite(data, op);
    Tape<T>* tape = tape_of(op, inputs);
    Tensor<T> out = Tensor<T>::wrap(std::move(shape), std::make_shared<const std::vector<T>>(std::move(data)));
    if (tape) out.attach(tape, tape->record(std::move(pull)));
    return out;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& a) {
    if (a.rank() != 2) throw std::runtime_error(std::string(op) + ": rank-2 tensor required");
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    const T* pb = b.vec().data();
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    int na = a.node(), nb = b.node();
    return detail::finish<T>("add", a.shape(), std::move(out), {&a, &b},
                             [na, nb, n](const std::vector<T>& og, Tape<T>& t) {
                                 if (na >= 0) {
                                     auto& g = t.accum(na, n);
                                     for (size_t i = 0; i < n; ++i) g[i] += og[i];
                                 }
                                 if (nb >= 0) {
                                     auto& g = t.accum(nb, n);
                                     for (size_t i = 0; i < n; ++i) g[i] += og[i];
                                 }
                             });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a, b);
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    const T* pb = b.vec().data();
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
    int na = a.node(), nb = b.node();
    return detail::finish<T>("sub", a.shape(), std::move(out), {&a, &b},
                             [na, nb, n](const std::vector<T>& og, Tape<T>& t) {
                                 if (na >= 0) {
                                     auto& g = t.accum(na, n);
                                     for (size_t i = 0; i < n; ++i) g[i] += og[i];
                                 }
                                 if (nb >= 0) {
                                     auto& g = t.accum(nb, n);
                                     for (size_t i = 0; i < n; ++i) g[i] -= og[i];
                                 }
                             });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a, b);
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    const T* pb = b.vec().data();
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    int na = a.node(), nb = b.node();
    auto da = a.data_ptr();
    auto db = b.data_ptr();
    return detail::finish<T>("mul", a.shape(), std::move(out), {&a, &b},
                             [na, nb, n, da, db](const std::vector<T>& og, Tape<T>& t) {
                                 if (na >= 0) {
                                     auto& g = t.accum(na, n);
                                     const T* q = db->data();
                                     for (size_t i = 0; i < n; ++i) g[i] += og[i] * q[i];
                                 }
                                 if (nb >= 0) {
                                     auto& g = t.accum(nb, n);
                                     const T* q = da->data();
                                     for (size_t i = 0; i < n; ++i) g[i] += og[i] * q[i];
                                 }
                             });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] * s;
    int na = a.node();
    return detail::finish<T>("scale", a.shape(), std::move(out), {&a},
                             [na, n, s](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 for (size_t i = 0; i < n; ++i) g[i] += og[i] * s;
                             });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] + s;
    int na = a.node();
    return detail::finish<T>("add_scalar", a.shape(), std::move(out), {&a},
                             [na, n](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 for (size_t i = 0; i < n; ++i) g[i] += og[i];
                             });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2("matmul", a);
    detail::require_rank2("matmul", b);
    size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw std::runtime_error("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    std::vector<T> out(m * n, T(0));
    {
        const T* pa = a.vec().data();
        const T* pb = b.vec().data();
        T* po = out.data();
        for (size_t i = 0; i < m; ++i)
            for (size_t l = 0; l < k; ++l) {
                T av = pa[i * k + l];
                const T* brow = pb + l * n;
                T* orow = po + i * n;
                for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
    }
    int na = a.node(), nb = b.node();
    auto da = a.data_ptr();
    auto db = b.data_ptr();
    return detail::finish<T>(
        "matmul", Shape{m, n}, std::move(out), {&a, &b},
        [na, nb, m, k, n, da, db](const std::vector<T>& og, Tape<T>& t) {
            if (na >= 0) {
                auto& g = t.accum(na, m * k);
                const T* pb = db->data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t l = 0; l < k; ++l) {
                        T acc = 0;
                        const T* orow = og.data() + i * n;
                        const T* brow = pb + l * n;
                        for (size_t j = 0; j < n; ++j) acc += orow[j] * brow[j];
                        g[i * k + l] += acc;
                    }
            }
            if (nb >= 0) {
                auto& g = t.accum(nb, k * n);
                const T* pa = da->data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t l = 0; l < k; ++l) {
                        T av = pa[i * k + l];
                        const T* orow = og.data() + i * n;
                        T* grow = g.data() + l * n;
                        for (size_t j = 0; j < n; ++j) grow[j] += av * orow[j];
                    }
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank2("transpose", a);
    size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
    int na = a.node();
    return detail::finish<T>("transpose", Shape{n, m}, std::move(out), {&a},
                             [na, m, n](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, m * n);
                                 for (size_t j = 0; j < n; ++j)
                                     for (size_t i = 0; i < m; ++i) g[i * n + j] += og[j * m + i];
                             });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    detail::require_rank2("softmax_rows", a);
    size_t m = a.rows(), n = a.cols();
    if (m > 0 && n == 0) throw std::runtime_error("softmax_rows: empty rows");
    std::vector<T> out(m * n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < m; ++i) {
        const T* row = pa + i * n;
        T mx = row[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (size_t j = 0; j < n; ++j) {
            T e = std::exp(row[j] - mx);
            out[i * n + j] = e;
            sum += e;
        }
        for (size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
    }
    int na = a.node();
    auto dy = std::make_shared<const std::vector<T>>(out);
    return detail::finish<T>("softmax_rows", a.shape(), std::move(out), {&a},
                             [na, m, n, dy](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, m * n);
                                 const T* y = dy->data();
                                 for (size_t i = 0; i < m; ++i) {
                                     const T* yrow = y + i * n;
                                     const T* orow = og.data() + i * n;
                                     T dot = 0;
                                     for (size_t j = 0; j < n; ++j) dot += orow[j] * yrow[j];
                                     T* grow = g.data() + i * n;
                                     for (size_t j = 0; j < n; ++j) grow[j] += yrow[j] * (orow[j] - dot);
                                 }
                             });
}

// Row-wise layer norm over the last dimension of a rank-2 input, with affine
// parameters. Variance is the population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    detail::require_rank2("layer_norm", x);
    size_t m = x.rows(), d = x.cols();
    if (gamma.size() != d || beta.size() != d)
        throw std::runtime_error("layer_norm: affine parameter size must match feature dimension");
    std::vector<T> out(m * d);
    auto xhat = std::make_shared<std::vector<T>>(m * d);
    auto inv = std::make_shared<std::vector<T>>(m);
    const T* px = x.vec().data();
    const T* pg = gamma.vec().data();
    const T* pb = beta.vec().data();
    for (size_t i = 0; i < m; ++i) {
        const T* row = px + i * d;
        T mean = 0;
        for (size_t j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        T var = 0;
        for (size_t j = 0; j < d; ++j) {
            T c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        T iv = T(1) / std::sqrt(var + eps);
        (*inv)[i] = iv;
        for (size_t j = 0; j < d; ++j) {
            T xh = (row[j] - mean) * iv;
            (*xhat)[i * d + j] = xh;
            out[i * d + j] = xh * pg[j] + pb[j];
        }
    }
    int nx = x.node(), ng = gamma.node(), nb = beta.node();
    auto dg = gamma.data_ptr();
    return detail::finish<T>(
        "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
        [nx, ng, nb, m, d, xhat, inv, dg](const std::vector<T>& og, Tape<T>& t) {
            const T* pg = dg->data();
            if (nx >= 0) {
                auto& g = t.accum(nx, m * d);
                for (size_t i = 0; i < m; ++i) {
                    const T* orow = og.data() + i * d;
                    const T* xh = xhat->data() + i * d;
                    T sum1 = 0, sum2 = 0;
                    for (size_t j = 0; j < d; ++j) {
                        T dxh = orow[j] * pg[j];
                        sum1 += dxh;
                        sum2 += dxh * xh[j];
                    }
                    T iv = (*inv)[i];
                    T* grow = g.data() + i * d;
                    for (size_t j = 0; j < d; ++j) {
                        T dxh = orow[j] * pg[j];
                        grow[j] += iv * (dxh - sum1 / d - xh[j] * sum2 / d);
                    }
                }
            }
            if (ng >= 0) {
                auto& g = t.accum(ng, d);
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < d; ++j) g[j] += og[i * d + j] * (*xhat)[i * d + j];
            }
            if (nb >= 0) {
                auto& g = t.accum(nb, d);
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < d; ++j) g[j] += og[i * d + j];
            }
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) {
        T x = pa[i];
        out[i] = x * T(0.5) * (T(1) + std::erf(x / T(M_SQRT2)));
    }
    int na = a.node();
    auto da = a.data_ptr();
    return detail::finish<T>("gelu", a.shape(), std::move(out), {&a},
                             [na, n, da](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 const T* px = da->data();
                                 for (size_t i = 0; i < n; ++i) {
                                     T x = px[i];
                                     T phi = T(0.5) * (T(1) + std::erf(x / T(M_SQRT2)));
                                     T pdf = std::exp(-x * x / T(2)) / std::sqrt(T(2) * T(M_PI));
                                     g[i] += og[i] * (phi + x * pdf);
                                 }
                             });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) {
        T x = pa[i];
        out[i] = x / (T(1) + std::exp(-x));
    }
    int na = a.node();
    auto da = a.data_ptr();
    return detail::finish<T>("silu", a.shape(), std::move(out), {&a},
                             [na, n, da](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 const T* px = da->data();
                                 for (size_t i = 0; i < n; ++i) {
                                     T x = px[i];
                                     T s = T(1) / (T(1) + std::exp(-x));
                                     g[i] += og[i] * s * (T(1) + x * (T(1) - s));
                                 }
                             });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    size_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) {
        T x = pa[i];
        out[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    int na = a.node();
    auto da = a.data_ptr();
    return detail::finish<T>("softplus", a.shape(), std::move(out), {&a},
                             [na, n, da](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 const T* px = da->data();
                                 for (size_t i = 0; i < n; ++i)
                                     g[i] += og[i] / (T(1) + std::exp(-px[i]));
                             });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    size_t n = a.size();
    T acc = 0;
    const T* pa = a.vec().data();
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    int na = a.node();
    return detail::finish<T>("sum_all", Shape{}, std::vector<T>{acc}, {&a},
                             [na, n](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, n);
                                 for (size_t i = 0; i < n; ++i) g[i] += og[0];
                             });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    size_t n = a.size();
    if (n == 0) throw std::runtime_error("mean_all: empty tensor");
    return scale(sum_all(a), T(1) / T(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::runtime_error("reshape: element count mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(shape));
    Tensor<T> out = Tensor<T>::wrap(std::move(shape), a.data_ptr());
    if (a.on_tape()) {
        int na = a.node();
        size_t n = a.size();
        out.attach(a.tape(), a.tape()->record([na, n](const std::vector<T>& og, Tape<T>& t) {
            auto& g = t.accum(na, n);
            for (size_t i = 0; i < n; ++i) g[i] += og[i];
        }));
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, size_t r0, size_t r1) {
    detail::require_rank2("slice_rows", a);
    size_t m = a.rows(), n = a.cols();
    if (r0 > r1 || r1 > m) throw std::runtime_error("slice_rows: range out of bounds");
    size_t rows = r1 - r0;
    std::vector<T> out(rows * n);
    std::copy_n(a.vec().data() + r0 * n, rows * n, out.data());
    int na = a.node();
    return detail::finish<T>("slice_rows", Shape{rows, n}, std::move(out), {&a},
                             [na, m, n, r0, rows](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, m * n);
                                 for (size_t i = 0; i < rows * n; ++i) g[r0 * n + i] += og[i];
                             });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
    size_t n = parts[0].cols();
    size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2("concat_rows", p);
        if (p.cols() != n) throw std::runtime_error("concat_rows: column count mismatch");
        total += p.rows();
    }
    std::vector<T> out(total * n);
    size_t off = 0;
    Tape<T>* tape = nullptr;
    std::vector<int> ids(parts.size(), -1);
    std::vector<size_t> sizes(parts.size()), offs(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        const auto& t = parts[p];
        std::copy_n(t.vec().data(), t.size(), out.data() + off);
        offs[p] = off;
        sizes[p] = t.size();
        off += t.size();
        if (t.on_tape()) {
            if (tape && tape != t.tape()) throw std::runtime_error("concat_rows: inputs live on different tapes");
            tape = t.tape();
            ids[p] = t.node();
        }
    }
    Tensor<T> r = Tensor<T>::wrap(Shape{total, n}, std::make_shared<const std::vector<T>>(std::move(out)));
    detail::check_finite(r.vec(), "concat_rows");
    if (tape) {
        r.attach(tape, tape->record([ids, sizes, offs](const std::vector<T>& og, Tape<T>& t) {
            for (size_t p = 0; p < ids.size(); ++p) {
                if (ids[p] < 0) continue;
                auto& g = t.accum(ids[p], sizes[p]);
                for (size_t i = 0; i < sizes[p]; ++i) g[i] += og[offs[p] + i];
            }
        }));
    }
    return r;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, size_t c0, size_t c1) {
    detail::require_rank2("slice_cols", a);
    size_t m = a.rows(), n = a.cols();
    if (c0 > c1 || c1 > n) throw std::runtime_error("slice_cols: range out of bounds");
    size_t cols = c1 - c0;
    std::vector<T> out(m * cols);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < m; ++i)
        std::copy_n(pa + i * n + c0, cols, out.data() + i * cols);
    int na = a.node();
    return detail::finish<T>("slice_cols", Shape{m, cols}, std::move(out), {&a},
                             [na, m, n, c0, cols](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, m * n);
                                 for (size_t i = 0; i < m; ++i)
                                     for (size_t j = 0; j < cols; ++j)
                                         g[i * n + c0 + j] += og[i * cols + j];
                             });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_cols: no inputs");
    size_t m = parts[0].rows();
    size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2("concat_cols", p);
        if (p.rows() != m) throw std::runtime_error("concat_cols: row count mismatch");
        total += p.cols();
    }
    std::vector<T> out(m * total);
    Tape<T>* tape = nullptr;
    std::vector<int> ids(parts.size(), -1);
    std::vector<size_t> widths(parts.size()), coffs(parts.size());
    size_t coff = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
        const auto& t = parts[p];
        size_t w = t.cols();
        const T* pt = t.vec().data();
        for (size_t i = 0; i < m; ++i)
            std::copy_n(pt + i * w, w, out.data() + i * total + coff);
        coffs[p] = coff;
        widths[p] = w;
        coff += w;
        if (t.on_tape()) {
            if (tape && tape != t.tape()) throw std::runtime_error("concat_cols: inputs live on different tapes");
            tape = t.tape();
            ids[p] = t.node();
        }
    }
    Tensor<T> r = Tensor<T>::wrap(Shape{m, total}, std::make_shared<const std::vector<T>>(std::move(out)));
    detail::check_finite(r.vec(), "concat_cols");
    if (tape) {
        r.attach(tape, tape->record([ids, widths, coffs, m, total](const std::vector<T>& og, Tape<T>& t) {
            for (size_t p = 0; p < ids.size(); ++p) {
                if (ids[p] < 0) continue;
                size_t w = widths[p];
                auto& g = t.accum(ids[p], m * w);
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < w; ++j) g[i * w + j] += og[i * total + coffs[p] + j];
            }
        }));
    }
    return r;
}

// out row i = a row idx[i]. Backward scatter-adds, so repeated indices are fine.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<size_t>& idx) {
    detail::require_rank2("gather_rows", a);
    size_t m = a.rows(), n = a.cols();
    std::vector<T> out(idx.size() * n);
    const T* pa = a.vec().data();
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= m) throw std::runtime_error("gather_rows: index out of bounds");
        std::copy_n(pa + idx[i] * n, n, out.data() + i * n);
    }
    int na = a.node();
    return detail::finish<T>("gather_rows", Shape{idx.size(), n}, std::move(out), {&a},
                             [na, m, n, idx](const std::vector<T>& og, Tape<T>& t) {
                                 if (na < 0) return;
                                 auto& g = t.accum(na, m * n);
                                 for (size_t i = 0; i < idx.size(); ++i)
                                     for (size_t j = 0; j < n; ++j) g[idx[i] * n + j] += og[i * n + j];
                             });
}

// y[i,j] = x[i,j] * (1 + s[j]) + h[j]. With s = h = 0 this is the identity,
// which is what makes zero-initialised modulation start out neutral.
template <typename T>
Tensor<T> rowwise_scale_shift(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& h) {
    detail::require_rank2("rowwise_scale_shift", x);
    size_t m = x.rows(), d = x.cols();
    if (s.size() != d || h.size() != d)
        throw std::runtime_error("rowwise_scale_shift: modulation size must match feature dimension");
    std::vector<T> out(m * d);
    const T* px = x.vec().data();
    const T* ps = s.vec().data();
    const T* ph = h.vec().data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = px[i * d + j] * (T(1) + ps[j]) + ph[j];
    int nx = x.node(), ns = s.node(), nh = h.node();
    auto dx = x.data_ptr();
    auto ds = s.data_ptr();
    return detail::finish<T>("rowwise_scale_shift", x.shape(), std::move(out), {&x, &s, &h},
                             [nx, ns, nh, m, d, dx, ds](const std::vector<T>& og, Tape<T>& t) {
                                 if (nx >= 0) {
                                     auto& g = t.accum(nx, m * d);
                                     const T* ps = ds->data();
                                     for (size_t i = 0; i < m; ++i)
                                         for (size_t j = 0; j < d; ++j)
                                             g[i * d + j] += og[i * d + j] * (T(1) + ps[j]);
                                 }
                                 if (ns >= 0) {
                                     auto& g = t.accum(ns, d);
                                     const T* px = dx->data();
                                     for (size_t i = 0; i < m; ++i)
                                         for (size_t j = 0; j < d; ++j) g[j] += og[i * d + j] * px[i * d + j];
                                 }
                                 if (nh >= 0) {
                                     auto& g = t.accum(nh, d);
                                     for (size_t i = 0; i < m; ++i)
                                         for (size_t j = 0; j < d; ++j) g[j] += og[i * d + j];
                                 }
                             });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return mul(a, a);
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    return mean_all(square(sub(a, b)));
}

// Multi-head scaled dot-product attention on pre-projected Q/K/V.
// No projections of its own; callers apply their weight matrices.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, size_t heads) {
    detail::require_rank2("attention_core", q);
    detail::require_rank2("attention_core", k);
    detail::require_rank2("attention_core", v);
    size_t d = q.cols();
    if (k.cols() != d || v.cols() != d) throw std::runtime_error("attention_core: feature dimension mismatch");
    if (k.rows() != v.rows()) throw std::runtime_error("attention_core: key/value row count mismatch");
    if (heads == 0 || d % heads != 0)
        throw std::runtime_error("attention_core: feature dimension not divisible by head count");
    if (q.rows() == 0) return q;
    if (k.rows() == 0) throw std::runtime_error("attention_core: empty key set");
    size_t dh = d / heads;
    T inv_sqrt = T(1) / std::sqrt(T(dh));
    std::vector<Tensor<T>> outs;
    outs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor<T> att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        outs.push_back(matmul(att, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

// Central-difference gradient verification. Only meaningful in 64-bit.
struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// zero_tol > 0 treats entries where analytic and numeric are both below it as
// agreeing; gradients that are structurally zero otherwise drown in rounding
// noise of the central difference.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double step = 1e-6,
                                  double zero_tol = 0.0) {
    Tape<double> tape;
    Tensor<double> xl = tape.leaf(x);
    Tensor<double> loss = f(xl);
    if (loss.size() != 1) throw std::runtime_error("grad_check: function must return a scalar");
    tape.backward(loss);
    Tensor<double> g = tape.grad(xl);

    GradCheckResult res;
    std::vector<double> base = x.vec();
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<double> hi = base, lo = base;
        hi[i] += step;
        lo[i] -= step;
        double fp = f(Tensor<double>(x.shape(), std::move(hi))).item();
        double fm = f(Tensor<double>(x.shape(), std::move(lo))).item();
        double numeric = (fp - fm) / (2 * step);
        double analytic = g.at(i);
        if (std::abs(analytic) < zero_tol && std::abs(numeric) < zero_tol) continue;
        double rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_index = i;
            res.worst_analytic = analytic;
            res.worst_numeric = numeric;
        }
    }
    return res;
}

}  // namespace tavr
