// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "plora/tensor.hpp"

namespace plora {

namespace detail {

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

template <typename T>
Tensor<T> finish_op(const char* op, Shape shape, std::vector<T> value,
                    std::vector<Tensor<T>> parents,
                    std::function<void(Node<T>&)> backward_fn) {
    check_finite(op, value);
    auto n = std::make_shared<Node<T>>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

template <typename T>
inline void accumulate(Node<T>& dst, const std::vector<T>& inc) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < inc.size(); ++i) dst.grad[i] += inc[i];
}

constexpr std::size_t kParallelFlops = 1u << 16;

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul and friends

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* pc = out.data();
    const bool par = m * n * k >= detail::kParallelFlops;
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* crow = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            if (av == T(0)) continue;
            const T* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return detail::finish_op<T>(
        "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& node) {
            const auto& g = node.grad;
            auto& na = *node.parents[0];
            auto& nb = *node.parents[1];
            const T* pa = na.value.data();
            const T* pb = nb.value.data();
            if (na.requires_grad) {
                na.ensure_grad();
                T* da = na.grad.data();
                const bool par = m * n * k >= detail::kParallelFlops;
#pragma omp parallel for schedule(static) if (par)
                for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = T(0);
                        const T* grow = g.data() + i * n;
                        const T* brow = pb + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + p] += acc;
                    }
                }
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                T* db = nb.grad.data();
                const bool par = m * n * k >= detail::kParallelFlops;
#pragma omp parallel for schedule(static) if (par)
                for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
                    T* drow = db + p * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const T av = pa[i * k + p];
                        if (av == T(0)) continue;
                        const T* grow = g.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.ndim() != 2) throw DimensionError("transpose expects a 2-D tensor");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<T> out(m * n);
    const T* px = x.values().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = px[i * n + j];
    return detail::finish_op<T>("transpose", {n, m}, std::move(out), {x},
                                [m, n](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < n; ++j)
                                            nx.grad[i * n + j] += node.grad[j * m + i];
                                });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::finish_op<T>("add", a.shape(), std::move(out), {a, b},
                                [](detail::Node<T>& node) {
                                    for (int s = 0; s < 2; ++s) {
                                        auto& p = *node.parents[s];
                                        if (p.requires_grad) detail::accumulate(p, node.grad);
                                    }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::finish_op<T>("mul", a.shape(), std::move(out), {a, b},
                                [](detail::Node<T>& node) {
                                    auto& na = *node.parents[0];
                                    auto& nb = *node.parents[1];
                                    if (na.requires_grad) {
                                        na.ensure_grad();
                                        for (std::size_t i = 0; i < node.grad.size(); ++i)
                                            na.grad[i] += node.grad[i] * nb.value[i];
                                    }
                                    if (nb.requires_grad) {
                                        nb.ensure_grad();
                                        for (std::size_t i = 0; i < node.grad.size(); ++i)
                                            nb.grad[i] += node.grad[i] * na.value[i];
                                    }
                                });
}

// y = a*x + b with scalar coefficients
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.values()[i] + b;
    return detail::finish_op<T>("affine", x.shape(), std::move(out), {x},
                                [a](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < node.grad.size(); ++i)
                                        nx.grad[i] += a * node.grad[i];
                                });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T a) {
    return affine(x, a, T(0));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T b) {
    return affine(x, T(1), b);
}

// broadcast a length-n vector over the rows of an m x n matrix
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    if (x.ndim() != 2 || v.size() != x.cols())
        throw DimensionError("add_rowvec shape mismatch: " + shape_str(x.shape()) + " + " +
                             shape_str(v.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.values()[i * n + j] + v.values()[j];
    return detail::finish_op<T>("add_rowvec", x.shape(), std::move(out), {x, v},
                                [m, n](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    auto& nv = *node.parents[1];
                                    if (nx.requires_grad) detail::accumulate(nx, node.grad);
                                    if (nv.requires_grad) {
                                        nv.ensure_grad();
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t j = 0; j < n; ++j)
                                                nv.grad[j] += node.grad[i * n + j];
                                    }
                                });
}

// exact gaussian-CDF form
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(x.values()[i]);
        out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
    }
    return detail::finish_op<T>(
        "gelu", x.shape(), std::move(out), {x}, [](detail::Node<T>& node) {
            auto& nx = *node.parents[0];
            if (!nx.requires_grad) return;
            nx.ensure_grad();
            static const double inv_sqrt2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                const double v = static_cast<double>(nx.value[i]);
                const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double dens = inv_sqrt2pi * std::exp(-0.5 * v * v);
                nx.grad[i] += node.grad[i] * static_cast<T>(phi + v * dens);
            }
        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(x.values()[i]);
        double y;
        if (v >= 0.0) {
            y = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            y = e / (1.0 + e);
        }
        out[i] = static_cast<T>(y);
    }
    auto t = detail::finish_op<T>("sigmoid", x.shape(), std::move(out), {x},
                                  [](detail::Node<T>& node) {
                                      auto& nx = *node.parents[0];
                                      if (!nx.requires_grad) return;
                                      nx.ensure_grad();
                                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                                          const T y = node.value[i];
                                          nx.grad[i] += node.grad[i] * y * (T(1) - y);
                                      }
                                  });
    return t;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(std::log(static_cast<double>(x.values()[i])));
    return detail::finish_op<T>("log", x.shape(), std::move(out), {x},
                                [](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < node.grad.size(); ++i)
                                        nx.grad[i] += node.grad[i] / nx.value[i];
                                });
}

// ---------------------------------------------------------------------------
// normalizations

// softmax along `axis` of a 1-D or 2-D tensor, computed with max subtraction
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const bool is1d = x.ndim() == 1;
    if (is1d && axis != 0) throw DimensionError("softmax: axis out of range for 1-D input");
    if (!is1d && (x.ndim() != 2 || axis > 1))
        throw DimensionError("softmax: expected 1-D or 2-D input with a valid axis");
    const std::size_t rows = is1d ? 1 : x.rows();
    const std::size_t cols = is1d ? x.size() : x.cols();
    const bool along_rows = is1d || axis == 1;

    std::vector<T> out(x.size());
    const T* px = x.values().data();
    const std::size_t outer = along_rows ? rows : cols;
    const std::size_t inner = along_rows ? cols : rows;
    auto at = [&](std::size_t o, std::size_t i) -> std::size_t {
        return along_rows ? o * cols + i : i * cols + o;
    };
    for (std::size_t o = 0; o < outer; ++o) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < inner; ++i)
            mx = std::max(mx, static_cast<double>(px[at(o, i)]));
        double denom = 0.0;
        for (std::size_t i = 0; i < inner; ++i)
            denom += std::exp(static_cast<double>(px[at(o, i)]) - mx);
        for (std::size_t i = 0; i < inner; ++i)
            out[at(o, i)] =
                static_cast<T>(std::exp(static_cast<double>(px[at(o, i)]) - mx) / denom);
    }
    return detail::finish_op<T>(
        "softmax", x.shape(), std::move(out), {x},
        [outer, inner, cols, along_rows](detail::Node<T>& node) {
            auto& nx = *node.parents[0];
            if (!nx.requires_grad) return;
            nx.ensure_grad();
            auto at = [&](std::size_t o, std::size_t i) -> std::size_t {
                return along_rows ? o * cols + i : i * cols + o;
            };
            for (std::size_t o = 0; o < outer; ++o) {
                T dot = T(0);
                for (std::size_t i = 0; i < inner; ++i)
                    dot += node.grad[at(o, i)] * node.value[at(o, i)];
                for (std::size_t i = 0; i < inner; ++i)
                    nx.grad[at(o, i)] += node.value[at(o, i)] * (node.grad[at(o, i)] - dot);
            }
        });
}

// row-wise log-softmax, used by the cross-entropy loss
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw DimensionError("log_softmax_rows expects a 2-D tensor");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<T> out(x.size());
    const T* px = x.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(px[i * n + j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            denom += std::exp(static_cast<double>(px[i * n + j]) - mx);
        const double lse = mx + std::log(denom);
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = static_cast<T>(static_cast<double>(px[i * n + j]) - lse);
    }
    return detail::finish_op<T>("log_softmax", x.shape(), std::move(out), {x},
                                [m, n](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < m; ++i) {
                                        T gsum = T(0);
                                        for (std::size_t j = 0; j < n; ++j)
                                            gsum += node.grad[i * n + j];
                                        for (std::size_t j = 0; j < n; ++j) {
                                            const T sm = static_cast<T>(
                                                std::exp(static_cast<double>(node.value[i * n + j])));
                                            nx.grad[i * n + j] += node.grad[i * n + j] - sm * gsum;
                                        }
                                    }
                                });
}

// row-wise layer norm with affine parameters over the last axis
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.ndim() != 2) throw DimensionError("layer_norm expects a 2-D tensor");
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.size() != n || beta.size() != n)
        throw DimensionError("layer_norm affine parameters must match the normalized axis");
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(m);
    const T* px = x.values().data();
    const T* pg = gamma.values().data();
    const T* pb = beta.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += static_cast<double>(px[i * n + j]);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(px[i * n + j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[i] = static_cast<T>(inv);
        for (std::size_t j = 0; j < n; ++j) {
            const T xh = static_cast<T>((static_cast<double>(px[i * n + j]) - mu) * inv);
            xhat[i * n + j] = xh;
            out[i * n + j] = pg[j] * xh + pb[j];
        }
    }
    auto t = detail::finish_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [m, n](detail::Node<T>& node) {
            auto& nx = *node.parents[0];
            auto& ng = *node.parents[1];
            auto& nb = *node.parents[2];
            const auto& xhat = node.saved[0];
            const auto& inv_std = node.saved[1];
            const T* pg = ng.value.data();
            if (ng.requires_grad) {
                ng.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        ng.grad[j] += node.grad[i * n + j] * xhat[i * n + j];
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) nb.grad[j] += node.grad[i * n + j];
            }
            if (nx.requires_grad) {
                nx.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_gd = 0.0, mean_gdx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gd =
                            static_cast<double>(pg[j]) * static_cast<double>(node.grad[i * n + j]);
                        mean_gd += gd;
                        mean_gdx += gd * static_cast<double>(xhat[i * n + j]);
                    }
                    mean_gd /= static_cast<double>(n);
                    mean_gdx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gd =
                            static_cast<double>(pg[j]) * static_cast<double>(node.grad[i * n + j]);
                        nx.grad[i * n + j] += static_cast<T>(
                            static_cast<double>(inv_std[i]) *
                            (gd - mean_gd - static_cast<double>(xhat[i * n + j]) * mean_gdx));
                    }
                }
            }
        });
    if (t.requires_grad()) {
        t.node()->saved.push_back(std::move(xhat));
        t.node()->saved.push_back(std::move(inv_std));
    }
    return t;
}

// ---------------------------------------------------------------------------
// structure ops

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows on empty list");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.cols() != n)
            throw DimensionError("concat_rows column mismatch at " + shape_str(p.shape()));
        m += p.rows();
    }
    std::vector<T> out;
    out.reserve(m * n);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<std::size_t> row_counts;
    for (const auto& p : parts) row_counts.push_back(p.rows());
    return detail::finish_op<T>("concat_rows", {m, n}, std::move(out), parts,
                                [row_counts, n](detail::Node<T>& node) {
                                    std::size_t row0 = 0;
                                    for (std::size_t s = 0; s < node.parents.size(); ++s) {
                                        auto& p = *node.parents[s];
                                        if (p.requires_grad) {
                                            p.ensure_grad();
                                            for (std::size_t i = 0; i < row_counts[s] * n; ++i)
                                                p.grad[i] += node.grad[row0 * n + i];
                                        }
                                        row0 += row_counts[s];
                                    }
                                });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols on empty list");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != m)
            throw DimensionError("concat_cols row mismatch at " + shape_str(p.shape()));
        n += p.cols();
    }
    std::vector<T> out(m * n);
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.values().data() + i * pc, pc, out.data() + i * n + col0);
        col0 += pc;
    }
    std::vector<std::size_t> col_counts;
    for (const auto& p : parts) col_counts.push_back(p.cols());
    return detail::finish_op<T>(
        "concat_cols", {m, n}, std::move(out), parts, [col_counts, m, n](detail::Node<T>& node) {
            std::size_t col0 = 0;
            for (std::size_t s = 0; s < node.parents.size(); ++s) {
                auto& p = *node.parents[s];
                const std::size_t pc = col_counts[s];
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            p.grad[i * pc + j] += node.grad[i * n + col0 + j];
                }
                col0 += pc;
            }
        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    if (x.ndim() != 2 || r0 > r1 || r1 > x.rows())
        throw RangeError("slice_rows range invalid for " + shape_str(x.shape()));
    const std::size_t n = x.cols(), m = r1 - r0;
    std::vector<T> out(x.values().begin() + r0 * n, x.values().begin() + r1 * n);
    return detail::finish_op<T>("slice_rows", {m, n}, std::move(out), {x},
                                [r0, m, n](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < m * n; ++i)
                                        nx.grad[r0 * n + i] += node.grad[i];
                                });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
    if (x.ndim() != 2 || c0 > c1 || c1 > x.cols())
        throw RangeError("slice_cols range invalid for " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
    std::vector<T> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.values().data() + i * n + c0, w, out.data() + i * w);
    return detail::finish_op<T>("slice_cols", {m, w}, std::move(out), {x},
                                [c0, m, n, w](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < w; ++j)
                                            nx.grad[i * n + c0 + j] += node.grad[i * w + j];
                                });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
    if (x.ndim() != 2) throw DimensionError("gather_rows expects a 2-D tensor");
    const std::size_t n = x.cols();
    for (std::size_t r : idx)
        if (r >= x.rows()) throw RangeError("gather_rows index out of range");
    std::vector<T> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(x.values().data() + idx[i] * n, n, out.data() + i * n);
    const std::size_t m = idx.size();
    return detail::finish_op<T>("gather_rows", {m, n}, std::move(out), {x},
                                [idx = std::move(idx), n](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t i = 0; i < idx.size(); ++i)
                                        for (std::size_t j = 0; j < n; ++j)
                                            nx.grad[idx[i] * n + j] += node.grad[i * n + j];
                                });
}

// column-wise max over each consecutive block of `block` rows; ties resolve
// to the earliest row so results are order-stable
template <typename T>
Tensor<T> block_rows_max(const Tensor<T>& x, std::size_t block) {
    if (x.ndim() != 2 || block == 0 || x.rows() % block != 0)
        throw DimensionError("block_rows_max: rows of " + shape_str(x.shape()) +
                             " not divisible by block " + std::to_string(block));
    const std::size_t groups = x.rows() / block, n = x.cols();
    std::vector<T> out(groups * n);
    std::vector<T> arg(groups * n);
    const T* px = x.values().data();
    for (std::size_t b = 0; b < groups; ++b) {
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t best = b * block;
            T bv = px[best * n + j];
            for (std::size_t t = 1; t < block; ++t) {
                const T v = px[(b * block + t) * n + j];
                if (v > bv) {
                    bv = v;
                    best = b * block + t;
                }
            }
            out[b * n + j] = bv;
            arg[b * n + j] = static_cast<T>(best);
        }
    }
    auto t = detail::finish_op<T>("block_rows_max", {groups, n}, std::move(out), {x},
                                  [groups, n](detail::Node<T>& node) {
                                      auto& nx = *node.parents[0];
                                      if (!nx.requires_grad) return;
                                      nx.ensure_grad();
                                      const auto& arg = node.saved[0];
                                      for (std::size_t i = 0; i < groups * n; ++i) {
                                          const auto row = static_cast<std::size_t>(arg[i]);
                                          nx.grad[row * n + (i % n)] += node.grad[i];
                                      }
                                  });
    if (t.requires_grad()) t.node()->saved.push_back(std::move(arg));
    return t;
}

// column-wise max over rows [r0, r1), as a 1 x n tensor
template <typename T>
Tensor<T> rows_max_range(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    if (x.ndim() != 2 || r0 >= r1 || r1 > x.rows())
        throw RangeError("rows_max_range invalid for " + shape_str(x.shape()));
    const std::size_t n = x.cols();
    std::vector<T> out(n);
    std::vector<T> arg(n);
    const T* px = x.values().data();
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = r0;
        T bv = px[r0 * n + j];
        for (std::size_t i = r0 + 1; i < r1; ++i) {
            if (px[i * n + j] > bv) {
                bv = px[i * n + j];
                best = i;
            }
        }
        out[j] = bv;
        arg[j] = static_cast<T>(best);
    }
    auto t = detail::finish_op<T>("rows_max_range", {std::size_t(1), n}, std::move(out), {x},
                                  [n](detail::Node<T>& node) {
                                      auto& nx = *node.parents[0];
                                      if (!nx.requires_grad) return;
                                      nx.ensure_grad();
                                      const auto& arg = node.saved[0];
                                      for (std::size_t j = 0; j < n; ++j) {
                                          const auto row = static_cast<std::size_t>(arg[j]);
                                          nx.grad[row * n + j] += node.grad[j];
                                      }
                                  });
    if (t.requires_grad()) t.node()->saved.push_back(std::move(arg));
    return t;
}

// repeat each row of a groups x n matrix `times` times consecutively
template <typename T>
Tensor<T> rows_repeat_blocks(const Tensor<T>& x, std::size_t times) {
    if (x.ndim() != 2 || times == 0) throw DimensionError("rows_repeat_blocks: bad arguments");
    const std::size_t g = x.rows(), n = x.cols();
    std::vector<T> out(g * times * n);
    for (std::size_t b = 0; b < g; ++b)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(x.values().data() + b * n, n, out.data() + (b * times + t) * n);
    return detail::finish_op<T>("rows_repeat_blocks", {g * times, n}, std::move(out), {x},
                                [g, n, times](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    for (std::size_t b = 0; b < g; ++b)
                                        for (std::size_t t = 0; t < times; ++t)
                                            for (std::size_t j = 0; j < n; ++j)
                                                nx.grad[b * n + j] +=
                                                    node.grad[(b * times + t) * n + j];
                                });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    return detail::finish_op<T>("sum_all", {1}, {acc}, {x}, [](detail::Node<T>& node) {
        auto& nx = *node.parents[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (auto& g : nx.grad) g += node.grad[0];
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    if (x.size() == 0) throw ContractError("mean_all on empty tensor");
    T acc = T(0);
    for (T v : x.values()) acc += v;
    acc /= static_cast<T>(x.size());
    const T inv = T(1) / static_cast<T>(x.size());
    return detail::finish_op<T>("mean_all", {1}, {acc}, {x}, [inv](detail::Node<T>& node) {
        auto& nx = *node.parents[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (auto& g : nx.grad) g += inv * node.grad[0];
    });
}

// scalar view of one element
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::size_t flat_index) {
    if (flat_index >= x.size()) throw RangeError("pick index out of range");
    return detail::finish_op<T>("pick", {1}, {x.values()[flat_index]}, {x},
                                [flat_index](detail::Node<T>& node) {
                                    auto& nx = *node.parents[0];
                                    if (!nx.requires_grad) return;
                                    nx.ensure_grad();
                                    nx.grad[flat_index] += node.grad[0];
                                });
}

// ---------------------------------------------------------------------------
// non-differentiable utilities

// Indices of the k largest scores. Ties break toward the lower index; the
// result is ordered by descending score, then ascending index.
template <typename T>
std::vector<std::size_t> topk_indices(std::span<const T> scores, std::size_t k) {
    if (k > scores.size())
        throw RangeError("topk_indices: k=" + std::to_string(k) + " exceeds length " +
                         std::to_string(scores.size()));
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
    if (v.empty()) throw ContractError("argmax on empty span");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace plora
