#pragma once
// Differentiable operations on Tensor. Every op records its backward rule on
// the tape it is given; gradients only flow into tensors with requires_grad.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gpna/numerics/tensor.hpp"

namespace gpna::num {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

inline bool eigen_aligned(const double* p)
{
    return reinterpret_cast<std::uintptr_t>(p) % EIGEN_MAX_ALIGN_BYTES == 0;
}

// Copies `p` into `scratch` unless it already sits on an Eigen packet boundary.
inline const double* aligned_view(const double* p, std::size_t n,
                                  std::vector<double, Eigen::aligned_allocator<double>>& scratch)
{
    if (eigen_aligned(p))
        return p;
    scratch.assign(p, p + n);
    return scratch.data();
}

// C[m x n] += op(A) * op(B); A is stored [m x k] (or [k x m] when ta), B is [k x n] (or [n x k] when tb).
// Eigen's small and matrix-vector kernels peel loops by pointer alignment, which
// changes the summation order, so operands are moved to aligned storage first to
// keep results independent of where the heap placed them.
inline void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c)
{
    thread_local std::vector<double, Eigen::aligned_allocator<double>> sa, sb, sc;
    a = aligned_view(a, m * k, sa);
    b = aligned_view(b, k * n, sb);
    double* out = c;
    if (!eigen_aligned(c)) {
        sc.assign(c, c + m * n);
        out = sc.data();
    }
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    MMap C(out, M, N);
    if (!ta && !tb)
        C.noalias() += CMap(a, M, K) * CMap(b, K, N);
    else if (!ta && tb)
        C.noalias() += CMap(a, M, K) * CMap(b, N, K).transpose();
    else if (ta && !tb)
        C.noalias() += CMap(a, K, M).transpose() * CMap(b, K, N);
    else
        C.noalias() += CMap(a, K, M).transpose() * CMap(b, N, K).transpose();
    if (out != c)
        std::copy(out, out + m * n, c);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

inline void accumulate(Node& dst, std::span<const double> g)
{
    auto& d = dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
        d[i] += g[i];
}

inline std::vector<std::size_t> strides_of(const Shape& s)
{
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;)
        st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace detail

/// Matrix product over the last axis of `a` ([..., k]) with a 2-D `b` ([k, p]).
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b)
{
    if (b.rank() != 2 || a.shape().back() != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const std::size_t k = b.dim(0), p = b.dim(1), m = a.size() / k;
    std::vector<double> out(m * p, 0.0);
    detail::gemm_acc(false, false, m, p, k, a.values().data(), b.values().data(), out.data());
    Shape shape = a.shape();
    shape.back() = p;
    return tape.record(std::move(shape), std::move(out), {a, b}, [a, b, m, k, p](const Node& o) {
        if (a.requires_grad())
            detail::gemm_acc(false, true, m, k, p, o.grad.data(), b.values().data(), a.node()->ensure_grad().data());
        if (b.requires_grad())
            detail::gemm_acc(true, false, k, p, m, a.values().data(), o.grad.data(), b.node()->ensure_grad().data());
    });
}

/// Batched product: a [B, m, k] times b [B, k, p], or b [B, p, k] when transpose_b.
inline Tensor bmm(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false)
{
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
        a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1)))
        throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t p = transpose_b ? b.dim(1) : b.dim(2);
    std::vector<double> out(batch * m * p, 0.0);
    for (std::size_t i = 0; i < batch; ++i)
        detail::gemm_acc(false, transpose_b, m, p, k, a.values().data() + i * m * k,
                         b.values().data() + i * k * p, out.data() + i * m * p);
    return tape.record({batch, m, p}, std::move(out), {a, b}, [a, b, batch, m, k, p, transpose_b](const Node& o) {
        for (std::size_t i = 0; i < batch; ++i) {
            const double* g = o.grad.data() + i * m * p;
            const double* av = a.values().data() + i * m * k;
            const double* bv = b.values().data() + i * k * p;
            if (a.requires_grad()) {
                double* ga = a.node()->ensure_grad().data() + i * m * k;
                if (transpose_b)
                    detail::gemm_acc(false, false, m, k, p, g, bv, ga);
                else
                    detail::gemm_acc(false, true, m, k, p, g, bv, ga);
            }
            if (b.requires_grad()) {
                double* gb = b.node()->ensure_grad().data() + i * k * p;
                if (transpose_b)
                    detail::gemm_acc(true, false, p, k, m, g, av, gb);
                else
                    detail::gemm_acc(true, false, k, p, m, av, g, gb);
            }
        }
    });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b)
{
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] + b.values()[i];
    return tape.record(a.shape(), std::move(out), {a, b}, [a, b](const Node& o) {
        if (a.requires_grad())
            detail::accumulate(*a.node(), o.grad);
        if (b.requires_grad())
            detail::accumulate(*b.node(), o.grad);
    });
}

/// x [..., n] + bias [n], broadcast over leading axes.
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias)
{
    const std::size_t n = x.shape().back();
    if (bias.size() != n)
        throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " vs input " + to_string(x.shape()));
    std::vector<double> out(x.vec());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += bias.values()[i % n];
    return tape.record(x.shape(), std::move(out), {x, bias}, [x, bias, n](const Node& o) {
        if (x.requires_grad())
            detail::accumulate(*x.node(), o.grad);
        if (bias.requires_grad()) {
            auto& g = bias.node()->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                g[i % n] += o.grad[i];
        }
    });
}

/// Affine map over the last axis: x [..., k] * w [k, p] + b [p].
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b)
{
    return add_bias(tape, matmul(tape, x, w), b);
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b)
{
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] * b.values()[i];
    return tape.record(a.shape(), std::move(out), {a, b}, [a, b](const Node& o) {
        if (a.requires_grad()) {
            auto& g = a.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += o.grad[i] * b.values()[i];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += o.grad[i] * a.values()[i];
        }
    });
}

inline Tensor scale(Tape& tape, const Tensor& x, double c)
{
    std::vector<double> out(x.vec());
    for (auto& v : out)
        v *= c;
    return tape.record(x.shape(), std::move(out), {x}, [x, c](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += c * o.grad[i];
    });
}

inline Tensor relu(Tape& tape, const Tensor& x)
{
    std::vector<double> out(x.vec());
    for (auto& v : out)
        v = v > 0.0 ? v : 0.0;
    return tape.record(x.shape(), std::move(out), {x}, [x](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x.values()[i] > 0.0)
                g[i] += o.grad[i];
    });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(Tape& tape, const Tensor& x)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return tape.record(x.shape(), std::move(out), {x}, [x](const Node& o) {
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = x.values()[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            g[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape)
{
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    return tape.record(std::move(shape), x.vec(), {x}, [x](const Node& o) { detail::accumulate(*x.node(), o.grad); });
}

/// Axis permutation; output axis i is input axis perm[i].
inline Tensor permute(Tape& tape, const Tensor& x, const std::vector<std::size_t>& perm)
{
    const std::size_t r = x.rank();
    if (perm.size() != r)
        throw ShapeError("permute: permutation rank does not match " + to_string(x.shape()));
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p])
            throw ShapeError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i)
        out_shape[i] = x.dim(perm[i]);
    const auto in_strides = detail::strides_of(x.shape());
    std::vector<std::size_t> src(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i)
            off += idx[i] * in_strides[perm[i]];
        src[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i])
                break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x.values()[src[i]];
    return tape.record(std::move(out_shape), std::move(out), {x}, [x, src = std::move(src)](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < src.size(); ++i)
            g[src[i]] += o.grad[i];
    });
}

/// Joins tensors along `axis`; all other extents must agree.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis)
{
    if (parts.empty())
        throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size())
        throw ShapeError("concat: axis out of range for " + to_string(ref));
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size())
            throw ShapeError("concat: rank mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && p.dim(i) != ref[i])
                throw ShapeError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
        total += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i)
        inner *= ref[i];
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::vector<double> out(numel(out_shape));
    std::size_t col = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.values().data() + o * w, w, out.data() + o * total * inner + col);
        col += w;
        needs_grad = needs_grad || p.requires_grad();
    }
    return tape.record_if(std::move(out_shape), std::move(out), needs_grad,
                          [parts, outer, inner, total](const Node& o) {
                              std::size_t c = 0;
                              for (const auto& p : parts) {
                                  const std::size_t w = p.size() / outer;
                                  if (p.requires_grad()) {
                                      auto& g = p.node()->ensure_grad();
                                      for (std::size_t r = 0; r < outer; ++r)
                                          for (std::size_t j = 0; j < w; ++j)
                                              g[r * w + j] += o.grad[r * total * inner + c + j];
                                  }
                                  c += w;
                              }
                          });
}

/// Sub-range [start, start+len) along `axis`.
inline Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t len)
{
    if (axis >= x.rank() || len == 0 || start + len > x.dim(axis))
        throw ShapeError("slice: range out of bounds for " + to_string(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i)
        inner *= x.dim(i);
    const std::size_t full = x.dim(axis) * inner, w = len * inner, off = start * inner;
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<double> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.values().data() + o * full + off, w, out.data() + o * w);
    return tape.record(std::move(out_shape), std::move(out), {x}, [x, outer, full, w, off](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < w; ++j)
                g[r * full + off + j] += o.grad[r * w + j];
    });
}

/// Selects rows of a 2-D tensor; rows may repeat.
inline Tensor gather_rows(Tape& tape, const Tensor& x, std::vector<std::size_t> rows)
{
    if (x.rank() != 2)
        throw ShapeError("gather_rows: expected a matrix, got " + to_string(x.shape()));
    const std::size_t n = x.dim(1);
    std::vector<double> out(rows.size() * n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.dim(0))
            throw ShapeError("gather_rows: row index out of range");
        std::copy_n(x.values().data() + rows[i] * n, n, out.data() + i * n);
    }
    Shape shape{rows.size(), n};
    return tape.record(std::move(shape), std::move(out), {x}, [x, n, rows = std::move(rows)](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < n; ++j)
                g[rows[i] * n + j] += o.grad[i * n + j];
    });
}

/// Repeats x along a new leading axis of extent `batch`.
inline Tensor broadcast_batch(Tape& tape, const Tensor& x, std::size_t batch)
{
    Shape shape{batch};
    shape.insert(shape.end(), x.shape().begin(), x.shape().end());
    std::vector<double> out;
    out.reserve(batch * x.size());
    for (std::size_t b = 0; b < batch; ++b)
        out.insert(out.end(), x.values().begin(), x.values().end());
    return tape.record(std::move(shape), std::move(out), {x}, [x, batch](const Node& o) {
        auto& g = x.node()->ensure_grad();
        const std::size_t n = g.size();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i)
                g[i] += o.grad[b * n + i];
    });
}

inline Tensor sum(Tape& tape, const Tensor& x)
{
    double s = 0.0;
    for (double v : x.values())
        s += v;
    return tape.record({1}, {s}, {x}, [x](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (auto& v : g)
            v += o.grad[0];
    });
}

inline Tensor mean(Tape& tape, const Tensor& x)
{
    return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

/// Softmax over the last axis. `mask` (same size as x, nonzero = keep) zeroes
/// entries exactly; every row needs at least one kept entry.
inline Tensor softmax_rows(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask = {})
{
    const std::size_t n = x.shape().back(), rows = x.size() / n;
    if (!mask.empty() && mask.size() != x.size())
        throw ShapeError("softmax_rows: mask size " + std::to_string(mask.size()) + " vs input " +
                         to_string(x.shape()));
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * n;
        double* y = out.data() + r * n;
        auto keep = [&](std::size_t j) { return mask.empty() || mask[r * n + j] != 0; };
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < n; ++j)
            if (keep(j)) {
                mx = std::max(mx, in[j]);
                any = true;
            }
        if (!any)
            throw MaskError("softmax_rows: row " + std::to_string(r) + " is fully masked");
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (keep(j)) {
                y[j] = std::exp(in[j] - mx);
                z += y[j];
            }
        for (std::size_t j = 0; j < n; ++j)
            y[j] /= z;
    }
    return tape.record(x.shape(), std::move(out), {x}, [x, n, rows](const Node& o) {
        auto& g = x.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.values.data() + r * n;
            const double* gy = o.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j)
                g[r * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

/// Row-wise normalization to zero mean / unit variance, then gain * x + bias.
inline Tensor layer_normalize(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5)
{
    const std::size_t n = x.shape().back(), rows = x.size() / n;
    if (gain.size() != n || bias.size() != n)
        throw ShapeError("layer_normalize: affine size does not match width of " + to_string(x.shape()));
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (in[j] - mu) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gain.values()[j] + bias.values()[j];
        }
    }
    return tape.record(x.shape(), std::move(out), {x, gain, bias},
                       [x, gain, bias, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& o) {
                           if (gain.requires_grad()) {
                               auto& gg = gain.node()->ensure_grad();
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   gg[i % n] += o.grad[i] * xhat[i];
                           }
                           if (bias.requires_grad()) {
                               auto& gb = bias.node()->ensure_grad();
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   gb[i % n] += o.grad[i];
                           }
                           if (!x.requires_grad())
                               return;
                           auto& gx = x.node()->ensure_grad();
                           std::vector<double> dxhat(n);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   dxhat[j] = o.grad[r * n + j] * gain.values()[j];
                                   m1 += dxhat[j];
                                   m2 += dxhat[j] * xhat[r * n + j];
                               }
                               m1 /= static_cast<double>(n);
                               m2 /= static_cast<double>(n);
                               for (std::size_t j = 0; j < n; ++j)
                                   gx[r * n + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
                           }
                       });
}

/// 2-D convolution. x [images, c_in, h, w], weight [c_out, c_in, kh, kw], bias [c_out].
inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t pad)
{
    if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || bias.size() != weight.dim(0))
        throw ShapeError("conv2d: incompatible shapes " + to_string(x.shape()) + " and " + to_string(weight.shape()));
    const std::size_t images = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
    const std::size_t patch = cin * kh * kw, cols = ho * wo;

    // Column matrix [patch x cols] for one image; index -1 marks zero padding.
    std::vector<std::ptrdiff_t> src(patch * cols);
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t row = (c * kh + ky) * kw + kx;
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                            ix < static_cast<std::ptrdiff_t>(w);
                        src[row * cols + oy * wo + ox] =
                            inside ? static_cast<std::ptrdiff_t>((c * h + static_cast<std::size_t>(iy)) * w +
                                                                 static_cast<std::size_t>(ix))
                                   : -1;
                    }
            }

    std::vector<double> out(images * cout * cols, 0.0);
    std::vector<double> colbuf(patch * cols);
    for (std::size_t i = 0; i < images; ++i) {
        const double* img = x.values().data() + i * cin * h * w;
        for (std::size_t j = 0; j < colbuf.size(); ++j)
            colbuf[j] = src[j] < 0 ? 0.0 : img[src[j]];
        double* y = out.data() + i * cout * cols;
        for (std::size_t oc = 0; oc < cout; ++oc)
            std::fill_n(y + oc * cols, cols, bias.values()[oc]);
        detail::gemm_acc(false, false, cout, cols, patch, weight.values().data(), colbuf.data(), y);
    }

    return tape.record({images, cout, ho, wo}, std::move(out), {x, weight, bias},
                       [x, weight, bias, images, cin, h, w, cout, patch, cols, src = std::move(src)](const Node& o) {
                           std::vector<double> colbuf(patch * cols);
                           for (std::size_t i = 0; i < images; ++i) {
                               const double* g = o.grad.data() + i * cout * cols;
                               if (bias.requires_grad()) {
                                   auto& gb = bias.node()->ensure_grad();
                                   for (std::size_t oc = 0; oc < cout; ++oc)
                                       for (std::size_t j = 0; j < cols; ++j)
                                           gb[oc] += g[oc * cols + j];
                               }
                               if (weight.requires_grad()) {
                                   const double* img = x.values().data() + i * cin * h * w;
                                   for (std::size_t j = 0; j < colbuf.size(); ++j)
                                       colbuf[j] = src[j] < 0 ? 0.0 : img[src[j]];
                                   detail::gemm_acc(false, true, cout, patch, cols, g, colbuf.data(),
                                                    weight.node()->ensure_grad().data());
                               }
                               if (x.requires_grad()) {
                                   std::fill(colbuf.begin(), colbuf.end(), 0.0);
                                   detail::gemm_acc(true, false, patch, cols, cout, weight.values().data(), g,
                                                    colbuf.data());
                                   double* gx = x.node()->ensure_grad().data() + i * cin * h * w;
                                   for (std::size_t j = 0; j < colbuf.size(); ++j)
                                       if (src[j] >= 0)
                                           gx[src[j]] += colbuf[j];
                               }
                           }
                       });
}

/// Mean softmax cross-entropy of logits [rows, classes] against integer labels.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels)
{
    const std::size_t k = logits.shape().back(), rows = logits.size() / k;
    if (labels.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                         " rows");
    std::vector<double> prob(logits.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k)
            throw InputError("cross_entropy: label out of range");
        const double* z = logits.values().data() + r * k;
        const double mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            prob[r * k + j] = std::exp(z[j] - mx);
            s += prob[r * k + j];
        }
        for (std::size_t j = 0; j < k; ++j)
            prob[r * k + j] /= s;
        loss += std::log(s) + mx - z[labels[r]];
    }
    const double inv = 1.0 / static_cast<double>(rows);
    std::vector<int> lab(labels.begin(), labels.end());
    return tape.record({1}, {loss * inv}, {logits},
                       [logits, k, inv, prob = std::move(prob), lab = std::move(lab)](const Node& o) {
                           auto& g = logits.node()->ensure_grad();
                           const double s = o.grad[0] * inv;
                           for (std::size_t i = 0; i < prob.size(); ++i)
                               g[i] += s * prob[i];
                           for (std::size_t r = 0; r < lab.size(); ++r)
                               g[r * k + static_cast<std::size_t>(lab[r])] -= s;
                       });
}

/// Mean squared error against a constant target of the same size.
inline Tensor mse_loss(Tape& tape, const Tensor& pred, std::span<const double> target)
{
    if (target.size() != pred.size())
        throw ShapeError("mse_loss: target size " + std::to_string(target.size()) + " vs prediction " +
                         to_string(pred.shape()));
    std::vector<double> diff(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] = pred.values()[i] - target[i];
        s += diff[i] * diff[i];
    }
    const double inv = 1.0 / static_cast<double>(diff.size());
    return tape.record({1}, {s * inv}, {pred}, [pred, inv, diff = std::move(diff)](const Node& o) {
        auto& g = pred.node()->ensure_grad();
        for (std::size_t i = 0; i < diff.size(); ++i)
            g[i] += 2.0 * inv * diff[i] * o.grad[0];
    });
}

}  // namespace gpna::num
