// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensors with a reverse-mode autodiff tape.
//
// Operations record themselves on the thread's active Tape when at least one
// input requires a gradient. With no active tape every op is a plain forward
// evaluation, which is what frozen-model queries use and what makes them safe
// to run from several threads at once.

#include <algorithm>
#if defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nisf/errors.hpp"

namespace nisf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

/// Lower clamp applied to the argument of log().
inline constexpr double kLogClamp = 1e-12;

template <class Real>
class Tensor;
template <class Real>
class Tape;

namespace detail {

template <class Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until something is accumulated
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<Real>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), Real(0));
        return grad;
    }
};

template <class Real>
inline Real madd(Real a, Real b, Real c) {
#ifdef __FMA__
    return std::fma(a, b, c);
#else
    return a * b + c;
#endif
}

// Register-tiled kernels. A tile is kRows rows by two vectors; fused
// multiply-add in the vector and scalar paths rounds identically, so tails
// and full tiles produce the same bits for the same inputs.
template <class Real>
struct Simd {
    static constexpr std::size_t width = 0;
};

#if defined(__AVX512F__)
template <>
struct Simd<float> {
    using V = __m512;
    static constexpr std::size_t width = 16;
    static V load(const float* p) { return _mm512_loadu_ps(p); }
    static void store(float* p, V v) { _mm512_storeu_ps(p, v); }
    static V splat(float x) { return _mm512_set1_ps(x); }
    static V fma(V a, V b, V c) { return _mm512_fmadd_ps(a, b, c); }
};
template <>
struct Simd<double> {
    using V = __m512d;
    static constexpr std::size_t width = 8;
    static V load(const double* p) { return _mm512_loadu_pd(p); }
    static void store(double* p, V v) { _mm512_storeu_pd(p, v); }
    static V splat(double x) { return _mm512_set1_pd(x); }
    static V fma(V a, V b, V c) { return _mm512_fmadd_pd(a, b, c); }
};
#endif

inline constexpr std::size_t kTileRows = 6;

// out rows [i, i+kTileRows) x columns [j0, j0+2w) += a-rows * b, p ascending.
template <class Real>
inline void tile_nn(std::size_t n, std::size_t k, const Real* a, const Real* b, Real* out, std::size_t j0) {
    using S = Simd<Real>;
    constexpr std::size_t W = S::width;
    typename S::V acc[kTileRows][2];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kTileRows; ++r) {
        acc[r][0] = S::load(out + r * n + j0);
        acc[r][1] = S::load(out + r * n + j0 + W);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const typename S::V b0 = S::load(b + p * n + j0);
        const typename S::V b1 = S::load(b + p * n + j0 + W);
#pragma GCC unroll 8
        for (std::size_t r = 0; r < kTileRows; ++r) {
            const typename S::V x = S::splat(a[r * k + p]);
            acc[r][0] = S::fma(x, b0, acc[r][0]);
            acc[r][1] = S::fma(x, b1, acc[r][1]);
        }
    }
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kTileRows; ++r) {
        S::store(out + r * n + j0, acc[r][0]);
        S::store(out + r * n + j0 + W, acc[r][1]);
    }
}

// out[m x n] (=|+=) a[m x k] * b[k x n], all row-major. Every output element
// accumulates over k in ascending order whatever m is, so a row's result does
// not depend on the batch it was computed in.
template <class Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* out,
             bool accumulate) {
    if (!accumulate) std::fill(out, out + m * n, Real(0));
    std::size_t i = 0;
    if constexpr (Simd<Real>::width > 0) {
        constexpr std::size_t JB = 2 * Simd<Real>::width;
        const std::size_t n_tiled = n - n % JB;
        for (; i + kTileRows <= m; i += kTileRows) {
            for (std::size_t j0 = 0; j0 < n_tiled; j0 += JB) tile_nn(n, k, a + i * k, b, out + i * n, j0);
            if (n_tiled == n) continue;
            for (std::size_t r = 0; r < kTileRows; ++r) {
                Real* o = out + (i + r) * n;
                const Real* ar = a + (i + r) * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const Real* bp = b + p * n;
                    const Real x = ar[p];
                    for (std::size_t j = n_tiled; j < n; ++j) o[j] = madd(x, bp[j], o[j]);
                }
            }
        }
    }
    for (; i < m; ++i) {
        Real* o0 = out + i * n;
        const Real* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real* bp = b + p * n;
            const Real x0 = a0[p];
            for (std::size_t j = 0; j < n; ++j) o0[j] = madd(x0, bp[j], o0[j]);
        }
    }
}

// out rows [p0, p0+kTileRows) x columns [j0, j0+2w) += sum over rows i in
// [i0, i1) of a[i, p] * g[i, :], i ascending.
template <class Real>
inline void tile_tn(std::size_t n, std::size_t k, std::size_t i0, std::size_t i1, const Real* a, const Real* g,
                    Real* out, std::size_t p0, std::size_t j0) {
    using S = Simd<Real>;
    constexpr std::size_t W = S::width;
    typename S::V acc[kTileRows][2];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kTileRows; ++r) {
        acc[r][0] = S::load(out + (p0 + r) * n + j0);
        acc[r][1] = S::load(out + (p0 + r) * n + j0 + W);
    }
    for (std::size_t i = i0; i < i1; ++i) {
        const typename S::V g0 = S::load(g + i * n + j0);
        const typename S::V g1 = S::load(g + i * n + j0 + W);
        const Real* ai = a + i * k + p0;
#pragma GCC unroll 8
        for (std::size_t r = 0; r < kTileRows; ++r) {
            const typename S::V x = S::splat(ai[r]);
            acc[r][0] = S::fma(x, g0, acc[r][0]);
            acc[r][1] = S::fma(x, g1, acc[r][1]);
        }
    }
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kTileRows; ++r) {
        S::store(out + (p0 + r) * n + j0, acc[r][0]);
        S::store(out + (p0 + r) * n + j0 + W, acc[r][1]);
    }
}

// out[k x n] += a[m x k]^T * g[m x n]; each element sums over the rows of a
// in ascending order.
template <class Real>
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* g, Real* out) {
    constexpr std::size_t kChunk = 256;
    for (std::size_t i0 = 0; i0 < m; i0 += kChunk) {
        const std::size_t i1 = std::min(m, i0 + kChunk);
        std::size_t p0 = 0;
        std::size_t n_tiled = 0;
        if constexpr (Simd<Real>::width > 0) {
            constexpr std::size_t JB = 2 * Simd<Real>::width;
            n_tiled = n - n % JB;
            for (; p0 + kTileRows <= k; p0 += kTileRows) {
                for (std::size_t j0 = 0; j0 < n_tiled; j0 += JB) tile_tn(n, k, i0, i1, a, g, out, p0, j0);
            }
        }
        // Scalar remainder: rows p >= p0 over all columns, rows p < p0 over
        // the untiled columns.
        for (std::size_t p = 0; p < k; ++p) {
            const std::size_t j_begin = p < p0 ? n_tiled : 0;
            if (j_begin == n) continue;
            Real* o = out + p * n;
            for (std::size_t i = i0; i < i1; ++i) {
                const Real x = a[i * k + p];
                const Real* gi = g + i * n;
                for (std::size_t j = j_begin; j < n; ++j) o[j] = madd(x, gi[j], o[j]);
            }
        }
    }
}

// out[m x k] += g[m x n] * b[k x n]^T
template <class Real>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const Real* g, const Real* b, Real* out) {
    std::vector<Real> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    gemm_nn(m, k, n, g, bt.data(), out, true);
}

template <class Real>
void check_finite(const std::vector<Real>& v, const char* op) {
    for (Real x : v) {
        if (!std::isfinite(x)) throw NumericalError(std::string(op) + " produced a non-finite value");
    }
}

}  // namespace detail

/// Handle to a node in the computation graph. Copies share the node.
template <class Real>
class Tensor {
    static_assert(std::is_floating_point_v<Real>);

  public:
    using value_type = Real;
    using NodePtr = std::shared_ptr<detail::Node<Real>>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<Real>>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        detail::check_finite(values, "tensor construction");
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
    }
    static Tensor full(Shape shape, Real v, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<Real>(n, v), requires_grad);
    }
    static Tensor scalar(Real v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }
    bool is_scalar() const { return numel() == 1; }

    std::span<const Real> values() const { return node_->value; }
    /// Mutable access for in-place parameter updates. Only meaningful on leaves.
    std::span<Real> mutable_values() {
        if (!node_->leaf) throw ContractError("in-place update of a non-leaf tensor");
        return node_->value;
    }
    Real operator[](std::size_t i) const { return node_->value[i]; }
    Real at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }
    Real item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) {
        if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaves");
        node_->requires_grad = on;
    }
    bool is_leaf() const { return node_->leaf; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    void reset_grad() { node_->grad.clear(); }

    /// New leaf with a copy of the values and no history.
    Tensor detach(bool requires_grad = false) const { return Tensor(shape(), node_->value, requires_grad); }

    const NodePtr& node() const { return node_; }

  private:
    NodePtr node_;
};

/// Ordered record of executed differentiable operations.
template <class Real>
class Tape {
  public:
    using NodePtr = std::shared_ptr<detail::Node<Real>>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Makes a tape (or none, to pause recording) active on this thread.
    class Scope {
      public:
        explicit Scope(Tape* tape) : previous_(current_) { current_ = tape; }
        explicit Scope(Tape& tape) : Scope(&tape) {}
        ~Scope() { current_ = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

      private:
        Tape* previous_;
    };

    static Tape* active() { return current_; }

    void record(NodePtr node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    /// Reverse sweep from a scalar loss. Intermediate gradients are reset on
    /// every call; leaf gradients accumulate until reset_grad().
    void backward(const Tensor<Real>& loss) {
        if (!loss.defined() || loss.numel() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (nodes_.empty()) throw ContractError("backward() on an empty tape");
        if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor requiring grad");
        for (auto& n : nodes_) {
            if (!n->leaf) n->grad.clear();
        }
        auto& root = *loss.node();
        if (root.leaf) {
            root.ensure_grad()[0] += Real(1);
            return;
        }
        root.ensure_grad()[0] = Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& n = **it;
            if (!n.grad.empty() && n.backward) n.backward(n);
        }
    }

  private:
    std::vector<NodePtr> nodes_;
    static inline thread_local Tape* current_ = nullptr;
};

/// backward() on the thread's active tape.
template <class Real>
void backward(const Tensor<Real>& loss) {
    Tape<Real>* tape = Tape<Real>::active();
    if (tape == nullptr) throw ContractError("backward() without an active tape");
    tape->backward(loss);
}

namespace detail {

template <class Real>
std::vector<Real>* grad_sink(const std::shared_ptr<Node<Real>>& n) {
    return n->requires_grad ? &n->ensure_grad() : nullptr;
}

template <class Real, class Backward>
Tensor<Real> make_result(Shape shape, std::vector<Real> value, std::vector<const Tensor<Real>*> inputs,
                         const char* op, Backward&& backward) {
    check_finite(value, op);
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    Tape<Real>* tape = Tape<Real>::active();
    const bool track = tape != nullptr && std::any_of(inputs.begin(), inputs.end(), [](const Tensor<Real>* t) {
                           return t->requires_grad();
                       });
    if (track) {
        node->requires_grad = true;
        node->leaf = false;
        for (const Tensor<Real>* t : inputs) node->parents.push_back(t->node());
        node->backward = std::forward<Backward>(backward);
        tape->record(node);
    }
    return Tensor<Real>(std::move(node));
}

template <class Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class Real>
void add_into(std::vector<Real>& dst, std::span<const Real> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Elementwise binary op with equal-shape or scalar broadcasting.
template <class Real, class F, class DA, class DB>
Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b, const char* op, F f, DA da, DB db) {
    const bool same = a.shape() == b.shape();
    if (!same && !a.is_scalar() && !b.is_scalar()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " are not broadcast-compatible");
    }
    const bool a_bcast = !same && a.is_scalar();
    const bool b_bcast = !same && !a_bcast && b.is_scalar();
    const Shape& out_shape = a_bcast ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_bcast ? 0 : i], bv[b_bcast ? 0 : i]);
    return make_result<Real>(out_shape, std::move(out), {&a, &b}, op, [a_bcast, b_bcast, da, db](Node<Real>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const auto& g = self.grad;
        const std::size_t n = g.size();
        if (auto* ga = grad_sink(pa)) {
            for (std::size_t i = 0; i < n; ++i) {
                (*ga)[a_bcast ? 0 : i] +=
                    g[i] * da(pa->value[a_bcast ? 0 : i], pb->value[b_bcast ? 0 : i], self.value[i]);
            }
        }
        if (auto* gb = grad_sink(pb)) {
            for (std::size_t i = 0; i < n; ++i) {
                (*gb)[b_bcast ? 0 : i] +=
                    g[i] * db(pa->value[a_bcast ? 0 : i], pb->value[b_bcast ? 0 : i], self.value[i]);
            }
        }
    });
}

}  // namespace detail

/// Pointwise op y = f(x) with derivative df(x, y) supplied by the caller.
template <class Real, class F, class DF>
Tensor<Real> map_unary(const Tensor<Real>& x, F f, DF df, const char* op = "map") {
    const auto xv = x.values();
    std::vector<Real> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return detail::make_result<Real>(x.shape(), std::move(out), {&x}, op, [df](detail::Node<Real>& self) {
        const auto& px = self.parents[0];
        if (auto* gx = detail::grad_sink(px)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * df(px->value[i], self.value[i]);
        }
    });
}

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " are incompatible");
    }
    std::vector<Real> out(m * n);
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return detail::make_result<Real>({m, n}, std::move(out), {&a, &b}, "matmul", [m, n, k](detail::Node<Real>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (auto* ga = detail::grad_sink(pa)) detail::gemm_nt_acc(m, n, k, self.grad.data(), pb->value.data(), ga->data());
        if (auto* gb = detail::grad_sink(pb)) detail::gemm_tn_acc(m, n, k, pa->value.data(), self.grad.data(), gb->data());
    });
}

/// Fused x * w + b with b broadcast over rows: x[B x I], w[I x O], b[O].
template <class Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
    detail::require_matrix(x, "affine");
    detail::require_matrix(w, "affine");
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k || b.numel() != n) {
        throw DimensionError("affine: shapes " + shape_str(x.shape()) + ", " + shape_str(w.shape()) + " and bias " +
                             shape_str(b.shape()) + " are incompatible");
    }
    std::vector<Real> out(m * n);
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
    detail::gemm_nn(m, n, k, x.values().data(), w.values().data(), out.data(), true);
    return detail::make_result<Real>(
        {m, n}, std::move(out), {&x, &w, &b}, "affine", [m, n, k](detail::Node<Real>& self) {
            const auto& px = self.parents[0];
            const auto& pw = self.parents[1];
            const auto& pb = self.parents[2];
            const Real* g = self.grad.data();
            if (auto* gx = detail::grad_sink(px)) detail::gemm_nt_acc(m, n, k, g, pw->value.data(), gx->data());
            if (auto* gw = detail::grad_sink(pw)) detail::gemm_tn_acc(m, n, k, px->value.data(), g, gw->data());
            if (auto* gb = detail::grad_sink(pb)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
            }
        });
}

/// x[B x O] + r with r of O elements added to every row.
template <class Real>
Tensor<Real> add_rows(const Tensor<Real>& x, const Tensor<Real>& r) {
    detail::require_matrix(x, "add_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (r.numel() != n) {
        throw DimensionError("add_rows: row of shape " + shape_str(r.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    std::vector<Real> out(x.values().begin(), x.values().end());
    const auto rv = r.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
    return detail::make_result<Real>({m, n}, std::move(out), {&x, &r}, "add_rows", [m, n](detail::Node<Real>& self) {
        if (auto* gx = detail::grad_sink(self.parents[0])) detail::add_into<Real>(*gx, self.grad);
        if (auto* gr = detail::grad_sink(self.parents[1])) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gr)[j] += self.grad[i * n + j];
        }
    });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    std::vector<Real> out(x.values().begin(), x.values().end());
    return detail::make_result<Real>(std::move(shape), std::move(out), {&x}, "reshape", [](detail::Node<Real>& self) {
        if (auto* gx = detail::grad_sink(self.parents[0])) detail::add_into<Real>(*gx, self.grad);
    });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary(
        a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary(
        a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary(
        a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
        [](Real x, Real, Real) { return x; });
}

template <class Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary(
        a, b, "div", [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real(1) / y; },
        [](Real x, Real y, Real) { return -x / (y * y); });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s) {
    return map_unary(x, [s](Real v) { return s * v; }, [s](Real, Real) { return s; }, "scale");
}

template <class Real>
Tensor<Real> shift(const Tensor<Real>& x, Real s) {
    return map_unary(x, [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); }, "shift");
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    return map_unary(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; }, "exp");
}

template <class Real>
Tensor<Real> cos(const Tensor<Real>& x) {
    return map_unary(x, [](Real v) { return std::cos(v); }, [](Real v, Real) { return -std::sin(v); }, "cos");
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& x) {
    return map_unary(x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; }, "square");
}

template <class Real>
inline Real sigmoid_scalar(Real v) {
    if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
    const Real e = std::exp(v);
    return e / (Real(1) + e);
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    return map_unary(x, [](Real v) { return sigmoid_scalar(v); }, [](Real, Real y) { return y * (Real(1) - y); },
                     "sigmoid");
}

/// Natural log of max(x, kLogClamp); the clamped region has zero derivative.
template <class Real>
Tensor<Real> log(const Tensor<Real>& x) {
    const Real eps = static_cast<Real>(kLogClamp);
    return map_unary(
        x, [eps](Real v) { return std::log(std::max(v, eps)); },
        [eps](Real v, Real) { return v >= eps ? Real(1) / v : Real(0); }, "log");
}

/// Softmax over the last axis, stabilised by subtracting the row maximum.
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw DimensionError("softmax: empty last axis in " + shape_str(x.rank() ? x.shape() : Shape{0}));
    }
    const std::size_t m = x.shape().back();
    const std::size_t rows = x.numel() / m;
    const auto xv = x.values();
    std::vector<Real> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = xv.data() + r * m;
        Real* o = out.data() + r * m;
        const Real mx = *std::max_element(in, in + m);
        Real total = 0;
        for (std::size_t j = 0; j < m; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < m; ++j) o[j] /= total;
    }
    return detail::make_result<Real>(x.shape(), std::move(out), {&x}, "softmax", [m, rows](detail::Node<Real>& self) {
        auto* gx = detail::grad_sink(self.parents[0]);
        if (gx == nullptr) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* y = self.value.data() + r * m;
            const Real* g = self.grad.data() + r * m;
            Real dot = 0;
            for (std::size_t j = 0; j < m; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < m; ++j) (*gx)[r * m + j] += y[j] * (g[j] - dot);
        }
    });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real total = 0;
    for (Real v : x.values()) total += v;
    return detail::make_result<Real>({}, {total}, {&x}, "sum", [](detail::Node<Real>& self) {
        if (auto* gx = detail::grad_sink(self.parents[0])) {
            for (auto& g : *gx) g += self.grad[0];
        }
    });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Column sums of a matrix: [B x M] -> [M].
template <class Real>
Tensor<Real> sum_rows(const Tensor<Real>& x) {
    detail::require_matrix(x, "sum_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<Real> out(n, Real(0));
    const auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
    return detail::make_result<Real>({n}, std::move(out), {&x}, "sum_rows", [m, n](detail::Node<Real>& self) {
        if (auto* gx = detail::grad_sink(self.parents[0])) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += self.grad[j];
        }
    });
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <class Real>
Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) { return div(a, b); }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a) { return scale(a, Real(-1)); }
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real s) { return scale(a, s); }
template <class Real>
Tensor<Real> operator*(Real s, const Tensor<Real>& a) { return scale(a, s); }
template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, Real s) { return shift(a, s); }
template <class Real>
Tensor<Real> operator-(Real s, const Tensor<Real>& a) { return shift(scale(a, Real(-1)), s); }

}  // namespace nisf
