#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "pcvs/tensor.hpp"

namespace pcvs {

// Dense op library. Every op builds a graph node eagerly; matmul/conv lower
// to Eigen GEMM. All kernels are sequential and accumulate in a fixed order,
// so repeated runs are bit-identical.

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
void check_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!same_shape(a.shape(), b.shape())) shape_fail(op, a.shape(), b.shape());
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same("add", a, b);
    auto out = make_op_node<T>("add", a.shape(), {a.node_ptr(), b.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   auto& pb = *n.parents[1];
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i];
                                   }
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same("sub", a, b);
    auto out = make_op_node<T>("sub", a.shape(), {a.node_ptr(), b.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   auto& pb = *n.parents[1];
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
                                   }
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same("mul", a, b);
    auto out = make_op_node<T>("mul", a.shape(), {a.node_ptr(), b.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   auto& pb = *n.parents[1];
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                                           pa.grad[i] += n.grad[i] * pb.value[i];
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                                           pb.grad[i] += n.grad[i] * pa.value[i];
                                   }
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same("div", a, b);
    auto out = make_op_node<T>("div", a.shape(), {a.node_ptr(), b.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   auto& pb = *n.parents[1];
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                                           pa.grad[i] += n.grad[i] / pb.value[i];
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                                           pb.grad[i] -= n.grad[i] * n.value[i] / pb.value[i];
                                   }
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] / b.value()[i];
    return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    auto out = make_op_node<T>("neg", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] -= n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = -a.value()[i];
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    auto out = make_op_node<T>("add_scalar", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] + c;
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    auto out = make_op_node<T>("mul_scalar", a.shape(), {a.node_ptr()},
                               [c](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += c * n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = c * a.value()[i];
    return out;
}

/// Multiply a tensor by a learnable scalar (shape [1]) tensor.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& s) {
    if (s.numel() != 1) shape_fail("scale_by", a.shape(), s.shape());
    auto out = make_op_node<T>("scale_by", a.shape(), {a.node_ptr(), s.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   auto& ps = *n.parents[1];
                                   const T sv = ps.value[0];
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += sv * n.grad[i];
                                   }
                                   if (ps.requires_grad) {
                                       ps.ensure_grad();
                                       T acc = T(0);
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * pa.value[i];
                                       ps.grad[0] += acc;
                                   }
                               });
    const T sv = s.item();
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = sv * a.value()[i];
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    auto out = make_op_node<T>("relu", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                       if (pa.value[i] > T(0)) pa.grad[i] += n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.01)) {
    auto out = make_op_node<T>("leaky_relu", a.shape(), {a.node_ptr()},
                               [slope](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                       pa.grad[i] += (pa.value[i] > T(0) ? T(1) : slope) * n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const T v = a.value()[i];
        out.value()[i] = v > T(0) ? v : slope * v;
    }
    return out;
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
    auto out = make_op_node<T>("abs", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                       const T v = pa.value[i];
                                       if (v > T(0))
                                           pa.grad[i] += n.grad[i];
                                       else if (v < T(0))
                                           pa.grad[i] -= n.grad[i];
                                   }
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = std::abs(a.value()[i]);
    return out;
}

/// Elementwise sqrt. Subgradient 0 where the input is exactly 0.
template <typename T>
Tensor<T> sqrt_t(const Tensor<T>& a) {
    auto out = make_op_node<T>("sqrt", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                       if (n.value[i] > T(0)) pa.grad[i] += n.grad[i] / (T(2) * n.value[i]);
                               });
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.value()[i] = a.value()[i] > T(0) ? std::sqrt(a.value()[i]) : T(0);
    return out;
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& a) {
    auto out = make_op_node<T>("exp", a.shape(), {a.node_ptr()},
                               [](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                       pa.grad[i] += n.grad[i] * n.value[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = std::exp(a.value()[i]);
    return out;
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    auto out = make_op_node<T>("clamp_min", a.shape(), {a.node_ptr()},
                               [lo](TensorNode<T>& n) {
                                   auto& pa = *n.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                       if (pa.value[i] > lo) pa.grad[i] += n.grad[i];
                               });
    for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = std::max(a.value()[i], lo);
    return out;
}

// ---- matrix ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_op_node<T>("matmul", {m, n}, {a.node_ptr(), b.node_ptr()},
                               [m, k, n](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   auto& pb = *nd.parents[1];
                                   detail::ECMap<T> G(nd.grad.data(), m, n);
                                   detail::ECMap<T> A(pa.value.data(), m, k);
                                   detail::ECMap<T> B(pb.value.data(), k, n);
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       detail::EMap<T> GA(pa.grad.data(), m, k);
                                       GA.noalias() += G * B.transpose();
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       detail::EMap<T> GB(pb.grad.data(), k, n);
                                       GB.noalias() += A.transpose() * G;
                                   }
                               });
    detail::EMap<T> O(out.value().data(), m, n);
    detail::ECMap<T> A(a.value().data(), m, k);
    detail::ECMap<T> B(b.value().data(), k, n);
    O.noalias() = A * B;
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.rank() != 2) shape_fail("transpose2d", a.shape());
    const int m = a.dim(0), n = a.dim(1);
    auto out = make_op_node<T>("transpose2d", {n, m}, {a.node_ptr()},
                               [m, n](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (int i = 0; i < n; ++i)
                                       for (int j = 0; j < m; ++j)
                                           pa.grad[static_cast<std::size_t>(j) * n + i] +=
                                               nd.grad[static_cast<std::size_t>(i) * m + j];
                               });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.value()[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
    return out;
}

/// x: [R,C] plus row-broadcast bias b: [C].
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) shape_fail("add_rowvec", x.shape(), b.shape());
    const int r = x.dim(0), c = x.dim(1);
    auto out = make_op_node<T>("add_rowvec", x.shape(), {x.node_ptr(), b.node_ptr()},
                               [r, c](TensorNode<T>& nd) {
                                   auto& px = *nd.parents[0];
                                   auto& pb = *nd.parents[1];
                                   if (px.requires_grad) {
                                       px.ensure_grad();
                                       for (std::size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (int i = 0; i < r; ++i)
                                           for (int j = 0; j < c; ++j)
                                               pb.grad[static_cast<std::size_t>(j)] +=
                                                   nd.grad[static_cast<std::size_t>(i) * c + j];
                                   }
                               });
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.value()[static_cast<std::size_t>(i) * c + j] =
                x.value()[static_cast<std::size_t>(i) * c + j] + b.value()[static_cast<std::size_t>(j)];
    return out;
}

/// Select rows of x: [R,C] by index; repeated indices allowed.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<int> idx) {
    if (x.rank() != 2) shape_fail("gather_rows", x.shape());
    const int c = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= x.dim(0)) throw ShapeError("gather_rows: index out of range");
    const int g = static_cast<int>(idx.size());
    auto out = make_op_node<T>("gather_rows", {g, c}, {x.node_ptr()},
                               [idx, c](TensorNode<T>& nd) {
                                   auto& px = *nd.parents[0];
                                   px.ensure_grad();
                                   for (std::size_t i = 0; i < idx.size(); ++i) {
                                       T* dst = px.grad.data() + static_cast<std::size_t>(idx[i]) * c;
                                       const T* src = nd.grad.data() + i * c;
                                       for (int j = 0; j < c; ++j) dst[j] += src[j];
                                   }
                               });
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.value().data() + i * c, x.value().data() + static_cast<std::size_t>(idx[i]) * c,
                    sizeof(T) * static_cast<std::size_t>(c));
    return out;
}

/// values: [G,K,C], weights: [G,K] -> out[g,:] = sum_k w[g,k] * v[g,k,:].
template <typename T>
Tensor<T> rows_weighted_sum(const Tensor<T>& values, const Tensor<T>& weights) {
    if (values.rank() != 3 || weights.rank() != 2 || values.dim(0) != weights.dim(0) ||
        values.dim(1) != weights.dim(1))
        shape_fail("rows_weighted_sum", values.shape(), weights.shape());
    const int G = values.dim(0), K = values.dim(1), C = values.dim(2);
    auto out = make_op_node<T>("rows_weighted_sum", {G, C}, {values.node_ptr(), weights.node_ptr()},
                               [G, K, C](TensorNode<T>& nd) {
                                   auto& pv = *nd.parents[0];
                                   auto& pw = *nd.parents[1];
                                   if (pv.requires_grad) pv.ensure_grad();
                                   if (pw.requires_grad) pw.ensure_grad();
                                   for (int g = 0; g < G; ++g) {
                                       const T* go = nd.grad.data() + static_cast<std::size_t>(g) * C;
                                       for (int k = 0; k < K; ++k) {
                                           const std::size_t vo = (static_cast<std::size_t>(g) * K + k) * C;
                                           const T w = pw.value[static_cast<std::size_t>(g) * K + k];
                                           if (pv.requires_grad)
                                               for (int c = 0; c < C; ++c) pv.grad[vo + c] += w * go[c];
                                           if (pw.requires_grad) {
                                               T acc = T(0);
                                               for (int c = 0; c < C; ++c) acc += pv.value[vo + c] * go[c];
                                               pw.grad[static_cast<std::size_t>(g) * K + k] += acc;
                                           }
                                       }
                                   }
                               });
    for (int g = 0; g < G; ++g)
        for (int k = 0; k < K; ++k) {
            const T w = weights.value()[static_cast<std::size_t>(g) * K + k];
            const T* v = values.value().data() + (static_cast<std::size_t>(g) * K + k) * C;
            T* o = out.value().data() + static_cast<std::size_t>(g) * C;
            for (int c = 0; c < C; ++c) o[c] += w * v[c];
        }
    return out;
}

// ---- shape -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
    auto out = make_op_node<T>("reshape", std::move(shape), {a.node_ptr()},
                               [](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
                               });
    out.value() = a.value();
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: empty input list");
    const Shape& s0 = parts[0].shape();
    const int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) shape_fail("concat", s0);
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) shape_fail("concat", s0, p.shape());
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != s0[static_cast<std::size_t>(d)]) shape_fail("concat", s0, p.shape());
        out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
    std::vector<std::size_t> axis_len(parts.size());
    std::vector<std::shared_ptr<TensorNode<T>>> pn;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        axis_len[i] = static_cast<std::size_t>(parts[i].dim(axis));
        pn.push_back(parts[i].node_ptr());
    }
    const std::size_t out_axis = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(axis)]);
    auto out = make_op_node<T>("concat", out_shape, std::move(pn),
                               [outer, inner, axis_len, out_axis](TensorNode<T>& nd) {
                                   std::size_t off = 0;
                                   for (std::size_t p = 0; p < nd.parents.size(); ++p) {
                                       auto& pp = *nd.parents[p];
                                       const std::size_t len = axis_len[p];
                                       if (pp.requires_grad) {
                                           pp.ensure_grad();
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const T* src = nd.grad.data() + (o * out_axis + off) * inner;
                                               T* dst = pp.grad.data() + o * len * inner;
                                               for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                                           }
                                       }
                                       off += len;
                                   }
                               });
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t len = axis_len[p];
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.value().data() + (o * out_axis + off) * inner,
                        parts[p].value().data() + o * len * inner, sizeof(T) * len * inner);
        off += len;
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
    const int rank = a.rank();
    if (axis < 0 || axis >= rank || start < 0 || len <= 0 || start + len > a.dim(axis))
        shape_fail("slice", a.shape());
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a.dim(d));
    const std::size_t in_axis = static_cast<std::size_t>(a.dim(axis));
    const std::size_t st = static_cast<std::size_t>(start), ln = static_cast<std::size_t>(len);
    auto out = make_op_node<T>("slice", out_shape, {a.node_ptr()},
                               [outer, inner, in_axis, st, ln](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       const T* src = nd.grad.data() + o * ln * inner;
                                       T* dst = pa.grad.data() + (o * in_axis + st) * inner;
                                       for (std::size_t i = 0; i < ln * inner; ++i) dst[i] += src[i];
                                   }
                               });
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.value().data() + o * ln * inner, a.value().data() + (o * in_axis + st) * inner,
                    sizeof(T) * ln * inner);
    return out;
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
    auto out = make_op_node<T>("reduce_sum", {1}, {a.node_ptr()},
                               [](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   const T g = nd.grad[0];
                                   for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
                               });
    T acc = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.value()[i];
    out.value()[0] = acc;
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
    const T inv = T(1) / static_cast<T>(a.numel());
    return mul_scalar(reduce_sum(a), inv);
}

/// Sum over one axis; that axis is dropped (rank-1 input yields shape [1]).
template <typename T>
Tensor<T> reduce_sum_axis(const Tensor<T>& a, int axis) {
    const int rank = a.rank();
    if (axis < 0 || axis >= rank) shape_fail("reduce_sum_axis", a.shape());
    Shape out_shape;
    for (int d = 0; d < rank; ++d)
        if (d != axis) out_shape.push_back(a.dim(d));
    if (out_shape.empty()) out_shape.push_back(1);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a.dim(d));
    const std::size_t ax = static_cast<std::size_t>(a.dim(axis));
    auto out = make_op_node<T>("reduce_sum_axis", out_shape, {a.node_ptr()},
                               [outer, inner, ax](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t k = 0; k < ax; ++k) {
                                           const T* g = nd.grad.data() + o * inner;
                                           T* dst = pa.grad.data() + (o * ax + k) * inner;
                                           for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                                       }
                               });
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < ax; ++k) {
            const T* src = a.value().data() + (o * ax + k) * inner;
            T* dst = out.value().data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return out;
}

/// Numerically stable softmax along one axis.
template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& a, int axis) {
    const int rank = a.rank();
    if (axis < 0 || axis >= rank) shape_fail("softmax_axis", a.shape());
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a.dim(d));
    const std::size_t ax = static_cast<std::size_t>(a.dim(axis));
    auto out = make_op_node<T>("softmax", a.shape(), {a.node_ptr()},
                               [outer, inner, ax](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < inner; ++i) {
                                           const std::size_t base = o * ax * inner + i;
                                           T dot = T(0);
                                           for (std::size_t k = 0; k < ax; ++k) {
                                               const std::size_t p = base + k * inner;
                                               dot += nd.grad[p] * nd.value[p];
                                           }
                                           for (std::size_t k = 0; k < ax; ++k) {
                                               const std::size_t p = base + k * inner;
                                               pa.grad[p] += nd.value[p] * (nd.grad[p] - dot);
                                           }
                                       }
                               });
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * ax * inner + i;
            T mx = a.value()[base];
            for (std::size_t k = 1; k < ax; ++k) mx = std::max(mx, a.value()[base + k * inner]);
            T sum = T(0);
            for (std::size_t k = 0; k < ax; ++k) {
                const T e = std::exp(a.value()[base + k * inner] - mx);
                out.value()[base + k * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t k = 0; k < ax; ++k) out.value()[base + k * inner] *= inv;
        }
    return out;
}

// ---- convolution -----------------------------------------------------------

namespace detail {

struct ConvDims {
    int n, ci, h, w, co, kh, kw, stride, ho, wo, pad_t, pad_l;
};

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride) {
    ConvDims d{};
    const bool batched = xs.size() == 4;
    d.n = batched ? xs[0] : 1;
    d.ci = batched ? xs[1] : xs[0];
    d.h = batched ? xs[2] : xs[1];
    d.w = batched ? xs[3] : xs[2];
    d.co = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.stride = stride;
    d.ho = (d.h + stride - 1) / stride;
    d.wo = (d.w + stride - 1) / stride;
    const int pad_h = std::max((d.ho - 1) * stride + d.kh - d.h, 0);
    const int pad_w = std::max((d.wo - 1) * stride + d.kw - d.w, 0);
    d.pad_t = pad_h / 2;
    d.pad_l = pad_w / 2;
    return d;
}

// col layout: [ci*kh*kw, ho*wo], zero padding outside the image.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                T* row = col + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad_t + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(dst, dst + d.wo, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * d.h + iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad_l + kx;
                        dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* gx) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                const T* row = col + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad_t + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    T* dst = gx + (static_cast<std::size_t>(c) * d.h + iy) * d.w;
                    const T* src = row + static_cast<std::size_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad_l + kx;
                        if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace detail

/// 2-D convolution, 'same' padding. x: [N,C,H,W] or [C,H,W]; w: [Co,Ci,kh,kw];
/// optional bias [Co]. Lowered to im2col + GEMM; im2col is recomputed in the
/// backward pass instead of cached (memory over speed).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr, int stride = 1) {
    if ((x.rank() != 3 && x.rank() != 4) || w.rank() != 4) shape_fail("conv2d", x.shape(), w.shape());
    const auto d = detail::conv_dims(x.shape(), w.shape(), stride);
    if (d.ci != w.dim(1)) shape_fail("conv2d", x.shape(), w.shape());
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.co)) shape_fail("conv2d", w.shape(), bias->shape());

    Shape out_shape = x.rank() == 4 ? Shape{d.n, d.co, d.ho, d.wo} : Shape{d.co, d.ho, d.wo};
    std::vector<std::shared_ptr<TensorNode<T>>> parents{x.node_ptr(), w.node_ptr()};
    if (bias) parents.push_back(bias->node_ptr());

    auto out = make_op_node<T>(
        "conv2d", out_shape, std::move(parents), [d](TensorNode<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pw = *nd.parents[1];
            TensorNode<T>* pb = nd.parents.size() > 2 ? nd.parents[2].get() : nullptr;
            const int hw = d.ho * d.wo;
            const int krows = d.ci * d.kh * d.kw;
            const std::size_t x_step = static_cast<std::size_t>(d.ci) * d.h * d.w;
            const std::size_t o_step = static_cast<std::size_t>(d.co) * hw;
            std::vector<T> col(static_cast<std::size_t>(krows) * hw);
            std::vector<T> gcol;
            if (px.requires_grad) {
                px.ensure_grad();
                gcol.resize(col.size());
            }
            if (pw.requires_grad) pw.ensure_grad();
            if (pb && pb->requires_grad) pb->ensure_grad();
            for (int b = 0; b < d.n; ++b) {
                detail::ECMap<T> G(nd.grad.data() + b * o_step, d.co, hw);
                if (pw.requires_grad) {
                    detail::im2col(px.value.data() + b * x_step, d, col.data());
                    detail::ECMap<T> C(col.data(), krows, hw);
                    detail::EMap<T> GW(pw.grad.data(), d.co, krows);
                    GW.noalias() += G * C.transpose();
                }
                if (px.requires_grad) {
                    detail::ECMap<T> W(pw.value.data(), d.co, krows);
                    detail::EMap<T> GC(gcol.data(), krows, hw);
                    GC.noalias() = W.transpose() * G;
                    detail::col2im_add(gcol.data(), d, px.grad.data() + b * x_step);
                }
                if (pb && pb->requires_grad) {
                    for (int c = 0; c < d.co; ++c) {
                        T acc = T(0);
                        const T* g = nd.grad.data() + b * o_step + static_cast<std::size_t>(c) * hw;
                        for (int i = 0; i < hw; ++i) acc += g[i];
                        pb->grad[static_cast<std::size_t>(c)] += acc;
                    }
                }
            }
        });

    const int hw = d.ho * d.wo;
    const int krows = d.ci * d.kh * d.kw;
    const std::size_t x_step = static_cast<std::size_t>(d.ci) * d.h * d.w;
    const std::size_t o_step = static_cast<std::size_t>(d.co) * hw;
    std::vector<T> col(static_cast<std::size_t>(krows) * hw);
    detail::ECMap<T> W(w.value().data(), d.co, krows);
    for (int b = 0; b < d.n; ++b) {
        detail::im2col(x.value().data() + b * x_step, d, col.data());
        detail::ECMap<T> C(col.data(), krows, hw);
        detail::EMap<T> O(out.value().data() + b * o_step, d.co, hw);
        O.noalias() = W * C;
        if (bias) {
            for (int c = 0; c < d.co; ++c) {
                T* o = out.value().data() + b * o_step + static_cast<std::size_t>(c) * hw;
                const T bv = bias->value()[static_cast<std::size_t>(c)];
                for (int i = 0; i < hw; ++i) o[i] += bv;
            }
        }
    }
    return out;
}

/// Separable blur with a fixed (non-learnable) 1-D kernel, zero padding.
/// Applied per channel of a [C,H,W] tensor; gradient flows to the input only.
template <typename T>
Tensor<T> separable_blur(const Tensor<T>& x, const std::vector<T>& kernel) {
    if (x.rank() != 3) shape_fail("separable_blur", x.shape());
    if (kernel.size() % 2 == 0) throw ShapeError("separable_blur: kernel length must be odd");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int r = static_cast<int>(kernel.size()) / 2;

    auto pass = [C, H, W, r](const std::vector<T>& in, std::vector<T>& outv, const std::vector<T>& k) {
        std::vector<T> tmp(in.size(), T(0));
        // horizontal
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                const T* row = in.data() + (static_cast<std::size_t>(c) * H + y) * W;
                T* dst = tmp.data() + (static_cast<std::size_t>(c) * H + y) * W;
                for (int xcol = 0; xcol < W; ++xcol) {
                    T acc = T(0);
                    for (int j = -r; j <= r; ++j) {
                        const int xx = xcol + j;
                        if (xx >= 0 && xx < W) acc += k[static_cast<std::size_t>(j + r)] * row[xx];
                    }
                    dst[xcol] = acc;
                }
            }
        // vertical
        std::fill(outv.begin(), outv.end(), T(0));
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                T* dst = outv.data() + (static_cast<std::size_t>(c) * H + y) * W;
                for (int j = -r; j <= r; ++j) {
                    const int yy = y + j;
                    if (yy < 0 || yy >= H) continue;
                    const T* src = tmp.data() + (static_cast<std::size_t>(c) * H + yy) * W;
                    const T kv = k[static_cast<std::size_t>(j + r)];
                    for (int xcol = 0; xcol < W; ++xcol) dst[xcol] += kv * src[xcol];
                }
            }
    };

    std::vector<T> flipped(kernel.rbegin(), kernel.rend());
    auto out = make_op_node<T>("separable_blur", x.shape(), {x.node_ptr()},
                               [pass, flipped](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   std::vector<T> gin(nd.grad.size());
                                   pass(nd.grad, gin, flipped);
                                   for (std::size_t i = 0; i < gin.size(); ++i) pa.grad[i] += gin[i];
                               });
    pass(x.value(), out.value(), kernel);
    return out;
}

// ---- sampling --------------------------------------------------------------

template <typename T>
struct GridSampleOut {
    Tensor<T> values;  // [C, ...coord shape]
    Tensor<T> mask;    // coord shape, 1 where all taps in range, no gradient
};

/// Bilinear sampling of img [C,H,W] at coordinates (u,v) (pixel centers at
/// integer coordinates). Out-of-range samples produce value 0 and mask 0.
/// Differentiable w.r.t. the image and both coordinate maps.
template <typename T>
GridSampleOut<T> grid_sample(const Tensor<T>& img, const Tensor<T>& u, const Tensor<T>& v) {
    if (img.rank() != 3) shape_fail("grid_sample", img.shape());
    detail::check_same("grid_sample", u, v);
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const std::size_t Q = u.numel();

    Shape out_shape{C};
    for (int d : u.shape()) out_shape.push_back(d);
    Tensor<T> mask = Tensor<T>::zeros(u.shape());

    auto out = make_op_node<T>(
        "grid_sample", out_shape, {img.node_ptr(), u.node_ptr(), v.node_ptr()},
        [C, H, W, Q](TensorNode<T>& nd) {
            auto& pi = *nd.parents[0];
            auto& pu = *nd.parents[1];
            auto& pv = *nd.parents[2];
            if (pi.requires_grad) pi.ensure_grad();
            if (pu.requires_grad) pu.ensure_grad();
            if (pv.requires_grad) pv.ensure_grad();
            for (std::size_t q = 0; q < Q; ++q) {
                const T uu = pu.value[q], vv = pv.value[q];
                if (!(uu >= T(0) && uu <= T(W - 1) && vv >= T(0) && vv <= T(H - 1))) continue;
                const int x0 = std::min(static_cast<int>(std::floor(uu)), W - 1);
                const int y0 = std::min(static_cast<int>(std::floor(vv)), H - 1);
                const int x1 = std::min(x0 + 1, W - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const T fx = uu - static_cast<T>(x0), fy = vv - static_cast<T>(y0);
                T du = T(0), dv = T(0);
                for (int c = 0; c < C; ++c) {
                    const T g = nd.grad[static_cast<std::size_t>(c) * Q + q];
                    if (g == T(0)) continue;
                    const std::size_t base = static_cast<std::size_t>(c) * H * W;
                    const T p00 = pi.value[base + static_cast<std::size_t>(y0) * W + x0];
                    const T p01 = pi.value[base + static_cast<std::size_t>(y0) * W + x1];
                    const T p10 = pi.value[base + static_cast<std::size_t>(y1) * W + x0];
                    const T p11 = pi.value[base + static_cast<std::size_t>(y1) * W + x1];
                    if (pi.requires_grad) {
                        pi.grad[base + static_cast<std::size_t>(y0) * W + x0] += g * (T(1) - fx) * (T(1) - fy);
                        pi.grad[base + static_cast<std::size_t>(y0) * W + x1] += g * fx * (T(1) - fy);
                        pi.grad[base + static_cast<std::size_t>(y1) * W + x0] += g * (T(1) - fx) * fy;
                        pi.grad[base + static_cast<std::size_t>(y1) * W + x1] += g * fx * fy;
                    }
                    du += g * ((T(1) - fy) * (p01 - p00) + fy * (p11 - p10));
                    dv += g * ((T(1) - fx) * (p10 - p00) + fx * (p11 - p01));
                }
                if (pu.requires_grad) pu.grad[q] += du;
                if (pv.requires_grad) pv.grad[q] += dv;
            }
        });

    for (std::size_t q = 0; q < Q; ++q) {
        const T uu = u.value()[q], vv = v.value()[q];
        if (!(uu >= T(0) && uu <= T(W - 1) && vv >= T(0) && vv <= T(H - 1))) continue;
        mask.value()[q] = T(1);
        const int x0 = std::min(static_cast<int>(std::floor(uu)), W - 1);
        const int y0 = std::min(static_cast<int>(std::floor(vv)), H - 1);
        const int x1 = std::min(x0 + 1, W - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const T fx = uu - static_cast<T>(x0), fy = vv - static_cast<T>(y0);
        for (int c = 0; c < C; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * H * W;
            const T p00 = img.value()[base + static_cast<std::size_t>(y0) * W + x0];
            const T p01 = img.value()[base + static_cast<std::size_t>(y0) * W + x1];
            const T p10 = img.value()[base + static_cast<std::size_t>(y1) * W + x0];
            const T p11 = img.value()[base + static_cast<std::size_t>(y1) * W + x1];
            out.value()[static_cast<std::size_t>(c) * Q + q] =
                (T(1) - fy) * ((T(1) - fx) * p00 + fx * p01) + fy * ((T(1) - fx) * p10 + fx * p11);
        }
    }
    return {out, mask};
}

// ---- operator sugar --------------------------------------------------------

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return mul_scalar(a, c); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

}  // namespace pcvs
