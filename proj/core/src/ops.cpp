// SPDX-License-Identifier: Apache-2.0
#include "vivit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace vivit::ops {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

template <typename T>
const std::vector<T>& data_vec(const TensorImpl& impl) {
    return std::get<std::vector<T>>(*impl.data);
}

template <typename T>
std::vector<T>& grad_vec(TensorImpl& impl) {
    return std::get<std::vector<T>>(impl.grad);
}

template <class F>
void dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F32) {
        f(float{});
    } else {
        f(double{});
    }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ValueError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
    }
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> backward) {
    Tape* tape = active_tape();
    if (!tape) return;
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    if (!needs) return;
    out.set_requires_grad(true);
    Tape::Node node;
    node.op = op;
    for (const Tensor* t : inputs) node.inputs.push_back(t->impl());
    node.output = out.impl();
    node.backward = std::move(backward);
    tape->record(std::move(node));
}

// ---- matmul ---------------------------------------------------------------

// c[m,n] += a[m,k] . b[k,n]; the pointers never alias (op outputs are fresh
// buffers), which the vectorizer needs to know
template <typename T>
void mm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + l * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
std::vector<T>& transpose_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

// c[m,k] += a[m,n] . b[k,n]^T via an explicit transpose of b, so the hot loop
// is the same contiguous saxpy as mm_acc. Per output element the sum still
// runs over j in ascending order (fixed reduction order).
template <typename T>
void mm_nt_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::int64_t m,
               std::int64_t n, std::int64_t k) {
    std::vector<T>& bt = transpose_scratch<T>();
    if (static_cast<std::int64_t>(bt.size()) < n * k) bt.resize(static_cast<std::size_t>(n * k));
    for (std::int64_t l = 0; l < k; ++l)
        for (std::int64_t j = 0; j < n; ++j) bt[j * k + l] = b[l * n + j];
    mm_acc(a, bt.data(), c, m, n, k);
}

// c[k,n] += a[m,k]^T . b[m,n]
template <typename T>
void mm_tn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::int64_t m,
               std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::int64_t l = 0; l < k; ++l) {
            const T av = arow[l];
            T* crow = c + l * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.size() != sb.size()) {
        throw ShapeError("matmul: ranks must match and be >= 2, got " + shape_str(sa) + " and " +
                         shape_str(sb));
    }
    const std::size_t r = sa.size();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (sa[i] != sb[i]) {
            throw ShapeError("matmul: batch dims differ, " + shape_str(sa) + " vs " + shape_str(sb));
        }
    }
    const std::int64_t m = sa[r - 2], k = sa[r - 1], k2 = sb[r - 2], n = sb[r - 1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(sa) + " x " +
                         shape_str(sb));
    }
    std::int64_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape, a.dtype());

    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.mutable_data<T>().data();
        for (std::int64_t bb = 0; bb < batch; ++bb) {
            mm_acc(pa + bb * m * k, pb + bb * k * n, pc + bb * m * n, m, k, n);
        }
    });
    check_finite(out, "matmul");

    if (wants_grad({&a, &b})) {
        ImplPtr ia = a.impl(), ib = b.impl(), io = out.impl();
        record("matmul", {&a, &b}, out, [ia, ib, io, batch, m, k, n]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* dy = grad_vec<T>(*io).data();
                if (ia->requires_grad) {
                    ia->ensure_zero_grad();
                    T* da = grad_vec<T>(*ia).data();
                    const T* pb = data_vec<T>(*ib).data();
                    for (std::int64_t bb = 0; bb < batch; ++bb) {
                        mm_nt_acc(dy + bb * m * n, pb + bb * k * n, da + bb * m * k, m, n, k);
                    }
                }
                if (ib->requires_grad) {
                    ib->ensure_zero_grad();
                    T* db = grad_vec<T>(*ib).data();
                    const T* pa = data_vec<T>(*ia).data();
                    for (std::int64_t bb = 0; bb < batch; ++bb) {
                        mm_tn_acc(pa + bb * m * k, dy + bb * m * n, db + bb * k * n, m, k, n);
                    }
                }
            });
        });
    }
    return out;
}

// ---- shape ops ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    // contiguous row-major view: share the buffer, no copy
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = x.dtype();
    impl->data = x.impl()->data;
    impl->grad = (x.dtype() == Dtype::F32) ? detail::Buffer(std::vector<float>{})
                                           : detail::Buffer(std::vector<double>{});
    Tensor out(std::move(impl));
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("reshape", {&x}, out, [ix, io]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& dy = grad_vec<T>(*io);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                auto& dx = grad_vec<T>(*ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            });
        });
    }
    return out;
}

namespace {

// Walks the output linearly while an odometer tracks the source offset; the
// innermost axis is a strided copy, everything above is increment/carry.
template <typename T>
void permute_kernel(const T* src, T* dst, const Shape& in_shape,
                    const std::vector<std::size_t>& axes) {
    const auto in_strides = row_major_strides(in_shape);
    const std::size_t rank = axes.size();
    Shape out_shape(rank);
    std::vector<std::int64_t> step(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[axes[i]];
        step[i] = in_strides[axes[i]];
    }
    const std::int64_t n = shape_numel(in_shape);
    const std::int64_t inner_n = out_shape[rank - 1];
    const std::int64_t inner_step = step[rank - 1];

    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t src_off = 0;
    for (std::int64_t o = 0; o < n; o += inner_n) {
        if (inner_step == 1) {
            std::memcpy(dst + o, src + src_off, static_cast<std::size_t>(inner_n) * sizeof(T));
        } else {
            for (std::int64_t i = 0; i < inner_n; ++i) dst[o + i] = src[src_off + i * inner_step];
        }
        std::int64_t d = static_cast<std::int64_t>(rank) - 2;
        while (d >= 0) {
            src_off += step[d];
            if (++idx[d] < out_shape[d]) break;
            src_off -= step[d] * out_shape[d];
            idx[d] = 0;
            --d;
        }
        if (d < 0) break;
    }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& s = x.shape();
    if (axes.size() != s.size()) {
        throw ShapeError("permute: got " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(s.size()));
    }
    std::vector<bool> seen(axes.size(), false);
    for (auto a : axes) {
        if (a >= axes.size() || seen[a]) throw ShapeError("permute: invalid axis list");
        seen[a] = true;
    }
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = s[axes[i]];
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        permute_kernel(x.data<T>().data(), out.mutable_data<T>().data(), s, axes);
    });
    if (wants_grad({&x})) {
        std::vector<std::size_t> inverse(axes.size());
        for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
        ImplPtr ix = x.impl(), io = out.impl();
        record("permute", {&x}, out, [ix, io, inverse]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                std::vector<T> dx_perm(static_cast<std::size_t>(io->numel()));
                permute_kernel(grad_vec<T>(*io).data(), dx_perm.data(), io->shape, inverse);
                auto& dx = grad_vec<T>(*ix);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_perm[i];
            });
        });
    }
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    if (axes.size() < 2) throw ShapeError("transpose_last2: rank < 2");
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

namespace {

// Visits the crop row by row (contiguous runs along the last axis), yielding
// (dst_offset, src_offset, run_length).
template <class F>
void for_each_slice_row(const Shape& in_shape, const std::vector<std::int64_t>& starts,
                        const Shape& out_shape, F&& f) {
    const auto in_strides = row_major_strides(in_shape);
    const std::size_t rank = in_shape.size();
    const std::int64_t n = shape_numel(out_shape);
    const std::int64_t inner_n = out_shape[rank - 1];

    std::int64_t src_off = 0;
    for (std::size_t d = 0; d < rank; ++d) src_off += starts[d] * in_strides[d];
    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t o = 0; o < n; o += inner_n) {
        f(o, src_off, inner_n);
        std::int64_t d = static_cast<std::int64_t>(rank) - 2;
        while (d >= 0) {
            src_off += in_strides[d];
            if (++idx[d] < out_shape[d]) break;
            src_off -= in_strides[d] * out_shape[d];
            idx[d] = 0;
            --d;
        }
        if (d < 0) break;
    }
}

}  // namespace

Tensor slice(const Tensor& x, const std::vector<std::int64_t>& starts,
             const std::vector<std::int64_t>& sizes) {
    const Shape& s = x.shape();
    if (starts.size() != s.size() || sizes.size() != s.size()) {
        throw ShapeError("slice: starts/sizes rank mismatch for " + shape_str(s));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (starts[d] < 0 || sizes[d] < 1 || starts[d] + sizes[d] > s[d]) {
            throw ShapeError("slice: window out of range on axis " + std::to_string(d) + " of " +
                             shape_str(s));
        }
    }
    Shape out_shape(sizes.begin(), sizes.end());
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for_each_slice_row(s, starts, out_shape, [&](std::int64_t o, std::int64_t i, std::int64_t run) {
            std::memcpy(dst + o, src + i, static_cast<std::size_t>(run) * sizeof(T));
        });
    });
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("slice", {&x}, out, [ix, io, starts]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for_each_slice_row(ix->shape, starts, io->shape,
                                   [&](std::int64_t o, std::int64_t i, std::int64_t run) {
                                       for (std::int64_t r = 0; r < run; ++r) dx[i + r] += dy[o + r];
                                   });
            });
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    Shape out_shape = s0;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        require_same_dtype(parts[0], p, "concat");
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != s0[d]) {
                throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    Tensor out = Tensor::zeros(out_shape, parts[0].dtype());

    // copy part-by-part: outer x part_axis x inner contiguous blocks
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    dispatch(parts[0].dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = out.mutable_data<T>().data();
        std::int64_t offset = 0;
        for (const auto& p : parts) {
            const std::int64_t ax = p.shape()[axis];
            const T* src = p.data<T>().data();
            for (std::int64_t o = 0; o < outer; ++o) {
                std::memcpy(dst + (o * total + offset) * inner, src + o * ax * inner,
                            static_cast<std::size_t>(ax * inner) * sizeof(T));
            }
            offset += ax;
        }
    });

    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (active_tape() && needs) {
        out.set_requires_grad(true);
        Tape::Node node;
        node.op = "concat";
        std::vector<ImplPtr> impls;
        for (const auto& p : parts) {
            node.inputs.push_back(p.impl());
            impls.push_back(p.impl());
        }
        ImplPtr io = out.impl();
        node.output = io;
        node.backward = [impls, io, axis, outer, inner, total]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& dy = grad_vec<T>(*io);
                std::int64_t offset = 0;
                for (const auto& impl : impls) {
                    const std::int64_t ax = impl->shape[axis];
                    if (impl->requires_grad) {
                        impl->ensure_zero_grad();
                        auto& dx = grad_vec<T>(*impl);
                        for (std::int64_t o = 0; o < outer; ++o) {
                            const T* src = dy.data() + (o * total + offset) * inner;
                            T* dst = dx.data() + o * ax * inner;
                            for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                        }
                    }
                    offset += ax;
                }
            });
        };
        active_tape()->record(std::move(node));
    }
    return out;
}

Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::int64_t>& indices) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("index_select: axis out of range");
    if (indices.empty()) throw ShapeError("index_select: empty index list");
    for (auto i : indices) {
        if (i < 0 || i >= s[axis]) {
            throw ShapeError("index_select: index " + std::to_string(i) + " out of range for axis of size " +
                             std::to_string(s[axis]));
        }
    }
    Shape out_shape = s;
    out_shape[axis] = static_cast<std::int64_t>(indices.size());
    Tensor out = Tensor::zeros(out_shape, x.dtype());

    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t ax_in = s[axis];
    const std::int64_t ax_out = out_shape[axis];

    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t j = 0; j < ax_out; ++j) {
                std::memcpy(dst + (o * ax_out + j) * inner, src + (o * ax_in + indices[j]) * inner,
                            static_cast<std::size_t>(inner) * sizeof(T));
            }
        }
    });
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("index_select", {&x}, out, [ix, io, indices, outer, inner, ax_in, ax_out]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::int64_t o = 0; o < outer; ++o) {
                    for (std::int64_t j = 0; j < ax_out; ++j) {
                        const T* src = dy.data() + (o * ax_out + j) * inner;
                        T* dst = dx.data() + (o * ax_in + indices[j]) * inner;
                        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                    }
                }
            });
        });
    }
    return out;
}

Tensor expand_leading(const Tensor& x, std::int64_t n) {
    if (n < 1) throw ShapeError("expand_leading: n must be >= 1");
    Shape out_shape;
    out_shape.push_back(n);
    for (auto d : x.shape()) out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    const std::int64_t block = x.numel();
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t i = 0; i < n; ++i) {
            std::memcpy(dst + i * block, src, static_cast<std::size_t>(block) * sizeof(T));
        }
    });
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("expand_leading", {&x}, out, [ix, io, n, block]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* src = dy.data() + i * block;
                    for (std::int64_t j = 0; j < block; ++j) dx[j] += src[j];
                }
            });
        });
    }
    return out;
}

// ---- elementwise ----------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    require_same_dtype(a, b, name);
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto pc = out.mutable_data<T>();
        switch (op) {
            case BinOp::Add:
                for (std::size_t i = 0; i < pa.size(); ++i) pc[i] = pa[i] + pb[i];
                break;
            case BinOp::Sub:
                for (std::size_t i = 0; i < pa.size(); ++i) pc[i] = pa[i] - pb[i];
                break;
            case BinOp::Mul:
                for (std::size_t i = 0; i < pa.size(); ++i) pc[i] = pa[i] * pb[i];
                break;
        }
    });
    check_finite(out, name);
    if (wants_grad({&a, &b})) {
        ImplPtr ia = a.impl(), ib = b.impl(), io = out.impl();
        record(name, {&a, &b}, out, [ia, ib, io, op]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& dy = grad_vec<T>(*io);
                if (ia->requires_grad) {
                    ia->ensure_zero_grad();
                    auto& da = grad_vec<T>(*ia);
                    if (op == BinOp::Mul) {
                        const auto& vb = data_vec<T>(*ib);
                        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb[i];
                    } else {
                        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                    }
                }
                if (ib->requires_grad) {
                    ib->ensure_zero_grad();
                    auto& db = grad_vec<T>(*ib);
                    if (op == BinOp::Mul) {
                        const auto& va = data_vec<T>(*ia);
                        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va[i];
                    } else if (op == BinOp::Sub) {
                        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
                    } else {
                        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
                    }
                }
            });
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinOp::Mul, "mul"); }

Tensor add_broadcast(const Tensor& x, const Tensor& b) {
    require_same_dtype(x, b, "add_broadcast");
    const Shape& sx = x.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sx.size()) {
        throw ShapeError("add_broadcast: rhs rank exceeds lhs, " + shape_str(sx) + " vs " +
                         shape_str(sb));
    }
    for (std::size_t i = 0; i < sb.size(); ++i) {
        if (sb[sb.size() - 1 - i] != sx[sx.size() - 1 - i]) {
            throw ShapeError("add_broadcast: " + shape_str(sb) + " is not a suffix of " +
                             shape_str(sx));
        }
    }
    const std::int64_t block = shape_numel(sb);
    const std::int64_t reps = x.numel() / block;
    Tensor out = Tensor::zeros(sx, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.mutable_data<T>().data();
        for (std::int64_t r = 0; r < reps; ++r) {
            const T* xr = px + r * block;
            T* cr = pc + r * block;
            for (std::int64_t i = 0; i < block; ++i) cr[i] = xr[i] + pb[i];
        }
    });
    check_finite(out, "add_broadcast");
    if (wants_grad({&x, &b})) {
        ImplPtr ix = x.impl(), ib = b.impl(), io = out.impl();
        record("add_broadcast", {&x, &b}, out, [ix, ib, io, reps, block]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& dy = grad_vec<T>(*io);
                if (ix->requires_grad) {
                    ix->ensure_zero_grad();
                    auto& dx = grad_vec<T>(*ix);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                }
                if (ib->requires_grad) {
                    ib->ensure_zero_grad();
                    auto& db = grad_vec<T>(*ib);
                    for (std::int64_t r = 0; r < reps; ++r) {
                        const T* src = dy.data() + r * block;
                        for (std::int64_t i = 0; i < block; ++i) db[i] += src[i];
                    }
                }
            });
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T cv = static_cast<T>(c);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * cv;
    });
    check_finite(out, "scale");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("scale", {&x}, out, [ix, io, c]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const T cv = static_cast<T>(c);
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * cv;
            });
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T cv = static_cast<T>(c);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + cv;
    });
    check_finite(out, "add_scalar");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("add_scalar", {&x}, out, [ix, io]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            });
        });
    }
    return out;
}

// ---- softmax family -------------------------------------------------------

namespace {

struct RowView {
    std::int64_t rows;
    std::int64_t cols;
};

RowView last_axis_rows(const Tensor& x, const char* op) {
    if (x.rank() < 1) throw ShapeError(std::string(op) + ": rank must be >= 1");
    const std::int64_t cols = x.shape().back();
    if (cols < 1) throw ShapeError(std::string(op) + ": empty last axis");
    return {x.numel() / cols, cols};
}

}  // namespace

Tensor softmax(const Tensor& x) {
    const auto [rows, cols] = last_axis_rows(x, "softmax");
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* in = src + r * cols;
            T* o = dst + r * cols;
            T mx = in[0];
            for (std::int64_t i = 1; i < cols; ++i) mx = std::max(mx, in[i]);
            T sum = 0;
            for (std::int64_t i = 0; i < cols; ++i) {
                o[i] = std::exp(in[i] - mx);
                sum += o[i];
            }
            const T inv = T(1) / sum;
            for (std::int64_t i = 0; i < cols; ++i) o[i] *= inv;
        }
    });
    check_finite(out, "softmax");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("softmax", {&x}, out, [ix, io, rows = rows, cols = cols]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& y = data_vec<T>(*io);
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* yr = y.data() + r * cols;
                    const T* dyr = dy.data() + r * cols;
                    T dot = 0;
                    for (std::int64_t i = 0; i < cols; ++i) dot += yr[i] * dyr[i];
                    T* dxr = dx.data() + r * cols;
                    for (std::int64_t i = 0; i < cols; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
                }
            });
        });
    }
    return out;
}

Tensor log_softmax(const Tensor& x) {
    const auto [rows, cols] = last_axis_rows(x, "log_softmax");
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* in = src + r * cols;
            T* o = dst + r * cols;
            T mx = in[0];
            for (std::int64_t i = 1; i < cols; ++i) mx = std::max(mx, in[i]);
            T sum = 0;
            for (std::int64_t i = 0; i < cols; ++i) sum += std::exp(in[i] - mx);
            const T lse = mx + std::log(sum);
            for (std::int64_t i = 0; i < cols; ++i) o[i] = in[i] - lse;
        }
    });
    check_finite(out, "log_softmax");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("log_softmax", {&x}, out, [ix, io, rows = rows, cols = cols]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& y = data_vec<T>(*io);
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* yr = y.data() + r * cols;
                    const T* dyr = dy.data() + r * cols;
                    T sum = 0;
                    for (std::int64_t i = 0; i < cols; ++i) sum += dyr[i];
                    T* dxr = dx.data() + r * cols;
                    for (std::int64_t i = 0; i < cols; ++i) dxr[i] += dyr[i] - std::exp(yr[i]) * sum;
                }
            });
        });
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_same_dtype(x, gamma, "layernorm");
    require_same_dtype(x, beta, "layernorm");
    const auto [rows, cols] = last_axis_rows(x, "layernorm");
    if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols) {
        throw ShapeError("layernorm: gamma/beta must be length-" + std::to_string(cols) +
                         " vectors, got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
    }
    if (eps <= 0) throw ValueError("layernorm: eps must be positive");
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        const T* g = gamma.data<T>().data();
        const T* b = beta.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* in = src + r * cols;
            T* o = dst + r * cols;
            T mean = 0;
            for (std::int64_t i = 0; i < cols; ++i) mean += in[i];
            mean /= static_cast<T>(cols);
            T var = 0;
            for (std::int64_t i = 0; i < cols; ++i) {
                const T d = in[i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(cols);  // biased estimator
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (std::int64_t i = 0; i < cols; ++i) o[i] = (in[i] - mean) * inv * g[i] + b[i];
        }
    });
    check_finite(out, "layernorm");
    if (wants_grad({&x, &gamma, &beta})) {
        ImplPtr ix = x.impl(), ig = gamma.impl(), ib = beta.impl(), io = out.impl();
        record("layernorm", {&x, &gamma, &beta}, out, [ix, ig, ib, io, eps, rows = rows, cols = cols]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& xv = data_vec<T>(*ix);
                const auto& gv = data_vec<T>(*ig);
                const auto& dy = grad_vec<T>(*io);
                std::vector<T> xhat(static_cast<std::size_t>(cols));
                const bool need_x = ix->requires_grad;
                const bool need_g = ig->requires_grad;
                const bool need_b = ib->requires_grad;
                if (need_x) ix->ensure_zero_grad();
                if (need_g) ig->ensure_zero_grad();
                if (need_b) ib->ensure_zero_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* in = xv.data() + r * cols;
                    const T* dyr = dy.data() + r * cols;
                    T mean = 0;
                    for (std::int64_t i = 0; i < cols; ++i) mean += in[i];
                    mean /= static_cast<T>(cols);
                    T var = 0;
                    for (std::int64_t i = 0; i < cols; ++i) {
                        const T d = in[i] - mean;
                        var += d * d;
                    }
                    var /= static_cast<T>(cols);
                    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                    for (std::int64_t i = 0; i < cols; ++i) xhat[i] = (in[i] - mean) * inv;
                    if (need_g) {
                        auto& dg = grad_vec<T>(*ig);
                        for (std::int64_t i = 0; i < cols; ++i) dg[i] += dyr[i] * xhat[i];
                    }
                    if (need_b) {
                        auto& db = grad_vec<T>(*ib);
                        for (std::int64_t i = 0; i < cols; ++i) db[i] += dyr[i];
                    }
                    if (need_x) {
                        auto& dx = grad_vec<T>(*ix);
                        T mean_g = 0, mean_gx = 0;
                        for (std::int64_t i = 0; i < cols; ++i) {
                            const T gi = dyr[i] * gv[i];
                            mean_g += gi;
                            mean_gx += gi * xhat[i];
                        }
                        mean_g /= static_cast<T>(cols);
                        mean_gx /= static_cast<T>(cols);
                        T* dxr = dx.data() + r * cols;
                        for (std::int64_t i = 0; i < cols; ++i) {
                            const T gi = dyr[i] * gv[i];
                            dxr[i] += (gi - mean_g - xhat[i] * mean_gx) * inv;
                        }
                    }
                }
            });
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const bool needs_grad = wants_grad({&x});
    // tanh(u) is saved for the backward rule; it is the expensive factor
    std::shared_ptr<detail::Buffer> saved_tanh;
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        const std::int64_t count = x.numel();
        T* cache = nullptr;
        if (needs_grad) {
            saved_tanh = std::make_shared<detail::Buffer>(
                std::vector<T>(static_cast<std::size_t>(count)));
            cache = std::get<std::vector<T>>(*saved_tanh).data();
        }
        for (std::int64_t i = 0; i < count; ++i) {
            const T v = src[i];
            const T u = static_cast<T>(kC) * (v + static_cast<T>(kA) * v * v * v);
            const T t = std::tanh(u);
            if (cache) cache[i] = t;
            dst[i] = T(0.5) * v * (T(1) + t);
        }
    });
    check_finite(out, "gelu");
    if (needs_grad) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("gelu", {&x}, out, [ix, io, saved_tanh]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& xv = data_vec<T>(*ix);
                const auto& tv = std::get<std::vector<T>>(*saved_tanh);
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                const std::int64_t count = static_cast<std::int64_t>(xv.size());
                for (std::int64_t i = 0; i < count; ++i) {
                    const T v = xv[i];
                    const T t = tv[static_cast<std::size_t>(i)];
                    const T sech2 = T(1) - t * t;
                    const T du = static_cast<T>(kC) * (T(1) + T(3) * static_cast<T>(kA) * v * v);
                    dx[i] += dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * sech2 * du);
                }
            });
        });
    }
    return out;
}

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T acc = 0;
        for (T v : x.data<T>()) acc += v;
        out.mutable_data<T>()[0] = acc;
    });
    check_finite(out, "sum_all");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("sum_all", {&x}, out, [ix, io]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const T g = grad_vec<T>(*io)[0];
                for (auto& v : grad_vec<T>(*ix)) v += g;
            });
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range");
    Shape out_shape;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (d != axis) out_shape.push_back(s[d]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t ax = s[axis];
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t a = 0; a < ax; ++a) {
                const T* row = src + (o * ax + a) * inner;
                T* orow = dst + o * inner;
                for (std::int64_t i = 0; i < inner; ++i) orow[i] += row[i];
            }
        }
    });
    check_finite(out, "sum_axis");
    if (wants_grad({&x})) {
        ImplPtr ix = x.impl(), io = out.impl();
        record("sum_axis", {&x}, out, [ix, io, outer, inner, ax]() {
            dispatch(io->dtype, [&](auto tag) {
                using T = decltype(tag);
                if (!ix->requires_grad) return;
                ix->ensure_zero_grad();
                const auto& dy = grad_vec<T>(*io);
                auto& dx = grad_vec<T>(*ix);
                for (std::int64_t o = 0; o < outer; ++o) {
                    for (std::int64_t a = 0; a < ax; ++a) {
                        T* row = dx.data() + (o * ax + a) * inner;
                        const T* orow = dy.data() + o * inner;
                        for (std::int64_t i = 0; i < inner; ++i) row[i] += orow[i];
                    }
                }
            });
        });
    }
    return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    const double n = static_cast<double>(x.shape().at(axis));
    return scale(sum_axis(x, axis), 1.0 / n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be 2-d, got " + shape_str(w.shape()));
    const std::int64_t in_dim = w.dim(0);
    const std::int64_t out_dim = w.dim(1);
    if (x.shape().back() != in_dim) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(in_dim));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    Tensor flat = reshape(x, {x.numel() / in_dim, in_dim});
    Tensor y = matmul(flat, w);
    y = add_broadcast(y, b);
    return reshape(y, out_shape);
}

}  // namespace vivit::ops
