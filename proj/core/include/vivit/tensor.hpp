// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "vivit/rng.hpp"

namespace vivit {

enum class Dtype : std::uint8_t { F32, F64 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }
inline std::size_t dtype_size(Dtype dt) { return dt == Dtype::F32 ? 4 : 8; }

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);
std::vector<std::int64_t> row_major_strides(const Shape& s);

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
    Shape shape;
    Dtype dtype = Dtype::F32;
    // Shared between views (reshape/detach alias the buffer; both treat the
    // scalars as immutable). Gradients are per-view.
    std::shared_ptr<Buffer> data;
    bool requires_grad = false;
    Buffer grad;  // empty until backward touches this tensor

    std::int64_t numel() const { return shape_numel(shape); }
    bool has_grad() const;
    void ensure_zero_grad();
};

}  // namespace detail

// Dense row-major N-d array. Value semantics over a shared immutable buffer;
// every op returns a fresh tensor. Mutation is reserved for owners with
// exclusive access (initializers, the optimizer) via mutable_data().
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, Dtype dt = Dtype::F32);
    static Tensor full(Shape shape, double value, Dtype dt = Dtype::F32);
    static Tensor from_values(Shape shape, const std::vector<double>& values, Dtype dt = Dtype::F32);
    static Tensor scalar(double value, Dtype dt = Dtype::F32);
    // Uniform in [-limit, limit] with limit = sqrt(6 / (fan_in + fan_out)).
    static Tensor glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                                 RngState& rng, Dtype dt = Dtype::F32);
    static Tensor randn(Shape shape, double stddev, RngState& rng, Dtype dt = Dtype::F32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t rank() const { return shape().size(); }
    std::int64_t numel() const;
    Dtype dtype() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    template <typename T>
    std::span<const T> data() const;
    template <typename T>
    std::span<T> mutable_data();

    // dtype-erased element access (reads convert to double)
    double flat(std::int64_t i) const;
    double item() const;  // numel()==1

    // Gradient accumulated by the last backward pass; empty tensor if none.
    Tensor grad() const;
    void zero_grad();

    Tensor clone() const;           // deep copy, drops grad
    Tensor to(Dtype dt) const;      // converting copy
    Tensor detach() const;          // shares the buffer, no grad participation

    bool same_buffer(const Tensor& other) const { return impl_ == other.impl_; }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Ops append nodes in execution order, which is a
// topological order of the DAG by construction; backward() walks the list
// once in reverse, accumulating grads in that fixed order.
class Tape {
  public:
    struct Node {
        std::string op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        std::function<void()> backward;
    };

    void record(Node node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. `loss` must be a
    // scalar produced while this tape was active.
    void backward(const Tensor& loss);

    void clear() { nodes_.clear(); }

  private:
    std::vector<Node> nodes_;
};

Tape* active_tape();

// RAII: installs a tape as the recording target for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* previous_;
};

// Throws NumericError if any element is NaN/Inf; every op output is routed
// through this so non-finite values surface at the op that produced them.
void check_finite(const Tensor& t, const char* op_name);

}  // namespace vivit
