#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// A Tape records every primitive applied to Vars created on it. Calling
// Tape::backward() on a scalar Var walks the record in reverse and returns
// the gradient of that scalar with respect to every node that depends on a
// requires_grad leaf. A tape supports exactly one backward pass.

#include <cstddef>
#include <deque>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace titan::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank 0 is a scalar, rank 2 is a matrix.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor row(std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    /// Leading extent for rank >= 1, 1 for scalars.
    std::size_t rows() const;
    /// Product of the trailing extents; a rank-1 tensor is one row.
    std::size_t cols() const;

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double item() const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradients produced by one backward pass, indexed by node id.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    /// Gradient of the loss w.r.t. v. A requires_grad node the loss does not
    /// depend on yields zeros of the right shape.
    const Tensor& operator[](const Var& v) const;
    bool has(const Var& v) const;

private:
    std::vector<Tensor> grads_;
};

/// Receives the node's upstream gradient and writes into the parents'
/// gradient buffers. A null buffer marks a parent that needs no gradient.
using BackwardFn =
    std::function<void(const Tape& tape, const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records a derived node. Parents that do not require grad are never
    /// handed a gradient buffer.
    Var record(Tensor value, std::vector<Var> parents, BackwardFn fn);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& value(const Var& v) const { return value(v.id()); }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Backpropagates from a scalar loss. Throws std::invalid_argument if the
    /// loss is not a single element or lives on another tape, and
    /// std::logic_error on a second call.
    Gradients backward(const Var& loss);

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        BackwardFn fn;
    };
    std::deque<Node> nodes_;  // stable references: value() stays valid while recording
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs must share a tape, except where a plain Tensor is
// accepted as a constant operand.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

/// a[r, c] + b[c] for every row r; b holds exactly cols(a) elements.
Var add_rowvec(const Var& a, const Var& b);
/// a[r, c] * b[c] for every row r.
Var mul_rowvec(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var softmax_rows(const Var& a);
/// Per-row standardization without affine parameters.
Var layer_norm_rows(const Var& a, double eps = 1e-5);

Var sum(const Var& a);
Var mean(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);

/// Inverted dropout: identity in eval mode; in train mode zeroes each element
/// with probability p and scales survivors by 1/(1-p). Requires 0 <= p < 1.
Var dropout(const Var& a, double p, bool train, std::uint64_t seed);

/// Identity forward; multiplies the upstream gradient by -lambda.
Var grad_reverse(const Var& a, double lambda);

/// Elementwise numerically stable binary cross-entropy on logits.
Var bce_with_logits(const Var& logits, const Tensor& targets);
/// Elementwise sigmoid focal loss on logits.
Var sigmoid_focal(const Var& logits, const Tensor& targets, double alpha, double gamma);

/// x * W + b with W stored [in x out] and b holding out elements.
Var linear(const Var& x, const Var& w, const Var& b);

}  // namespace titan::ad
