#include "titan/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MatMap as_mat(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

Tape* common_tape(const Var& a, const Var& b) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument("autodiff: operand is not attached to a tape");
    if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: operands live on different tapes");
    return a.tape();
}

Tape* tape_of(const Var& a) {
    if (!a.valid()) throw std::invalid_argument("autodiff: operand is not attached to a tape");
    return a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        std::ostringstream os;
        os << op << ": shape mismatch " << shape_string(a.shape) << " vs " << shape_string(b.shape);
        throw std::invalid_argument(os.str());
    }
}

void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        std::ostringstream os;
        os << op << ": expected a rank-2 tensor, got " << shape_string(a.shape);
        throw std::invalid_argument(os.str());
    }
}

// Elementwise unary op whose derivative is expressed through the input and
// the output value.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = fwd(x.data[i]);
    const std::size_t ia = a.id();
    return tape->record(std::move(y), {a}, [ia, deriv](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& xin = t.value(ia);
        Tensor& ga = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * deriv(xin.data[i]);
    });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_string(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) { return Tensor(Shape{rows, cols}, fill); }
Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape.empty() ? 1 : (shape.size() == 1 ? 1 : shape[0]); }
std::size_t Tensor::cols() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return shape[0];
    return shape_size(shape) / shape[0];
}

double Tensor::item() const {
    if (data.size() != 1) throw std::invalid_argument("Tensor::item: tensor holds " + std::to_string(data.size()) + " values");
    return data[0];
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](const Var& v) const {
    if (!has(v)) throw std::invalid_argument("Gradients: node " + std::to_string(v.id()) + " has no gradient");
    return grads_[v.id()];
}

bool Gradients::has(const Var& v) const { return v.id() < grads_.size() && !grads_[v.id()].data.empty(); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), requires_grad, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape() != this) throw std::invalid_argument("Tape::record: parent lives on another tape");
        node.parents.push_back(p.id());
        node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (node.requires_grad) node.fn = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
        throw std::invalid_argument("Tape::backward: loss is not a node of this tape");
    }
    if (nodes_[loss.id()].value.size() != 1) {
        throw std::invalid_argument("Tape::backward: loss must be a scalar, got shape " +
                                    shape_string(nodes_[loss.id()].value.shape));
    }
    if (consumed_) throw std::logic_error("Tape::backward: tape was already consumed by a backward pass");
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    auto ensure = [&](std::size_t id) -> Tensor& {
        if (grads[id].data.empty()) grads[id] = Tensor(nodes_[id].value.shape, 0.0);
        return grads[id];
    };
    ensure(loss.id()).data[0] = 1.0;

    std::vector<Tensor*> parent_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || grads[i].data.empty() || !node.fn) continue;
        parent_grads.clear();
        for (std::size_t p : node.parents) {
            parent_grads.push_back(nodes_[p].requires_grad ? &ensure(p) : nullptr);
        }
        // Buffers for a parent listed twice alias, so accumulation stays additive.
        node.fn(*this, grads[i], parent_grads);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].requires_grad && grads[i].data.empty()) grads[i] = Tensor(nodes_[i].value.shape, 0.0);
    }
    return Gradients(std::move(grads));
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b.value().data[i];
    return tape->record(std::move(y), {a, b}, [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (Tensor* p : pg) {
            if (!p) continue;
            for (std::size_t i = 0; i < g.size(); ++i) p->data[i] += g.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= b.value().data[i];
    return tape->record(std::move(y), {a, b}, [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i];
        if (pg[1])
            for (std::size_t i = 0; i < g.size(); ++i) pg[1]->data[i] -= g.data[i];
    });
}

Var mul(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= b.value().data[i];
    const std::size_t ia = a.id(), ib = b.id();
    return tape->record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i] * bv.data[i];
        if (pg[1])
            for (std::size_t i = 0; i < g.size(); ++i) pg[1]->data[i] += g.data[i] * av.data[i];
    });
}

Var div(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    require_same_shape(a.value(), b.value(), "div");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] /= b.value().data[i];
    const std::size_t ia = a.id(), ib = b.id();
    return tape->record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double inv = 1.0 / bv.data[i];
            if (pg[0]) pg[0]->data[i] += g.data[i] * inv;
            if (pg[1]) pg[1]->data[i] -= g.data[i] * av.data[i] * inv * inv;
        }
    });
}

namespace {
// Ties route the gradient to the first operand.
Var select_elementwise(const Var& a, const Var& b, bool take_min) {
    Tape* tape = common_tape(a, b);
    require_same_shape(a.value(), b.value(), take_min ? "minimum" : "maximum");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor y(av.shape);
    std::vector<bool> from_a(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        from_a[i] = take_min ? av.data[i] <= bv.data[i] : av.data[i] >= bv.data[i];
        y.data[i] = from_a[i] ? av.data[i] : bv.data[i];
    }
    return tape->record(std::move(y), {a, b},
                        [from_a = std::move(from_a)](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                                Tensor* dst = from_a[i] ? pg[0] : pg[1];
                                if (dst) dst->data[i] += g.data[i];
                            }
                        });
}
}  // namespace

Var minimum(const Var& a, const Var& b) { return select_elementwise(a, b, true); }
Var maximum(const Var& a, const Var& b) { return select_elementwise(a, b, false); }

Var add_rowvec(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t r = av.rows(), c = av.cols();
    if (bv.size() != c) {
        throw std::invalid_argument("add_rowvec: vector of " + std::to_string(bv.size()) + " elements for " +
                                    std::to_string(c) + " columns");
    }
    Tensor y = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y.data[i * c + j] += bv.data[j];
    return tape->record(std::move(y), {a, b}, [r, c](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i];
        if (pg[1])
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pg[1]->data[j] += g.data[i * c + j];
    });
}

Var mul_rowvec(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t r = av.rows(), c = av.cols();
    if (bv.size() != c) {
        throw std::invalid_argument("mul_rowvec: vector of " + std::to_string(bv.size()) + " elements for " +
                                    std::to_string(c) + " columns");
    }
    Tensor y = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y.data[i * c + j] *= bv.data[j];
    const std::size_t ia = a.id(), ib = b.id();
    return tape->record(std::move(y), {a, b},
                        [ia, ib, r, c](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                            const Tensor& avv = t.value(ia);
                            const Tensor& bvv = t.value(ib);
                            for (std::size_t i = 0; i < r; ++i) {
                                for (std::size_t j = 0; j < c; ++j) {
                                    const std::size_t k = i * c + j;
                                    if (pg[0]) pg[0]->data[k] += g.data[k] * bvv.data[j];
                                    if (pg[1]) pg[1]->data[j] += g.data[k] * avv.data[k];
                                }
                            }
                        });
}

Var scale(const Var& a, double factor) {
    Tape* tape = tape_of(a);
    Tensor y = a.value();
    for (double& v : y.data) v *= factor;
    return tape->record(std::move(y), {a}, [factor](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += factor * g.data[i];
    });
}

Var add_scalar(const Var& a, double offset) {
    Tape* tape = tape_of(a);
    Tensor y = a.value();
    for (double& v : y.data) v += offset;
    return tape->record(std::move(y), {a}, [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    if (av.cols() != bv.rows()) {
        throw std::invalid_argument("matmul: inner extents differ " + shape_string(av.shape) + " x " +
                                    shape_string(bv.shape));
    }
    Tensor y = Tensor::matrix(av.rows(), bv.cols());
    as_mat(y).noalias() = as_mat(av) * as_mat(bv);
    const std::size_t ia = a.id(), ib = b.id();
    return tape->record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) as_mat(*pg[0]).noalias() += as_mat(g) * as_mat(t.value(ib)).transpose();
        if (pg[1]) as_mat(*pg[1]).noalias() += as_mat(t.value(ia)).transpose() * as_mat(g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    Tape* tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    if (av.cols() != bv.cols()) {
        throw std::invalid_argument("matmul_nt: inner extents differ " + shape_string(av.shape) + " x " +
                                    shape_string(bv.shape) + "^T");
    }
    Tensor y = Tensor::matrix(av.rows(), bv.rows());
    as_mat(y).noalias() = as_mat(av) * as_mat(bv).transpose();
    const std::size_t ia = a.id(), ib = b.id();
    return tape->record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) as_mat(*pg[0]).noalias() += as_mat(g) * as_mat(t.value(ib));
        if (pg[1]) as_mat(*pg[1]).noalias() += as_mat(g).transpose() * as_mat(t.value(ia));
    });
}

Var transpose(const Var& a) {
    Tape* tape = tape_of(a);
    const Tensor& av = a.value();
    require_matrix(av, "transpose");
    Tensor y = Tensor::matrix(av.cols(), av.rows());
    as_mat(y) = as_mat(av).transpose();
    return tape->record(std::move(y), {a}, [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        as_mat(*pg[0]) += as_mat(g).transpose();
    });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
// log(1 + exp(-|x|)) + max(x, 0) == log(1 + exp(x))
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

Var sigmoid(const Var& a) {
    return unary(a, stable_sigmoid, [](double x) {
        const double s = stable_sigmoid(x);
        return s * (1.0 - s);
    });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double x) {
                     const double t = std::tanh(x);
                     return 1.0 - t * t;
                 });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(const Var& a) {
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var softmax_rows(const Var& a) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    Tensor y(x.shape);
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = &x.data[i * c];
        double* out = &y.data[i * c];
        const double mx = *std::max_element(in, in + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (out[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < c; ++j) out[j] /= s;
    }
    const std::size_t out_id = tape->size();
    return tape->record(std::move(y), {a}, [r, c, out_id](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& yv = t.value(out_id);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * yv.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t k = i * c + j;
                pg[0]->data[k] += yv.data[k] * (g.data[k] - dot);
            }
        }
    });
}

Var layer_norm_rows(const Var& a, double eps) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    Tensor y(x.shape);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = &x.data[i * c];
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += in[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) y.data[i * c + j] = (in[j] - mu) * inv_std[i];
    }
    const std::size_t out_id = tape->size();
    return tape->record(std::move(y), {a},
                        [r, c, out_id, inv_std = std::move(inv_std)](const Tape& t, const Tensor& g,
                                                                     std::span<Tensor* const> pg) {
                            const Tensor& yv = t.value(out_id);
                            const double n = static_cast<double>(c);
                            for (std::size_t i = 0; i < r; ++i) {
                                double g_mean = 0.0, gy_mean = 0.0;
                                for (std::size_t j = 0; j < c; ++j) {
                                    g_mean += g.data[i * c + j];
                                    gy_mean += g.data[i * c + j] * yv.data[i * c + j];
                                }
                                g_mean /= n;
                                gy_mean /= n;
                                for (std::size_t j = 0; j < c; ++j) {
                                    const std::size_t k = i * c + j;
                                    pg[0]->data[k] += inv_std[i] * (g.data[k] - g_mean - yv.data[k] * gy_mean);
                                }
                            }
                        });
}

Var sum(const Var& a) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    double s = 0.0;
    for (double v : x.data) s += v;
    return tape->record(Tensor::scalar(s), {a}, [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        const double gv = g.data[0];
        for (double& v : pg[0]->data) v += gv;
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Tape* tape = tape_of(parts[0]);
    const std::size_t c = parts[0].value().cols();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape() != tape) throw std::invalid_argument("concat_rows: operands live on different tapes");
        require_matrix(p.value(), "concat_rows");
        if (p.value().cols() != c) throw std::invalid_argument("concat_rows: column counts differ");
        total += p.value().rows();
    }
    Tensor y = Tensor::matrix(total, c);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().data.begin(), p.value().data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return tape->record(std::move(y), parents,
                        [offsets = std::move(offsets)](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                            for (std::size_t k = 0; k < pg.size(); ++k) {
                                if (!pg[k]) continue;
                                for (std::size_t i = 0; i < pg[k]->size(); ++i) pg[k]->data[i] += g.data[offsets[k] + i];
                            }
                        });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape* tape = tape_of(parts[0]);
    const std::size_t r = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        if (p.tape() != tape) throw std::invalid_argument("concat_cols: operands live on different tapes");
        require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != r) throw std::invalid_argument("concat_cols: row counts differ");
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor y = Tensor::matrix(r, total);
    std::size_t col0 = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) y.data[i * total + col0 + j] = pv.data[i * pv.cols() + j];
        col0 += pv.cols();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return tape->record(std::move(y), parents,
                        [r, total, widths = std::move(widths)](const Tape&, const Tensor& g,
                                                               std::span<Tensor* const> pg) {
                            std::size_t c0 = 0;
                            for (std::size_t k = 0; k < pg.size(); ++k) {
                                const std::size_t w = widths[k];
                                if (pg[k])
                                    for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < w; ++j) pg[k]->data[i * w + j] += g.data[i * total + c0 + j];
                                c0 += w;
                            }
                        });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    require_matrix(x, "slice_rows");
    if (begin + count > x.rows()) throw std::invalid_argument("slice_rows: range exceeds row count");
    const std::size_t c = x.cols();
    Tensor y = Tensor::matrix(count, c);
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(begin * c),
              x.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * c), y.data.begin());
    return tape->record(std::move(y), {a}, [begin, c](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[begin * c + i] += g.data[i];
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    require_matrix(x, "slice_cols");
    if (begin + count > x.cols()) throw std::invalid_argument("slice_cols: range exceeds column count");
    const std::size_t r = x.rows(), c = x.cols();
    Tensor y = Tensor::matrix(r, count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) y.data[i * count + j] = x.data[i * c + begin + j];
    return tape->record(std::move(y), {a},
                        [r, c, begin, count](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < count; ++j) pg[0]->data[i * c + begin + j] += g.data[i * count + j];
                        });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    require_matrix(x, "gather_rows");
    const std::size_t c = x.cols();
    Tensor y = Tensor::matrix(rows.size(), c);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= x.rows()) throw std::invalid_argument("gather_rows: row index out of range");
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[k] * c), c,
                    y.data.begin() + static_cast<std::ptrdiff_t>(k * c));
    }
    return tape->record(std::move(y), {a}, [c, idx = std::move(idx)](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) pg[0]->data[idx[k] * c + j] += g.data[k * c + j];
    });
}

Var dropout(const Var& a, double p, bool train, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
    if (!train || p == 0.0) return a;
    Tape* tape = tape_of(a);
    const Tensor& x = a.value();
    Rng rng(seed);
    std::vector<double> mask(x.size());
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask[i];
    return tape->record(std::move(y), {a}, [mask = std::move(mask)](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i] * mask[i];
    });
}

Var grad_reverse(const Var& a, double lambda) {
    Tape* tape = tape_of(a);
    return tape->record(a.value(), {a}, [lambda](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] -= lambda * g.data[i];
    });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
    Tape* tape = tape_of(logits);
    const Tensor& x = logits.value();
    require_same_shape(x, targets, "bce_with_logits");
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = softplus(x.data[i]) - x.data[i] * targets.data[i];
    const std::size_t ix = logits.id();
    return tape->record(std::move(y), {logits},
                        [ix, targets](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                            const Tensor& xv = t.value(ix);
                            for (std::size_t i = 0; i < g.size(); ++i)
                                pg[0]->data[i] += g.data[i] * (stable_sigmoid(xv.data[i]) - targets.data[i]);
                        });
}

Var sigmoid_focal(const Var& logits, const Tensor& targets, double alpha, double gamma) {
    Tape* tape = tape_of(logits);
    const Tensor& x = logits.value();
    require_same_shape(x, targets, "sigmoid_focal");
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = stable_sigmoid(x.data[i]);
        const double t = targets.data[i];
        const double ce = softplus(x.data[i]) - x.data[i] * t;
        const double one_minus_pt = 1.0 - (p * t + (1.0 - p) * (1.0 - t));
        const double alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t);
        y.data[i] = alpha_t * ce * std::pow(one_minus_pt, gamma);
    }
    const std::size_t ix = logits.id();
    return tape->record(std::move(y), {logits},
                        [ix, targets, alpha, gamma](const Tape& tp, const Tensor& g, std::span<Tensor* const> pg) {
                            const Tensor& xv = tp.value(ix);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                                const double xi = xv.data[i];
                                const double p = stable_sigmoid(xi);
                                const double t = targets.data[i];
                                const double ce = softplus(xi) - xi * t;
                                const double q = 1.0 - (p * t + (1.0 - p) * (1.0 - t));
                                const double alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t);
                                // dq/dx = -(2t - 1) p (1 - p)
                                const double dq = -(2.0 * t - 1.0) * p * (1.0 - p);
                                const double mod = std::pow(q, gamma);
                                const double dmod = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * dq;
                                pg[0]->data[i] += g.data[i] * alpha_t * ((p - t) * mod + ce * dmod);
                            }
                        });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_rowvec(matmul(x, w), b); }

}  // namespace titan::ad
