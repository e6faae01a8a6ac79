#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ema/rng.hpp"

namespace ema {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

using Dims = std::vector<std::size_t>;

inline std::string shape_str(const Dims& d) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
    os << "]";
    return os.str();
}

inline std::size_t numel(const Dims& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {
struct TensorNode {
    Dims shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty until first accumulation
    bool requires_grad = false; // leaf the optimizer may update
    bool needs_grad = false;    // participates in backward propagation
};
}  // namespace detail

// Dense row-major 64-bit float tensor, rank <= 3. Handle semantics: copies
// share the underlying node, which is what the tape records.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Dims shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Dims shape, double v, bool requires_grad = false) {
        check_rank(shape);
        auto node = std::make_shared<detail::TensorNode>();
        node->data.assign(numel(shape), v);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        node->needs_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from(Dims shape, std::vector<double> data, bool requires_grad = false) {
        check_rank(shape);
        if (numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        node->needs_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Dims& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    // Handle semantics: a const Tensor is a const handle to a shared mutable
    // node, so these stay const-qualified and return mutable references.
    std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad() const {
        ensure_grad();
        return node_->grad;
    }

    void ensure_grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    }

    void zero_grad() const {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double value() const {
        if (size() != 1) throw ContractError("value() requires a scalar tensor, got shape " + shape_str(shape()));
        return node_->data[0];
    }

    double& at(std::size_t i) const { return node_->data[i]; }
    double& at(std::size_t i, std::size_t j) const {
        return node_->data[i * node_->shape[1] + j];
    }

    // rows() / cols() assume rank 2
    std::size_t rows() const { return node_->shape[0]; }
    std::size_t cols() const { return node_->shape[1]; }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    Tensor detached_copy() const {
        return from(node_->shape, node_->data, node_->requires_grad);
    }

    bool all_finite() const {
        for (double v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

    static void check_rank(const Dims& shape) {
        if (shape.empty() || shape.size() > 3)
            throw ShapeError("tensor rank must be 1..3, got shape " + shape_str(shape));
    }

    friend class Tape;
    friend Tensor make_op_output(Dims shape, bool needs_grad);

    std::shared_ptr<detail::TensorNode> node_;
};

inline Tensor make_op_output(Dims shape, bool needs_grad) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.node_->needs_grad = needs_grad;
    return t;
}

// Reverse-mode tape. Ops append a backward closure; backward() runs them in
// reverse exactly once. A consumed tape rejects further backward calls.
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        records_.push_back(std::move(backward_fn));
    }

    void backward(Tensor loss) {
        if (used_) throw ContractError("backward() called twice on the same tape; call reset() first");
        if (loss.size() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        used_ = true;
        loss.grad()[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

    void reset() {
        records_.clear();
        used_ = false;
    }

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return used_; }

private:
    std::vector<std::function<void()>> records_;
    bool used_ = false;
};

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}
}  // namespace detail

// ---- matrix ops ----

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_op_output({m, n}, a.needs_grad() || b.needs_grad());
    {
        const double* ad = a.data().data();
        const double* bd = b.data().data();
        double* od = out.data().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = ad[i * k + p];
                if (aip == 0.0) continue;
                const double* brow = bd + p * n;
                double* orow = od + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
    }
    if (out.needs_grad()) {
        tape.record([a, b, out, m, k, n]() mutable {
            const double* go = out.grad().data();
            if (a.needs_grad()) {
                double* ga = a.grad().data();
                const double* bd = b.data().data();
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = go + i * n;
                        const double* brow = bd + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        ga[i * k + p] += s;
                    }
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                const double* ad = a.data().data();
                // dB = A^T * dC
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = ad[i * k + p];
                        if (aip == 0.0) continue;
                        const double* grow = go + i * n;
                        double* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
            }
        });
    }
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
    detail::require_rank2(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({n, m}, x.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (out.needs_grad()) {
        tape.record([x, out, m, n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

// ---- elementwise suite ----

namespace detail {
template <typename Fwd, typename Bwd>
Tensor unary_op(Tape& tape, const Tensor& x, const char* /*name*/, Fwd fwd, Bwd bwd) {
    Tensor out = make_op_output(x.shape(), x.needs_grad());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = fwd(x.data()[i]);
    if (out.needs_grad()) {
        tape.record([x, out, bwd]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < x.size(); ++i)
                gx[i] += go[i] * bwd(x.data()[i], out.data()[i]);
        });
    }
    return out;
}
}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = make_op_output(a.shape(), a.needs_grad() || b.needs_grad());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.needs_grad()) {
        tape.record([a, b, out]() mutable {
            const double* go = out.grad().data();
            if (a.needs_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = make_op_output(a.shape(), a.needs_grad() || b.needs_grad());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (out.needs_grad()) {
        tape.record([a, b, out]() mutable {
            const double* go = out.grad().data();
            if (a.needs_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = make_op_output(a.shape(), a.needs_grad() || b.needs_grad());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.needs_grad()) {
        tape.record([a, b, out]() mutable {
            const double* go = out.grad().data();
            if (a.needs_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i] * b.data()[i];
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i] * a.data()[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
    return detail::unary_op(tape, x, "scale",
                            [c](double v) { return c * v; },
                            [c](double, double) { return c; });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
    return detail::unary_op(tape, x, "relu",
                            [](double v) { return v > 0.0 ? v : 0.0; },
                            [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    return detail::unary_op(tape, x, "sigmoid",
                            [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                            [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_act(Tape& tape, const Tensor& x) {
    return detail::unary_op(tape, x, "tanh",
                            [](double v) { return std::tanh(v); },
                            [](double, double y) { return 1.0 - y * y; });
}

// bias add: x[m,n] + b[n], broadcast over rows
inline Tensor add_row(Tape& tape, const Tensor& x, const Tensor& b) {
    detail::require_rank2(x, "add_row");
    if (b.rank() != 1 || b.dim(0) != x.cols())
        throw ShapeError("add_row: bias shape " + shape_str(b.shape()) +
                         " incompatible with " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({m, n}, x.needs_grad() || b.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
    if (out.needs_grad()) {
        tape.record([x, b, out, m, n]() mutable {
            const double* go = out.grad().data();
            if (x.needs_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < m * n; ++i) gx[i] += go[i];
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
            }
        });
    }
    return out;
}

// row-broadcast multiply: x[m,n] * w[n]
inline Tensor mul_row(Tape& tape, const Tensor& x, const Tensor& w) {
    detail::require_rank2(x, "mul_row");
    if (w.rank() != 1 || w.dim(0) != x.cols())
        throw ShapeError("mul_row: weight shape " + shape_str(w.shape()) +
                         " incompatible with " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({m, n}, x.needs_grad() || w.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * w.at(j);
    if (out.needs_grad()) {
        tape.record([x, w, out, m, n]() mutable {
            const double* go = out.grad().data();
            if (x.needs_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i * n + j] * w.at(j);
            }
            if (w.needs_grad()) {
                double* gw = w.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gw[j] += go[i * n + j] * x.at(i, j);
            }
        });
    }
    return out;
}

// ---- structural ops ----

inline Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "concat_cols");
    detail::require_rank2(b, "concat_cols");
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row counts disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    Tensor out = make_op_output({m, p + q}, a.needs_grad() || b.needs_grad());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) out.at(i, j) = a.at(i, j);
        for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = b.at(i, j);
    }
    if (out.needs_grad()) {
        tape.record([a, b, out, m, p, q]() mutable {
            const double* go = out.grad().data();
            if (a.needs_grad()) {
                double* ga = a.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += go[i * (p + q) + j];
            }
            if (b.needs_grad()) {
                double* gb = b.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += go[i * (p + q) + p + j];
            }
        });
    }
    return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t len) {
    detail::require_rank2(x, "slice_cols");
    if (start + len > x.cols())
        throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({m, len}, x.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
    if (out.needs_grad()) {
        tape.record([x, out, m, n, start, len]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < len; ++j) gx[i * n + start + j] += go[i * len + j];
        });
    }
    return out;
}

inline Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<std::size_t>& idx) {
    detail::require_rank2(x, "gather_rows");
    for (std::size_t i : idx)
        if (i >= x.rows())
            throw ShapeError("gather_rows: row index " + std::to_string(i) +
                             " out of bounds for " + shape_str(x.shape()));
    const std::size_t n = x.cols();
    Tensor out = make_op_output({idx.size(), n}, x.needs_grad());
    for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < n; ++j) out.at(k, j) = x.at(idx[k], j);
    if (out.needs_grad()) {
        tape.record([x, out, idx, n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t k = 0; k < idx.size(); ++k)
                for (std::size_t j = 0; j < n; ++j) gx[idx[k] * n + j] += go[k * n + j];
        });
    }
    return out;
}

inline Tensor gather_cols(Tape& tape, const Tensor& x, const std::vector<std::size_t>& idx) {
    detail::require_rank2(x, "gather_cols");
    for (std::size_t j : idx)
        if (j >= x.cols())
            throw ShapeError("gather_cols: column index " + std::to_string(j) +
                             " out of bounds for " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({m, idx.size()}, x.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < idx.size(); ++k) out.at(i, k) = x.at(i, idx[k]);
    if (out.needs_grad()) {
        tape.record([x, out, idx, m, n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < idx.size(); ++k)
                    gx[i * n + idx[k]] += go[i * idx.size() + k];
        });
    }
    return out;
}

inline Tensor row(Tape& tape, const Tensor& x, std::size_t i) {
    return gather_rows(tape, x, {i});
}

// mean over rows -> [1, n]
inline Tensor mean_rows(Tape& tape, const Tensor& x) {
    detail::require_rank2(x, "mean_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({1, n}, x.needs_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(0, j) += x.at(i, j) / static_cast<double>(m);
    if (out.needs_grad()) {
        tape.record([x, out, m, n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j] / static_cast<double>(m);
        });
    }
    return out;
}

// ---- reductions / normalization ----

inline Tensor mean_reduce(Tape& tape, const Tensor& x) {
    const std::size_t n = x.size();
    Tensor out = make_op_output({1}, x.needs_grad());
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.data()[0] = s / static_cast<double>(n);
    if (out.needs_grad()) {
        tape.record([x, out, n]() mutable {
            double* gx = x.grad().data();
            const double g = out.grad()[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

inline Tensor softmax_rows(Tape& tape, const Tensor& x) {
    detail::require_rank2(x, "softmax_rows");
    if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = make_op_output({m, n}, x.needs_grad());
    for (std::size_t i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    if (out.needs_grad()) {
        tape.record([x, out, m, n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += go[i * n + j] * out.at(i, j);
                for (std::size_t j = 0; j < n; ++j)
                    gx[i * n + j] += out.at(i, j) * (go[i * n + j] - dot);
            }
        });
    }
    return out;
}

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    detail::require_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), d = x.cols();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " incompatible with " + shape_str(x.shape()));
    Tensor out = make_op_output({m, d}, x.needs_grad() || gamma.needs_grad() || beta.needs_grad());
    std::vector<double> inv_std(m), xhat(m * d);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.at(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (x.at(i, j) - mu) * inv_std[i];
            out.at(i, j) = gamma.at(j) * xhat[i * d + j] + beta.at(j);
        }
    }
    if (out.needs_grad()) {
        tape.record([x, gamma, beta, out, m, d, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)]() mutable {
            const double* go = out.grad().data();
            if (gamma.needs_grad()) {
                double* gg = gamma.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += go[i * d + j] * xhat[i * d + j];
            }
            if (beta.needs_grad()) {
                double* gb = beta.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += go[i * d + j];
            }
            if (x.needs_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxhat = go[i * d + j] * gamma.at(j);
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[i * d + j];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxhat = go[i * d + j] * gamma.at(j);
                        gx[i * d + j] += inv_std[i] *
                            (dxhat - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// ---- losses ----

// mean binary cross-entropy; p clamped to [1e-7, 1-1e-7] before the log
inline Tensor bce_loss(Tape& tape, const Tensor& p, const Tensor& y) {
    detail::require_same_shape(p, y, "bce_loss");
    constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
    const std::size_t n = p.size();
    Tensor out = make_op_output({1}, p.needs_grad());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(p.data()[i], kLo, kHi);
        const double yi = y.data()[i];
        s -= yi * std::log(pc) + (1.0 - yi) * std::log(1.0 - pc);
    }
    out.data()[0] = s / static_cast<double>(n);
    if (out.needs_grad()) {
        tape.record([p, y, out, n]() mutable {
            double* gp = p.grad().data();
            const double g = out.grad()[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double pi = p.data()[i];
                if (pi <= kLo || pi >= kHi) continue;  // clamp region is flat
                const double yi = y.data()[i];
                gp[i] += g * (-yi / pi + (1.0 - yi) / (1.0 - pi));
            }
        });
    }
    return out;
}

inline Tensor mse_loss(Tape& tape, const Tensor& p, const Tensor& y) {
    detail::require_same_shape(p, y, "mse_loss");
    const std::size_t n = p.size();
    Tensor out = make_op_output({1}, p.needs_grad());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = p.data()[i] - y.data()[i];
        s += d * d;
    }
    out.data()[0] = s / static_cast<double>(n);
    if (out.needs_grad()) {
        tape.record([p, y, out, n]() mutable {
            double* gp = p.grad().data();
            const double g = out.grad()[0];
            for (std::size_t i = 0; i < n; ++i)
                gp[i] += g * 2.0 * (p.data()[i] - y.data()[i]) / static_cast<double>(n);
        });
    }
    return out;
}

// ---- dropout ----

// Inverted-scaling Bernoulli dropout; identity when rate == 0.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
    const std::size_t n = x.size();
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    Tensor out = make_op_output(x.shape(), x.needs_grad());
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
    if (out.needs_grad()) {
        tape.record([x, out, mask = std::move(mask), n]() mutable {
            double* gx = x.grad().data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * mask[i];
        });
    }
    return out;
}

}  // namespace ema
