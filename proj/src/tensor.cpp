// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lor2c {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_node(Shape shape, std::vector<double> values) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    return n;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[p,q] += A[m,p]^T * B[m,q]
void gemm_tn(const double* a, const double* b, double* c, int m, int p, int q) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * p;
        const double* brow = b + static_cast<std::size_t>(i) * q;
        for (int r = 0; r < p; ++r) {
            const double av = arow[r];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(r) * q;
            for (int j = 0; j < q; ++j) crow[j] += av * brow[j];
        }
    }
}

// Wires up autograd linkage for a freshly computed node. When no input needs
// gradients the node stays a plain value and records no history.
Tensor finish_op(NodePtr out, std::initializer_list<const Tensor*> inputs,
                 std::function<void(TensorNode&)> backward_fn) {
    bool needs = false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) needs = true;
    if (needs) {
        out->requires_grad = true;
        out->inputs.reserve(inputs.size());
        for (const Tensor* t : inputs) out->inputs.push_back(node_of(*t));
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

void accumulate(TensorNode& dst, const std::vector<double>& src) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

static void validate_shape(const Shape& shape) {
    for (int d : shape)
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    validate_shape(shape);
    auto n = make_node(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto n = make_node(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), value));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    auto n = make_node(shape, std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    validate_shape(shape);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.normal(0.0, stddev);
    auto n = make_node(shape, std::move(v));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::clone() const {
    return Tensor::from_data(shape(), std::vector<double>(node_->data.begin(), node_->data.end()),
                             node_->requires_grad);
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1);
    const int kb = transpose_b ? b.dim(1) : b.dim(0);
    const int n = transpose_b ? b.dim(0) : b.dim(1);
    if (k != kb)
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                             (transpose_b ? " x transpose of " : " x ") + shape_str(b.shape()));

    auto out = make_node({m, n}, std::vector<double>(static_cast<std::size_t>(m) * n, 0.0));
    if (transpose_b)
        gemm_nt(a.data().data(), b.data().data(), out->data.data(), m, k, n);
    else
        gemm_nn(a.data().data(), b.data().data(), out->data.data(), m, k, n);

    return finish_op(std::move(out), {&a, &b}, [m, k, n, transpose_b](TensorNode& self) {
        TensorNode& an = *self.inputs[0];
        TensorNode& bn = *self.inputs[1];
        const double* g = self.grad.data();
        if (an.requires_grad) {
            an.ensure_grad();
            if (transpose_b)
                gemm_nn(g, bn.data.data(), an.grad.data(), m, n, k);  // g[m,n] * b[n,k]
            else
                gemm_nt(g, bn.data.data(), an.grad.data(), m, n, k);  // g[m,n] * b[k,n]^T
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            if (transpose_b)
                gemm_tn(g, an.data.data(), bn.grad.data(), m, n, k);  // g^T[n,m] * a[m,k]
            else
                gemm_tn(an.data.data(), g, bn.grad.data(), m, k, n);  // a^T[k,m] * g[m,n]
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.ndim() != 3 || b.ndim() != 3)
        throw DimensionError("bmm expects 3-d tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int batches = a.dim(0), m = a.dim(1), k = a.dim(2);
    const int kb = transpose_b ? b.dim(2) : b.dim(1);
    const int n = transpose_b ? b.dim(1) : b.dim(2);
    if (b.dim(0) != batches || k != kb)
        throw DimensionError("bmm shapes disagree: " + shape_str(a.shape()) +
                             (transpose_b ? " x transpose of " : " x ") + shape_str(b.shape()));

    const std::size_t astride = static_cast<std::size_t>(m) * k;
    const std::size_t bstride = static_cast<std::size_t>(k) * n;
    const std::size_t ostride = static_cast<std::size_t>(m) * n;
    auto out = make_node({batches, m, n}, std::vector<double>(static_cast<std::size_t>(batches) * ostride, 0.0));
    for (int bi = 0; bi < batches; ++bi) {
        const double* ap = a.data().data() + bi * astride;
        const double* bp = b.data().data() + bi * bstride;
        double* op = out->data.data() + bi * ostride;
        if (transpose_b)
            gemm_nt(ap, bp, op, m, k, n);
        else
            gemm_nn(ap, bp, op, m, k, n);
    }

    return finish_op(std::move(out), {&a, &b},
                     [batches, m, k, n, astride, bstride, ostride, transpose_b](TensorNode& self) {
        TensorNode& an = *self.inputs[0];
        TensorNode& bn = *self.inputs[1];
        if (an.requires_grad) an.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        for (int bi = 0; bi < batches; ++bi) {
            const double* g = self.grad.data() + bi * ostride;
            const double* ap = an.data.data() + bi * astride;
            const double* bp = bn.data.data() + bi * bstride;
            if (an.requires_grad) {
                double* ga = an.grad.data() + bi * astride;
                if (transpose_b)
                    gemm_nn(g, bp, ga, m, n, k);
                else
                    gemm_nt(g, bp, ga, m, n, k);
            }
            if (bn.requires_grad) {
                double* gb = bn.grad.data() + bi * bstride;
                if (transpose_b)
                    gemm_tn(g, ap, gb, m, n, k);
                else
                    gemm_tn(ap, g, gb, m, k, n);
            }
        }
    });
}

// ---- elementwise -----------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
    auto out = make_node(a.shape(), std::move(v));
    return finish_op(std::move(out), {&a, &b}, [](TensorNode& self) {
        for (int side = 0; side < 2; ++side) {
            TensorNode& in = *self.inputs[static_cast<std::size_t>(side)];
            if (in.requires_grad) accumulate(in, self.grad);
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.data()[i];
    auto out = make_node(a.shape(), std::move(v));
    return finish_op(std::move(out), {&a, &b}, [](TensorNode& self) {
        TensorNode& an = *self.inputs[0];
        TensorNode& bn = *self.inputs[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an.grad[i] += self.grad[i] * bn.data[i];
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bn.grad[i] += self.grad[i] * an.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.data().begin(), a.data().end());
    for (double& x : v) x *= c;
    auto out = make_node(a.shape(), std::move(v));
    return finish_op(std::move(out), {&a}, [c](TensorNode& self) {
        TensorNode& an = *self.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += c * self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    auto out = make_node({1}, {acc});
    out->shape = Shape{};  // scalar
    return finish_op(std::move(out), {&a}, [](TensorNode& self) {
        TensorNode& an = *self.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        const double g = self.grad[0];
        for (double& x : an.grad) x += g;
    });
}

// ---- row-structured ops ----------------------------------------------------

static std::pair<std::int64_t, int> rows_and_cols(const Tensor& x, const char* op) {
    if (x.ndim() < 1) throw DimensionError(std::string(op) + " needs at least 1 dimension");
    const int cols = x.dim(x.ndim() - 1);
    if (cols == 0) throw DimensionError(std::string(op) + ": zero-length last dimension");
    return {x.numel() / cols, cols};
}

Tensor softmax_lastdim(const Tensor& x) {
    auto [rows, cols] = rows_and_cols(x, "softmax_lastdim");
    std::vector<double> v(x.data().begin(), x.data().end());
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = v.data() + r * cols;
        double mx = row[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (int j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (int j = 0; j < cols; ++j) row[j] /= total;
    }
    auto out = make_node(x.shape(), std::move(v));
    return finish_op(std::move(out), {&x}, [rows = rows, cols = cols](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double* gx = xn.grad.data() + r * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
            for (int j = 0; j < cols; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layernorm_lastdim(const Tensor& x, double eps) {
    auto [rows, cols] = rows_and_cols(x, "layernorm_lastdim");
    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    std::vector<double> rstd(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += row[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        rstd[static_cast<std::size_t>(r)] = inv;
        double* orow = v.data() + r * cols;
        for (int j = 0; j < cols; ++j) orow[j] = (row[j] - mean) * inv;
    }
    auto out = make_node(x.shape(), std::move(v));
    return finish_op(std::move(out), {&x},
                     [rows = rows, cols = cols, rstd = std::move(rstd)](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;  // normalized values
            const double* g = self.grad.data() + r * cols;
            double* gx = xn.grad.data() + r * cols;
            double gmean = 0.0, gymean = 0.0;
            for (int j = 0; j < cols; ++j) {
                gmean += g[j];
                gymean += g[j] * y[j];
            }
            gmean /= cols;
            gymean /= cols;
            const double inv = rstd[static_cast<std::size_t>(r)];
            for (int j = 0; j < cols; ++j) gx[j] += inv * (g[j] - gmean - y[j] * gymean);
        }
    });
}

Tensor rowwise_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    auto [rows, cols] = rows_and_cols(x, "rowwise_affine");
    if (gamma.ndim() != 1 || gamma.dim(0) != cols || beta.ndim() != 1 || beta.dim(0) != cols)
        throw DimensionError("rowwise_affine: gamma/beta must be [" + std::to_string(cols) +
                             "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    const double* gp = gamma.data().data();
    const double* bp = beta.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * cols;
        double* orow = v.data() + r * cols;
        for (int j = 0; j < cols; ++j) orow[j] = row[j] * gp[j] + bp[j];
    }
    auto out = make_node(x.shape(), std::move(v));
    return finish_op(std::move(out), {&x, &gamma, &beta}, [rows = rows, cols = cols](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        TensorNode& gn = *self.inputs[1];
        TensorNode& bn = *self.inputs[2];
        if (xn.requires_grad) {
            xn.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j)
                    xn.grad[r * cols + j] += self.grad[r * cols + j] * gn.data[static_cast<std::size_t>(j)];
        }
        if (gn.requires_grad) {
            gn.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j)
                    gn.grad[static_cast<std::size_t>(j)] +=
                        self.grad[r * cols + j] * xn.data[r * cols + j];
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j)
                    bn.grad[static_cast<std::size_t>(j)] += self.grad[r * cols + j];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    auto [rows, cols] = rows_and_cols(x, "add_bias");
    if (bias.ndim() != 1 || bias.dim(0) != cols)
        throw DimensionError("add_bias: bias must be [" + std::to_string(cols) + "], got " +
                             shape_str(bias.shape()));
    std::vector<double> v(x.data().begin(), x.data().end());
    const double* bp = bias.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = v.data() + r * cols;
        for (int j = 0; j < cols; ++j) row[j] += bp[j];
    }
    auto out = make_node(x.shape(), std::move(v));
    return finish_op(std::move(out), {&x, &bias}, [rows = rows, cols = cols](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        TensorNode& bn = *self.inputs[1];
        if (xn.requires_grad) accumulate(xn, self.grad);
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j)
                    bn.grad[static_cast<std::size_t>(j)] += self.grad[r * cols + j];
        }
    });
}

Tensor gelu(const Tensor& x) {
    static constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kC1 = 0.044715;
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& t : v) {
        const double u = kC0 * (t + kC1 * t * t * t);
        t = 0.5 * t * (1.0 + std::tanh(u));
    }
    auto out = make_node(x.shape(), std::move(v));
    return finish_op(std::move(out), {&x}, [](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double t = xn.data[i];
            const double u = kC0 * (t + kC1 * t * t * t);
            const double th = std::tanh(u);
            const double d = 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * kC0 * (1.0 + 3.0 * kC1 * t * t);
            xn.grad[i] += self.grad[i] * d;
        }
    });
}

// ---- lookup / loss ----------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids) {
    if (table.ndim() != 2)
        throw DimensionError("embedding_lookup expects a 2-d table, got " + shape_str(table.shape()));
    const int vocab = table.dim(0), width = table.dim(1);
    const int n = static_cast<int>(ids.size());
    std::vector<double> v(static_cast<std::size_t>(n) * width);
    for (int i = 0; i < n; ++i) {
        const std::int32_t id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= vocab)
            throw RangeError("embedding id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
        const double* src = table.data().data() + static_cast<std::size_t>(id) * width;
        std::copy(src, src + width, v.data() + static_cast<std::size_t>(i) * width);
    }
    auto out = make_node({n, width}, std::move(v));
    return finish_op(std::move(out), {&table}, [ids, width](TensorNode& self) {
        TensorNode& tn = *self.inputs[0];
        if (!tn.requires_grad) return;
        tn.ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* dst = tn.grad.data() + static_cast<std::size_t>(ids[i]) * width;
            const double* g = self.grad.data() + i * width;
            for (int j = 0; j < width; ++j) dst[j] += g[j];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels,
                     std::int32_t ignore_index) {
    if (logits.ndim() != 2)
        throw DimensionError("cross_entropy expects logits [n,classes], got " +
                             shape_str(logits.shape()));
    const int n = logits.dim(0), classes = logits.dim(1);
    if (classes == 0) throw DimensionError("cross_entropy: zero-length class dimension");
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");

    std::vector<double> lse(static_cast<std::size_t>(n));
    double total = 0.0;
    std::int64_t counted = 0;
    for (int r = 0; r < n; ++r) {
        const std::int32_t label = labels[static_cast<std::size_t>(r)];
        if (label == ignore_index) continue;
        if (label < 0 || label >= classes)
            throw RangeError("label " + std::to_string(label) + " outside [0," +
                             std::to_string(classes) + ") at row " + std::to_string(r));
        const double* row = logits.data().data() + static_cast<std::size_t>(r) * classes;
        double mx = row[0];
        for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
        const double l = mx + std::log(s);
        lse[static_cast<std::size_t>(r)] = l;
        total += l - row[label];
        ++counted;
    }
    if (counted == 0) throw ContractError("cross_entropy: every label is ignore_index");

    auto out = make_node({1}, {total / static_cast<double>(counted)});
    out->shape = Shape{};
    return finish_op(std::move(out), {&logits},
                     [labels, ignore_index, n, classes, lse = std::move(lse),
                      counted](TensorNode& self) {
        TensorNode& ln = *self.inputs[0];
        if (!ln.requires_grad) return;
        ln.ensure_grad();
        const double gscale = self.grad[0] / static_cast<double>(counted);
        for (int r = 0; r < n; ++r) {
            const std::int32_t label = labels[static_cast<std::size_t>(r)];
            if (label == ignore_index) continue;
            const double* row = ln.data.data() + static_cast<std::size_t>(r) * classes;
            double* grow = ln.grad.data() + static_cast<std::size_t>(r) * classes;
            const double l = lse[static_cast<std::size_t>(r)];
            for (int j = 0; j < classes; ++j) {
                const double p = std::exp(row[j] - l);
                grow[j] += gscale * (p - (j == label ? 1.0 : 0.0));
            }
        }
    });
}

// ---- structural ops ---------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
    validate_shape(shape);
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    auto out = make_node(shape, std::vector<double>(x.data().begin(), x.data().end()));
    return finish_op(std::move(out), {&x}, [](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        accumulate(xn, self.grad);
    });
}

static void permute0213_kernel(const double* src, double* dst, int a, int b, int c, int d) {
    for (int i = 0; i < a; ++i)
        for (int j = 0; j < b; ++j)
            for (int k = 0; k < c; ++k) {
                const double* s = src + (((static_cast<std::size_t>(i) * b + j) * c) + k) * d;
                double* t = dst + (((static_cast<std::size_t>(i) * c + k) * b) + j) * d;
                std::copy(s, s + d, t);
            }
}

Tensor permute0213(const Tensor& x) {
    if (x.ndim() != 4)
        throw DimensionError("permute0213 expects a 4-d tensor, got " + shape_str(x.shape()));
    const int a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    permute0213_kernel(x.data().data(), v.data(), a, b, c, d);
    auto out = make_node({a, c, b, d}, std::move(v));
    return finish_op(std::move(out), {&x}, [a, b, c, d](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        // inverse permutation is the same map with the middle dims swapped
        std::vector<double> tmp(self.grad.size());
        permute0213_kernel(self.grad.data(), tmp.data(), a, c, b, d);
        for (std::size_t i = 0; i < tmp.size(); ++i) xn.grad[i] += tmp[i];
    });
}

Tensor masked_mean_rows(const Tensor& x, const std::vector<std::uint8_t>& mask, int groups) {
    if (x.ndim() != 2)
        throw DimensionError("masked_mean_rows expects [rows,d], got " + shape_str(x.shape()));
    const int rows = x.dim(0), d = x.dim(1);
    if (groups <= 0 || rows % groups != 0)
        throw DimensionError("masked_mean_rows: " + std::to_string(rows) +
                             " rows not divisible into " + std::to_string(groups) + " groups");
    if (static_cast<int>(mask.size()) != rows)
        throw DimensionError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                             " != rows " + std::to_string(rows));
    const int per = rows / groups;
    std::vector<double> counts(static_cast<std::size_t>(groups), 0.0);
    std::vector<double> v(static_cast<std::size_t>(groups) * d, 0.0);
    for (int g = 0; g < groups; ++g) {
        double* orow = v.data() + static_cast<std::size_t>(g) * d;
        for (int r = 0; r < per; ++r) {
            const int row = g * per + r;
            if (!mask[static_cast<std::size_t>(row)]) continue;
            counts[static_cast<std::size_t>(g)] += 1.0;
            const double* src = x.data().data() + static_cast<std::size_t>(row) * d;
            for (int j = 0; j < d; ++j) orow[j] += src[j];
        }
        if (counts[static_cast<std::size_t>(g)] == 0.0)
            throw RangeError("masked_mean_rows: group " + std::to_string(g) + " has no valid rows");
        for (int j = 0; j < d; ++j) orow[j] /= counts[static_cast<std::size_t>(g)];
    }
    auto out = make_node({groups, d}, std::move(v));
    return finish_op(std::move(out), {&x},
                     [mask, groups, per, d, counts = std::move(counts)](TensorNode& self) {
        TensorNode& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (int g = 0; g < groups; ++g) {
            const double inv = 1.0 / counts[static_cast<std::size_t>(g)];
            const double* grow = self.grad.data() + static_cast<std::size_t>(g) * d;
            for (int r = 0; r < per; ++r) {
                const int row = g * per + r;
                if (!mask[static_cast<std::size_t>(row)]) continue;
                double* dst = xn.grad.data() + static_cast<std::size_t>(row) * d;
                for (int j = 0; j < d; ++j) dst[j] += inv * grow[j];
            }
        }
    });
}

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a scalar loss");
    detail::TensorNode* root = loss.node();
    if (!root->requires_grad) return;

    // iterative post-order DFS over inputs
    std::vector<detail::TensorNode*> topo;
    std::unordered_set<detail::TensorNode*> visited;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::TensorNode* child = node->inputs[next].get();
            ++next;
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

double gradcheck(const std::function<Tensor()>& loss_fn, std::span<const Tensor> params,
                 double eps) {
    if (eps <= 0.0) throw ContractError("gradcheck: eps must be positive");

    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("gradcheck: non-finite loss");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(p.numel()), 0.0);
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = const_cast<Tensor&>(params[pi]);
        auto values = p.data();
        for (std::size_t e = 0; e < values.size(); ++e) {
            const double a = analytic[pi][e];
            if (!std::isfinite(a))
                throw NumericError("gradcheck: non-finite analytic gradient at parameter " +
                                   std::to_string(pi) + " entry " + std::to_string(e));
            const double orig = values[e];
            values[e] = orig + eps;
            const double up = loss_fn().item();
            values[e] = orig - eps;
            const double down = loss_fn().item();
            values[e] = orig;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("gradcheck: non-finite perturbed loss at parameter " +
                                   std::to_string(pi) + " entry " + std::to_string(e));
            const double numeric = (up - down) / (2.0 * eps);
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace lor2c
