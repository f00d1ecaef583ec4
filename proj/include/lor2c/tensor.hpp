// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode automatic differentiation.
// A Tensor is a value-semantic handle onto a graph node; the operation graph
// is the DAG of nodes reachable from a result. backward() seeds a scalar loss
// with gradient 1 and visits the graph once in reverse topological order.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lor2c/errors.hpp"
#include "lor2c/rng.hpp"

namespace lor2c {

using Shape = std::vector<int>;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    // Accumulates this node's grad into its inputs' grads.
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    // Gradient buffer; empty span until backward() has touched this node.
    std::span<double> grad() { return node_->grad; }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->ensure_grad(); std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    bool is_leaf() const { return node_->inputs.empty(); }

    // Stable identity of the underlying storage, for aliasing checks.
    const void* id() const { return node_.get(); }

    // Deep copy of values; drops graph history.
    Tensor clone() const;

    detail::TensorNode* node() const { return node_.get(); }

    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::TensorNode> node_;

    friend std::shared_ptr<detail::TensorNode> node_of(const Tensor& t);
};

inline std::shared_ptr<detail::TensorNode> node_of(const Tensor& t) { return t.node_; }

// ---- primitive operations ------------------------------------------------

// [m,k] x [k,n] -> [m,n]; with transpose_b, b is [n,k] read as its transpose.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n] (transpose_b: b is [B,n,k]).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);                          // -> scalar []
Tensor softmax_lastdim(const Tensor& x);
Tensor layernorm_lastdim(const Tensor& x, double eps = 1e-5);  // no affine
// y[r,:] = x[r,:] * gamma + beta, gamma/beta of last-dim length.
Tensor rowwise_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);
// y[r,:] = x[r,:] + bias, bias of last-dim length.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);                         // tanh approximation

// Gather rows of table [V,d] by ids -> [ids.size(), d].
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids);

// Mean negative log-likelihood over rows of logits [n,C]; labels equal to
// ignore_index are skipped. Errors if no row contributes.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels,
                     std::int32_t ignore_index = -1);

// Same data, new shape (numel must match); gradient reshaped back.
Tensor reshape(const Tensor& x, const Shape& shape);

// [a,b,c,d] -> [a,c,b,d]; its own inverse.
Tensor permute0213(const Tensor& x);

// x is [groups*rows_per_group, d]; mask has one 0/1 entry per row. Returns
// [groups, d], each row the mean over that group's mask=1 rows.
Tensor masked_mean_rows(const Tensor& x, const std::vector<std::uint8_t>& mask, int groups);

// ---- backward pass and checking -------------------------------------------

// Reverse-mode sweep from a scalar loss. Visits each reachable node once and
// accumulates into every requires_grad node's grad buffer (no implicit zeroing).
void backward(const Tensor& loss);

// Max over all parameter entries of |analytic - central difference| /
// max(1, |central difference|). loss_fn must rebuild the graph on each call.
double gradcheck(const std::function<Tensor()>& loss_fn, std::span<const Tensor> params,
                 double eps = 1e-5);

}  // namespace lor2c
