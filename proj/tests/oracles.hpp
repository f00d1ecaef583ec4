// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, independent of the library's
// computation paths: scalar-loop linear algebra, a dense one-sided Jacobi SVD
// applied to explicitly formed products, a straight-line transformer forward,
// and a scalar AdamW. Everything here is plain loops over std::vector<double>.

#pragma once

#include <cstdint>
#include <vector>

#include "lor2c/model.hpp"

namespace lor2c::oracle {

// C[m,n] = A[m,k] * B[k,n], scalar triple loop.
std::vector<double> matmul_reference(const std::vector<double>& a, const std::vector<double>& b,
                                     int m, int k, int n);

// Dense product W = B[d,r] * A[r,d] formed explicitly (d x d).
std::vector<double> dense_product_ba(const std::vector<double>& b, const std::vector<double>& a,
                                     int d, int r);

// Singular values of a dense m x n matrix via one-sided Jacobi on the full
// matrix, descending, length min(m,n).
std::vector<double> dense_svd_singular_values(std::vector<double> mat, int m, int n);

// Straight-line scalar forward of the base transformer (no adapters, full
// mask): embeds tokens, applies every layer, mean-pools, applies the head.
// Returns logits row-major [b, n_classes].
std::vector<double> reference_model_logits(const BaseConfig& cfg,
                                           const BaseWeights& weights,
                                           const std::vector<std::int32_t>& tokens, int b, int s);

// Scalar AdamW reference (decoupled weight decay, bias correction).
struct ScalarAdamW {
    double lr, beta1, beta2, eps, weight_decay;
    std::vector<double> m, v;
    std::int64_t t = 0;

    void step(std::vector<double>& params, const std::vector<double>& grads);
};

}  // namespace lor2c::oracle
