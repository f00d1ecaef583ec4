// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "lor2c/tensor.hpp"

namespace lor2c {

struct AdamWConfig {
    double lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam with bias correction. Moment state is keyed by
// tensor storage, so parameters created mid-run (after restructuring) start
// with fresh moments while surviving ones keep theirs.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }

    // Applies one update from the tensors' current grad buffers. Missing grad
    // buffers count as zero. Throws NumericError on non-finite gradients.
    void step(std::span<Tensor> params);

    static void zero_grad(std::span<Tensor> params);

    // Drops moment state for tensors no longer in the parameter set.
    void retain_only(std::span<const Tensor> params);

private:
    struct Moments {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    AdamWConfig cfg_;
    std::map<const void*, Moments> state_;
};

}  // namespace lor2c
