// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/optim.hpp"

#include <cmath>
#include <set>

#include "lor2c/errors.hpp"

namespace lor2c {

void AdamW::step(std::span<Tensor> params) {
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        Moments& mom = state_[p.id()];
        const std::size_t n = static_cast<std::size_t>(p.numel());
        if (mom.m.size() != n) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
            mom.t = 0;
        }
        ++mom.t;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(mom.t));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(mom.t));

        auto values = p.data();
        auto grads = p.grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grads.empty() ? 0.0 : grads[i];
            if (!std::isfinite(g))
                throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(pi) +
                                   " entry " + std::to_string(i));
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            values[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                    cfg_.weight_decay * values[i]);
        }
    }
}

void AdamW::zero_grad(std::span<Tensor> params) {
    for (Tensor& p : params) p.zero_grad();
}

void AdamW::retain_only(std::span<const Tensor> params) {
    std::set<const void*> keep;
    for (const Tensor& p : params) keep.insert(p.id());
    for (auto it = state_.begin(); it != state_.end();) {
        if (keep.count(it->first) == 0)
            it = state_.erase(it);
        else
            ++it;
    }
}

}  // namespace lor2c
