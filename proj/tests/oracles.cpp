// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace lor2c::oracle {

std::vector<double> matmul_reference(const std::vector<double>& a, const std::vector<double>& b,
                                     int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return c;
}

std::vector<double> dense_product_ba(const std::vector<double>& b, const std::vector<double>& a,
                                     int d, int r) {
    return matmul_reference(b, a, d, r, d);
}

std::vector<double> dense_svd_singular_values(std::vector<double> mat, int m, int n) {
    // operate on columns of the full matrix; no reduction step
    const int iters = 100;
    for (int sweep = 0; sweep < iters; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double cp = mat[static_cast<std::size_t>(i) * n + p];
                    const double cq = mat[static_cast<std::size_t>(i) * n + q];
                    app += cp * cp;
                    aqq += cq * cq;
                    apq += cp * cq;
                }
                if (apq == 0.0 || std::abs(apq) <= 1e-15 * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t =
                    (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double cp = mat[static_cast<std::size_t>(i) * n + p];
                    const double cq = mat[static_cast<std::size_t>(i) * n + q];
                    mat[static_cast<std::size_t>(i) * n + p] = c * cp - s * cq;
                    mat[static_cast<std::size_t>(i) * n + q] = s * cp + c * cq;
                }
            }
        if (!rotated) break;
    }
    std::vector<double> sv(static_cast<std::size_t>(std::min(m, n)));
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            const double v = mat[static_cast<std::size_t>(i) * n + j];
            acc += v * v;
        }
        norms[static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
    std::sort(norms.begin(), norms.end(), std::greater<>());
    for (std::size_t i = 0; i < sv.size(); ++i) sv[i] = norms[i];
    return sv;
}

namespace {

std::vector<double> layernorm_row(const std::vector<double>& x) {
    const double eps = 1e-5;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

double gelu_scalar(double x) {
    const double c0 = 0.7978845608028654;
    const double c1 = 0.044715;
    return 0.5 * x * (1.0 + std::tanh(c0 * (x + c1 * x * x * x)));
}

}  // namespace

std::vector<double> reference_model_logits(const BaseConfig& cfg, const BaseWeights& weights,
                                           const std::vector<std::int32_t>& tokens, int b, int s) {
    const int d = cfg.d_model, heads = cfg.n_heads, hd = cfg.d_model / cfg.n_heads, ff = cfg.d_ff;
    auto wdata = [&](const Tensor& t) {
        return std::vector<double>(t.data().begin(), t.data().end());
    };

    // h[b][s][d]
    std::vector<std::vector<std::vector<double>>> h(
        static_cast<std::size_t>(b),
        std::vector<std::vector<double>>(static_cast<std::size_t>(s),
                                         std::vector<double>(static_cast<std::size_t>(d))));
    const auto emb = wdata(weights.embedding);
    for (int bi = 0; bi < b; ++bi)
        for (int si = 0; si < s; ++si) {
            const std::int32_t tok = tokens[static_cast<std::size_t>(bi) * s + si];
            for (int j = 0; j < d; ++j)
                h[bi][si][j] = emb[static_cast<std::size_t>(tok) * d + j];
        }

    auto vecmat = [](const std::vector<double>& x, const std::vector<double>& w, int in, int out) {
        std::vector<double> y(static_cast<std::size_t>(out), 0.0);
        for (int i = 0; i < in; ++i)
            for (int j = 0; j < out; ++j) y[j] += x[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i) * out + j];
        return y;
    };

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const LayerWeights& lw = weights.layers[static_cast<std::size_t>(layer)];
        const auto wq = wdata(lw.wq), wk = wdata(lw.wk), wv = wdata(lw.wv), wo = wdata(lw.wo);
        const auto w1 = wdata(lw.w1), b1 = wdata(lw.b1), w2 = wdata(lw.w2), b2 = wdata(lw.b2);
        const auto g1 = wdata(lw.ln1_gamma), be1 = wdata(lw.ln1_beta);
        const auto g2 = wdata(lw.ln2_gamma), be2 = wdata(lw.ln2_beta);

        for (int bi = 0; bi < b; ++bi) {
            // projections for the whole sequence
            std::vector<std::vector<double>> q(static_cast<std::size_t>(s)), k(static_cast<std::size_t>(s)),
                v(static_cast<std::size_t>(s));
            for (int si = 0; si < s; ++si) {
                q[si] = vecmat(h[bi][si], wq, d, d);
                k[si] = vecmat(h[bi][si], wk, d, d);
                v[si] = vecmat(h[bi][si], wv, d, d);
            }
            std::vector<std::vector<double>> ctx(static_cast<std::size_t>(s),
                                                 std::vector<double>(static_cast<std::size_t>(d), 0.0));
            for (int head = 0; head < heads; ++head) {
                const int off = head * hd;
                for (int qi = 0; qi < s; ++qi) {
                    std::vector<double> scores(static_cast<std::size_t>(s), 0.0);
                    for (int ki = 0; ki < s; ++ki) {
                        double acc = 0.0;
                        for (int j = 0; j < hd; ++j) acc += q[qi][off + j] * k[ki][off + j];
                        scores[ki] = acc / std::sqrt(static_cast<double>(hd));
                    }
                    double mx = scores[0];
                    for (double x : scores) mx = std::max(mx, x);
                    double total = 0.0;
                    for (double& x : scores) {
                        x = std::exp(x - mx);
                        total += x;
                    }
                    for (double& x : scores) x /= total;
                    for (int ki = 0; ki < s; ++ki)
                        for (int j = 0; j < hd; ++j) ctx[qi][off + j] += scores[ki] * v[ki][off + j];
                }
            }
            for (int si = 0; si < s; ++si) {
                const std::vector<double> attn_out = vecmat(ctx[si], wo, d, d);
                std::vector<double> sum1(static_cast<std::size_t>(d));
                for (int j = 0; j < d; ++j) sum1[j] = h[bi][si][j] + attn_out[j];
                std::vector<double> h1 = layernorm_row(sum1);
                for (int j = 0; j < d; ++j) h1[j] = h1[j] * g1[j] + be1[j];

                std::vector<double> f1 = vecmat(h1, w1, d, ff);
                for (int j = 0; j < ff; ++j) f1[j] = gelu_scalar(f1[j] + b1[j]);
                std::vector<double> f2 = vecmat(f1, w2, ff, d);
                std::vector<double> sum2(static_cast<std::size_t>(d));
                for (int j = 0; j < d; ++j) sum2[j] = h1[j] + (f2[j] + b2[j]);
                std::vector<double> out = layernorm_row(sum2);
                for (int j = 0; j < d; ++j) h[bi][si][j] = out[j] * g2[j] + be2[j];
            }
        }
    }

    const auto head_w = wdata(weights.head);
    std::vector<double> logits(static_cast<std::size_t>(b) * cfg.n_classes, 0.0);
    for (int bi = 0; bi < b; ++bi) {
        std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
        for (int si = 0; si < s; ++si)
            for (int j = 0; j < d; ++j) pooled[j] += h[bi][si][j];
        for (int j = 0; j < d; ++j) pooled[j] /= static_cast<double>(s);
        const std::vector<double> row = vecmat(pooled, head_w, d, cfg.n_classes);
        for (int c = 0; c < cfg.n_classes; ++c)
            logits[static_cast<std::size_t>(bi) * cfg.n_classes + c] = row[c];
    }
    return logits;
}

void ScalarAdamW::step(std::vector<double>& params, const std::vector<double>& grads) {
    if (m.size() != params.size()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
        t = 0;
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]);
    }
}

}  // namespace lor2c::oracle
