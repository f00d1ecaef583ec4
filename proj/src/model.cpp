// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/model.hpp"

#include <algorithm>
#include <cmath>

#include "lor2c/errors.hpp"

namespace lor2c {

void BaseConfig::validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 ||
        max_seq_len < 1 || n_classes < 1)
        throw ConfigError("base config: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("base config: n_heads " + std::to_string(n_heads) +
                          " does not divide d_model " + std::to_string(d_model));
}

std::int64_t BaseConfig::total_params() const {
    const std::int64_t d = d_model, ff = d_ff;
    const std::int64_t per_layer = 4 * d * d          // W_Q, W_K, W_V, W_O
                                   + d * ff + ff      // W1, b1
                                   + ff * d + d       // W2, b2
                                   + 4 * d;           // two layernorm affine pairs
    return static_cast<std::int64_t>(vocab_size) * d + n_layers * per_layer +
           d * static_cast<std::int64_t>(n_classes);
}

std::vector<std::pair<std::string, Tensor>> BaseWeights::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", embedding);
    for (std::size_t t = 0; t < layers.size(); ++t) {
        const std::string p = "layer" + std::to_string(t) + ".";
        const LayerWeights& l = layers[t];
        out.emplace_back(p + "wq", l.wq);
        out.emplace_back(p + "wk", l.wk);
        out.emplace_back(p + "wv", l.wv);
        out.emplace_back(p + "wo", l.wo);
        out.emplace_back(p + "w1", l.w1);
        out.emplace_back(p + "b1", l.b1);
        out.emplace_back(p + "w2", l.w2);
        out.emplace_back(p + "b2", l.b2);
        out.emplace_back(p + "ln1_gamma", l.ln1_gamma);
        out.emplace_back(p + "ln1_beta", l.ln1_beta);
        out.emplace_back(p + "ln2_gamma", l.ln2_gamma);
        out.emplace_back(p + "ln2_beta", l.ln2_beta);
    }
    out.emplace_back("head", head);
    return out;
}

std::vector<Tensor> BaseWeights::all_tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
}

void BaseWeights::freeze() {
    frozen = true;
    for (Tensor& t : all_tensors()) t.set_requires_grad(false);
}

BaseWeights base_init(const BaseConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x62617365));  // "base"
    const int d = cfg.d_model, ff = cfg.d_ff;

    BaseWeights w;
    w.config = cfg;
    w.embedding = Tensor::randn({cfg.vocab_size, d}, rng, 0.02, true);
    w.layers.reserve(static_cast<std::size_t>(cfg.n_layers));
    for (int t = 0; t < cfg.n_layers; ++t) {
        LayerWeights l;
        l.wq = Tensor::randn({d, d}, rng, 0.02, true);
        l.wk = Tensor::randn({d, d}, rng, 0.02, true);
        l.wv = Tensor::randn({d, d}, rng, 0.02, true);
        l.wo = Tensor::randn({d, d}, rng, 0.02, true);
        l.w1 = Tensor::randn({d, ff}, rng, 0.02, true);
        l.b1 = Tensor::zeros({ff}, true);
        l.w2 = Tensor::randn({ff, d}, rng, 0.02, true);
        l.b2 = Tensor::zeros({d}, true);
        l.ln1_gamma = Tensor::full({d}, 1.0, true);
        l.ln1_beta = Tensor::zeros({d}, true);
        l.ln2_gamma = Tensor::full({d}, 1.0, true);
        l.ln2_beta = Tensor::zeros({d}, true);
        w.layers.push_back(std::move(l));
    }
    w.head = Tensor::randn({d, cfg.n_classes}, rng, 0.02, true);
    return w;
}

void TokenBatch::validate(const BaseConfig& cfg) const {
    if (b < 1 || s < 1) throw ContractError("token batch must be non-empty");
    if (static_cast<std::size_t>(b) * s != tokens.size())
        throw DimensionError("token batch: " + std::to_string(tokens.size()) +
                             " tokens for shape [" + std::to_string(b) + "," + std::to_string(s) + "]");
    if (!mask.empty() && mask.size() != tokens.size())
        throw DimensionError("token batch: mask length != token count");
    if (s > cfg.max_seq_len)
        throw RangeError("sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    for (std::int32_t tok : tokens)
        if (tok < 0 || tok >= cfg.vocab_size)
            throw RangeError("token id " + std::to_string(tok) + " outside vocabulary of " +
                             std::to_string(cfg.vocab_size));
}

std::vector<std::uint8_t> TokenBatch::effective_mask() const {
    if (!mask.empty()) return mask;
    return std::vector<std::uint8_t>(tokens.size(), 1);
}

namespace {

// Additive pre-softmax bias hiding padded key columns: 0 where the key is
// valid, -1e30 where padded. Constant (no gradient).
Tensor attention_mask_bias(const std::vector<std::uint8_t>& pad_mask, int b, int heads, int s) {
    std::vector<double> bias(static_cast<std::size_t>(b) * heads * s * s, 0.0);
    for (int bi = 0; bi < b; ++bi)
        for (int key = 0; key < s; ++key) {
            if (pad_mask[static_cast<std::size_t>(bi) * s + key]) continue;
            for (int h = 0; h < heads; ++h) {
                double* block =
                    bias.data() + ((static_cast<std::size_t>(bi) * heads + h) * s) * s;
                for (int query = 0; query < s; ++query) block[query * s + key] = -1e30;
            }
        }
    return Tensor::from_data({b * heads, s, s}, std::move(bias));
}

Tensor split_heads(const Tensor& x2d, int b, int s, int heads, int head_dim) {
    return reshape(permute0213(reshape(x2d, {b, s, heads, head_dim})),
                   {b * heads, s, head_dim});
}

Tensor join_heads(const Tensor& x3d, int b, int s, int heads, int head_dim) {
    return reshape(permute0213(reshape(x3d, {b, heads, s, head_dim})),
                   {b * s, heads * head_dim});
}

}  // namespace

Tensor layer_forward(const Tensor& h, int t, const BaseWeights& w,
                     const std::vector<std::uint8_t>* pad_mask, const LoraQvParams* lora,
                     double lora_scaling) {
    const BaseConfig& cfg = w.config;
    if (t < 0 || t >= cfg.n_layers)
        throw RangeError("layer index " + std::to_string(t) + " outside 0.." +
                         std::to_string(cfg.n_layers - 1));
    if (h.ndim() != 3 || h.dim(2) != cfg.d_model)
        throw DimensionError("layer_forward expects [b,s,d], got " + shape_str(h.shape()));
    const int b = h.dim(0), s = h.dim(1), d = cfg.d_model;
    if (s > cfg.max_seq_len)
        throw RangeError("sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    const int heads = cfg.n_heads, hd = cfg.head_dim();
    const LayerWeights& lw = w.layers[static_cast<std::size_t>(t)];

    Tensor x = reshape(h, {b * s, d});

    Tensor q = matmul(x, lw.wq);
    Tensor k = matmul(x, lw.wk);
    Tensor v = matmul(x, lw.wv);
    if (lora) {
        q = add(q, lora_delta(x, lora->b_q, lora->a_q, lora_scaling));
        v = add(v, lora_delta(x, lora->b_v, lora->a_v, lora_scaling));
    }

    Tensor qh = split_heads(q, b, s, heads, hd);
    Tensor kh = split_heads(k, b, s, heads, hd);
    Tensor vh = split_heads(v, b, s, heads, hd);

    Tensor scores = scale(bmm(qh, kh, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(hd)));
    if (pad_mask) scores = add(scores, attention_mask_bias(*pad_mask, b, heads, s));
    Tensor attn = softmax_lastdim(scores);
    Tensor ctx = join_heads(bmm(attn, vh), b, s, heads, hd);
    Tensor attn_out = matmul(ctx, lw.wo);

    Tensor h1 = rowwise_affine(layernorm_lastdim(add(x, attn_out)), lw.ln1_gamma, lw.ln1_beta);

    Tensor f = gelu(add_bias(matmul(h1, lw.w1), lw.b1));
    Tensor ffn_out = add_bias(matmul(f, lw.w2), lw.b2);

    Tensor out = rowwise_affine(layernorm_lastdim(add(h1, ffn_out)), lw.ln2_gamma, lw.ln2_beta);
    return reshape(out, {b, s, d});
}

static Tensor model_forward_impl(const TokenBatch& batch, const ModelLayout& layout,
                                 const BaseWeights& w, const AdapterParams& adapters,
                                 std::map<int, Tensor>* span_inputs) {
    const BaseConfig& cfg = w.config;
    batch.validate(cfg);
    if (layout.n_layers() != cfg.n_layers)
        throw LayoutError("layout covers " + std::to_string(layout.n_layers()) +
                          " layers, model has " + std::to_string(cfg.n_layers));
    layout.validate();

    const std::vector<std::uint8_t> pad = batch.effective_mask();
    const bool all_valid = std::all_of(pad.begin(), pad.end(), [](std::uint8_t m) { return m; });
    const std::vector<std::uint8_t>* attn_mask = all_valid ? nullptr : &pad;
    Tensor x = reshape(embedding_lookup(w.embedding, batch.tokens), {batch.b, batch.s, cfg.d_model});

    int t = 0;
    while (t < cfg.n_layers) {
        const AdapterModule* m = layout.module_at_layer(t);
        if (m && (m->kind == AdapterKind::Lor2c || m->kind == AdapterKind::SharedLor2c) &&
            m->span_start == t) {
            const AdapterModule mod = *m;
            if (span_inputs) {
                auto flat = x.data();
                span_inputs->emplace(mod.id,
                                     Tensor::from_data({batch.b * batch.s, cfg.d_model},
                                                       std::vector<double>(flat.begin(), flat.end())));
            }
            x = lor2c_span_forward(x, mod, adapters, [&](const Tensor& h_in) {
                Tensor y = h_in;
                for (int layer = mod.span_start; layer < mod.span_end(); ++layer)
                    y = layer_forward(y, layer, w, attn_mask);
                return y;
            });
            t = m->span_end();
        } else if (m && m->kind == AdapterKind::LoraQv) {
            x = layer_forward(x, t, w, attn_mask, &adapters.lora(m->id), m->scaling);
            ++t;
        } else {
            x = layer_forward(x, t, w, attn_mask);
            ++t;
        }
    }

    Tensor pooled = masked_mean_rows(reshape(x, {batch.b * batch.s, cfg.d_model}), pad, batch.b);
    return matmul(pooled, w.head);
}

Tensor model_forward(const TokenBatch& batch, const ModelLayout& layout, const BaseWeights& w,
                     const AdapterParams& adapters) {
    return model_forward_impl(batch, layout, w, adapters, nullptr);
}

Tensor model_forward_capture(const TokenBatch& batch, const ModelLayout& layout,
                             const BaseWeights& w, const AdapterParams& adapters,
                             std::map<int, Tensor>& span_inputs) {
    return model_forward_impl(batch, layout, w, adapters, &span_inputs);
}

Tensor mlm_logits(const TokenBatch& batch, const BaseWeights& w) {
    const BaseConfig& cfg = w.config;
    batch.validate(cfg);
    const std::vector<std::uint8_t> pad = batch.effective_mask();
    const bool all_valid = std::all_of(pad.begin(), pad.end(), [](std::uint8_t m) { return m; });
    Tensor x = reshape(embedding_lookup(w.embedding, batch.tokens), {batch.b, batch.s, cfg.d_model});
    for (int t = 0; t < cfg.n_layers; ++t) x = layer_forward(x, t, w, all_valid ? nullptr : &pad);
    return matmul(reshape(x, {batch.b * batch.s, cfg.d_model}), w.embedding, /*transpose_b=*/true);
}

}  // namespace lor2c
