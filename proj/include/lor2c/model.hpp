// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// A small post-layernorm transformer encoder. Base weights are pretrained
// briefly on masked-token prediction, then frozen; all fine-tuning happens
// through the adapter structures in adapters.hpp.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lor2c/adapters.hpp"
#include "lor2c/tensor.hpp"

namespace lor2c {

struct BaseConfig {
    int d_model = 32;
    int n_layers = 6;
    int n_heads = 4;
    int d_ff = 64;
    int vocab_size = 16;
    int max_seq_len = 32;
    int n_classes = 2;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError
    int head_dim() const { return d_model / n_heads; }
    // reserved for masked-token pretraining; task generators avoid it
    int mask_token() const { return vocab_size - 1; }
    std::int64_t total_params() const;
};

struct LayerWeights {
    Tensor wq, wk, wv, wo;                              // [d,d], no biases
    Tensor w1, b1, w2, b2;                              // [d,dff],[dff],[dff,d],[d]
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;    // [d]
};

struct BaseWeights {
    BaseConfig config;
    Tensor embedding;                 // [vocab, d]; also the tied masked-LM head
    std::vector<LayerWeights> layers;
    Tensor head;                      // [d, n_classes]
    bool frozen = false;

    // Deterministic (name, tensor) enumeration, used by checkpoints, the
    // pretraining optimizer, and the frozen-base checks.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
    std::vector<Tensor> all_tensors() const;

    void freeze();  // frozen = true and requires_grad = false everywhere
};

// Weights drawn from a seeded Gaussian with stddev 0.02; biases and layernorm
// shifts zero, layernorm scales one.
BaseWeights base_init(const BaseConfig& cfg);

// One batch of token sequences, row-major [b, s]. mask marks valid (non-pad)
// positions; empty mask means all positions are valid.
struct TokenBatch {
    int b = 0;
    int s = 0;
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> mask;

    void validate(const BaseConfig& cfg) const;
    std::vector<std::uint8_t> effective_mask() const;
};

// Post-layernorm block: h1 = LN(h + MHSA(h)); out = LN(h1 + FFN(h1)).
// Attention is bidirectional; pad_mask (one entry per b*s row, 1 = valid) hides
// padded key positions. lora, when given, patches W_Q/W_V additively.
Tensor layer_forward(const Tensor& h, int t, const BaseWeights& w,
                     const std::vector<std::uint8_t>* pad_mask = nullptr,
                     const LoraQvParams* lora = nullptr, double lora_scaling = 1.0);

// Embeds tokens, applies layers 0..L-1 with adapter contributions per layout,
// mean-pools over non-pad positions, applies the classifier head.
Tensor model_forward(const TokenBatch& batch, const ModelLayout& layout,
                     const BaseWeights& w, const AdapterParams& adapters);

// Same forward; additionally records each lor2c module's span input as a plain
// [b*s, d] value tensor (for feature-mode SFS).
Tensor model_forward_capture(const TokenBatch& batch, const ModelLayout& layout,
                             const BaseWeights& w, const AdapterParams& adapters,
                             std::map<int, Tensor>& span_inputs);

// Token logits [b*s, vocab] through the tied embedding head (for pretraining).
Tensor mlm_logits(const TokenBatch& batch, const BaseWeights& w);

}  // namespace lor2c
