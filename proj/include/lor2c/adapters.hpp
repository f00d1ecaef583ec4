// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable fine-tuning structures around a frozen base model:
//   - LoraQv: additive low-rank updates on a layer's query/value projections,
//     x*W + s*(x*B)*A.
//   - Lor2c: a low-rank residual bypass around a contiguous span of layers,
//     h_out = base_span(h_in) + s*(h_in*B)*A.
//   - SharedLor2c: Lor2c with one A matrix shared by every module; each layer
//     keeps an independent B.
// The d x d product B*A is never materialized anywhere.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "lor2c/tensor.hpp"

namespace lor2c {

enum class AdapterKind { None, LoraQv, Lor2c, SharedLor2c };

const char* adapter_kind_name(AdapterKind kind);
AdapterKind adapter_kind_from_name(const std::string& name);

struct AdapterModule {
    int id = -1;
    AdapterKind kind = AdapterKind::None;
    int rank = 0;
    int span_start = 0;
    int span_len = 1;  // always 1 for LoraQv and SharedLor2c
    double scaling = 1.0;

    int span_end() const { return span_start + span_len; }  // exclusive
    bool covers(int layer) const { return layer >= span_start && layer < span_end(); }

    bool operator==(const AdapterModule&) const = default;
};

// Which adapter (if any) is attached where. Modules are kept ordered by
// span_start; every layer belongs to at most one module.
class ModelLayout {
public:
    ModelLayout() = default;
    explicit ModelLayout(int n_layers) : n_layers_(n_layers) {}

    static ModelLayout empty(int n_layers);
    static ModelLayout lor2c_all_layers(int n_layers, int rank, double scaling = 1.0);
    static ModelLayout shared_all_layers(int n_layers, int rank, double scaling = 1.0);
    static ModelLayout lora_all_layers(int n_layers, int rank, double scaling = 1.0);

    int n_layers() const { return n_layers_; }
    const std::vector<AdapterModule>& modules() const { return modules_; }
    const AdapterModule* module_at_layer(int layer) const;
    const AdapterModule* module_by_id(int id) const;
    bool has_kind(AdapterKind kind) const;

    // Throws LayoutError on overlapping spans, out-of-bounds spans, bad ranks,
    // or multi-layer spans on kinds that do not support them.
    void validate() const;

    void add_module(AdapterModule m);  // keeps ordering, then validates
    int next_id() const { return next_id_; }

    // Replaces two span-adjacent modules by a single module covering both
    // spans. Returns the new module's id. Caller moves parameters.
    int merge_modules(int left_id, int right_id, std::optional<double> scaling = std::nullopt);

    // Replaces a single-layer module by a LoraQv module at the same layer.
    int replace_with_lora(int id, int new_rank, double scaling);

    void remove_module(int id);

    bool operator==(const ModelLayout&) const = default;

private:
    int n_layers_ = 0;
    int next_id_ = 0;
    std::vector<AdapterModule> modules_;
};

struct Lor2cParams {
    Tensor a;  // [r, d]
    Tensor b;  // [d, r]
};

struct LoraQvParams {
    Tensor a_q, b_q;  // [r, d], [d, r]
    Tensor a_v, b_v;
};

// Trainable factor storage, keyed by module id. SharedLor2c modules alias one
// single A tensor: the handles in every shared module's entry point at the
// same storage.
class AdapterParams {
public:
    AdapterParams() = default;

    // A ~ N(0, 0.02), B = 0, so every initial update matrix B*A is zero and
    // the adapted model reproduces the base model exactly.
    static AdapterParams init(const ModelLayout& layout, int d_model, std::uint64_t seed);

    const Lor2cParams& lor2c(int module_id) const;
    const LoraQvParams& lora(int module_id) const;
    Lor2cParams& lor2c(int module_id);
    LoraQvParams& lora(int module_id);
    bool has_module(int module_id) const;

    void set_lor2c(int module_id, Lor2cParams p);
    void set_lora(int module_id, LoraQvParams p);
    void remove_module(int module_id);

    const Tensor& shared_a() const { return shared_a_; }

    // All trainable tensors in deterministic order (module id, A before B),
    // with aliased shared storage listed once.
    std::vector<Tensor> trainable(const ModelLayout& layout) const;

private:
    std::map<int, Lor2cParams> lor2c_;
    std::map<int, LoraQvParams> lora_;
    Tensor shared_a_;
};

// s * (x * B) * A for a 2-d activation block x [n, d].
Tensor lora_delta(const Tensor& x, const Tensor& b, const Tensor& a, double scaling);

// Residual-bypass forward over one (possibly multi-layer) span. base_span maps
// the span input [b,s,d] through the underlying transformer layers; the module
// adds its low-rank path on top, tapping the raw span input.
Tensor lor2c_span_forward(const Tensor& h_in, const AdapterModule& module,
                          const AdapterParams& params,
                          const std::function<Tensor(const Tensor&)>& base_span);

struct ParamCounts {
    std::int64_t lor2c = 0;        // includes the shared-A storage for SharedLor2c
    std::int64_t shared_a = 0;     // portion of lor2c held by the single shared A
    std::int64_t lora_qv = 0;
    std::int64_t total = 0;
};

// Exact trainable parameter counts: Lor2c module 2*d*r; SharedLor2c modules
// d*r each plus one d*r shared A; LoraQv module 4*d*r.
ParamCounts param_count(const ModelLayout& layout, int d_model);

}  // namespace lor2c
