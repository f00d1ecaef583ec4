// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/adapters.hpp"

#include <algorithm>

#include "lor2c/errors.hpp"

namespace lor2c {

const char* adapter_kind_name(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::None: return "none";
        case AdapterKind::LoraQv: return "lora_qv";
        case AdapterKind::Lor2c: return "lor2c";
        case AdapterKind::SharedLor2c: return "shared_lor2c";
    }
    return "?";
}

AdapterKind adapter_kind_from_name(const std::string& name) {
    if (name == "none") return AdapterKind::None;
    if (name == "lora_qv") return AdapterKind::LoraQv;
    if (name == "lor2c") return AdapterKind::Lor2c;
    if (name == "shared_lor2c") return AdapterKind::SharedLor2c;
    throw ConfigError("unknown adapter kind '" + name + "'");
}

// ---- ModelLayout -------------------------------------------------------------

ModelLayout ModelLayout::empty(int n_layers) { return ModelLayout(n_layers); }

ModelLayout ModelLayout::lor2c_all_layers(int n_layers, int rank, double scaling) {
    ModelLayout layout(n_layers);
    for (int t = 0; t < n_layers; ++t)
        layout.add_module({layout.next_id_, AdapterKind::Lor2c, rank, t, 1, scaling});
    return layout;
}

ModelLayout ModelLayout::shared_all_layers(int n_layers, int rank, double scaling) {
    ModelLayout layout(n_layers);
    for (int t = 0; t < n_layers; ++t)
        layout.add_module({layout.next_id_, AdapterKind::SharedLor2c, rank, t, 1, scaling});
    return layout;
}

ModelLayout ModelLayout::lora_all_layers(int n_layers, int rank, double scaling) {
    ModelLayout layout(n_layers);
    for (int t = 0; t < n_layers; ++t)
        layout.add_module({layout.next_id_, AdapterKind::LoraQv, rank, t, 1, scaling});
    return layout;
}

const AdapterModule* ModelLayout::module_at_layer(int layer) const {
    for (const AdapterModule& m : modules_)
        if (m.covers(layer)) return &m;
    return nullptr;
}

const AdapterModule* ModelLayout::module_by_id(int id) const {
    for (const AdapterModule& m : modules_)
        if (m.id == id) return &m;
    return nullptr;
}

bool ModelLayout::has_kind(AdapterKind kind) const {
    return std::any_of(modules_.begin(), modules_.end(),
                       [kind](const AdapterModule& m) { return m.kind == kind; });
}

void ModelLayout::validate() const {
    if (n_layers_ <= 0) throw LayoutError("layout has no layers");
    std::vector<int> owner(static_cast<std::size_t>(n_layers_), -1);
    for (const AdapterModule& m : modules_) {
        if (m.kind == AdapterKind::None) throw LayoutError("module with kind none in layout");
        if (m.rank < 1) throw LayoutError("module " + std::to_string(m.id) + " has rank < 1");
        if (m.span_len < 1 || m.span_start < 0 || m.span_end() > n_layers_)
            throw LayoutError("module " + std::to_string(m.id) + " span [" +
                              std::to_string(m.span_start) + "," + std::to_string(m.span_end()) +
                              ") outside 0.." + std::to_string(n_layers_));
        if (m.span_len != 1 && m.kind != AdapterKind::Lor2c)
            throw LayoutError("multi-layer span on non-lor2c module " + std::to_string(m.id));
        for (int t = m.span_start; t < m.span_end(); ++t) {
            if (owner[static_cast<std::size_t>(t)] != -1)
                throw LayoutError("layer " + std::to_string(t) + " covered by modules " +
                                  std::to_string(owner[static_cast<std::size_t>(t)]) + " and " +
                                  std::to_string(m.id));
            owner[static_cast<std::size_t>(t)] = m.id;
        }
    }
    for (std::size_t i = 1; i < modules_.size(); ++i)
        if (modules_[i - 1].span_start >= modules_[i].span_start)
            throw LayoutError("modules not ordered by span start");
}

void ModelLayout::add_module(AdapterModule m) {
    next_id_ = std::max(next_id_, m.id + 1);
    auto pos = std::lower_bound(modules_.begin(), modules_.end(), m.span_start,
                                [](const AdapterModule& x, int start) { return x.span_start < start; });
    modules_.insert(pos, m);
    validate();
}

int ModelLayout::merge_modules(int left_id, int right_id, std::optional<double> scaling) {
    const AdapterModule* left = module_by_id(left_id);
    const AdapterModule* right = module_by_id(right_id);
    if (!left || !right) throw ContractError("merge_modules: unknown module id");
    if (left->span_start > right->span_start) std::swap(left, right);
    if (left->kind != AdapterKind::Lor2c || right->kind != AdapterKind::Lor2c)
        throw ContractError("merge_modules: both modules must be lor2c");
    if (left->span_end() != right->span_start)
        throw ContractError("merge_modules: spans of modules " + std::to_string(left->id) +
                            " and " + std::to_string(right->id) + " do not touch");
    if (left->rank != right->rank) throw ContractError("merge_modules: rank mismatch");

    AdapterModule merged;
    merged.id = next_id_++;
    merged.kind = AdapterKind::Lor2c;
    merged.rank = left->rank;
    merged.span_start = left->span_start;
    merged.span_len = left->span_len + right->span_len;
    merged.scaling = scaling.value_or(left->scaling);
    const int l = left->id, r = right->id;
    remove_module(l);
    remove_module(r);
    add_module(merged);
    return merged.id;
}

int ModelLayout::replace_with_lora(int id, int new_rank, double scaling) {
    const AdapterModule* m = module_by_id(id);
    if (!m) throw ContractError("replace_with_lora: unknown module id " + std::to_string(id));
    if (m->kind != AdapterKind::Lor2c && m->kind != AdapterKind::SharedLor2c)
        throw ContractError("replace_with_lora: module " + std::to_string(id) + " is not lor2c");
    if (m->span_len != 1)
        throw ContractError("replace_with_lora: module " + std::to_string(id) +
                            " spans multiple layers");
    AdapterModule lora;
    lora.id = next_id_++;
    lora.kind = AdapterKind::LoraQv;
    lora.rank = new_rank;
    lora.span_start = m->span_start;
    lora.span_len = 1;
    lora.scaling = scaling;
    remove_module(id);
    add_module(lora);
    return lora.id;
}

void ModelLayout::remove_module(int id) {
    auto it = std::find_if(modules_.begin(), modules_.end(),
                           [id](const AdapterModule& m) { return m.id == id; });
    if (it == modules_.end()) throw ContractError("remove_module: unknown id " + std::to_string(id));
    modules_.erase(it);
}

// ---- AdapterParams -----------------------------------------------------------

AdapterParams AdapterParams::init(const ModelLayout& layout, int d_model, std::uint64_t seed) {
    layout.validate();
    Rng rng(mix_seed(seed, 0x61646170));  // "adap"
    AdapterParams out;
    for (const AdapterModule& m : layout.modules()) {
        switch (m.kind) {
            case AdapterKind::Lor2c: {
                Lor2cParams p;
                p.a = Tensor::randn({m.rank, d_model}, rng, 0.02, true);
                p.b = Tensor::zeros({d_model, m.rank}, true);
                out.lor2c_.emplace(m.id, std::move(p));
                break;
            }
            case AdapterKind::SharedLor2c: {
                if (!out.shared_a_.defined())
                    out.shared_a_ = Tensor::randn({m.rank, d_model}, rng, 0.02, true);
                if (out.shared_a_.dim(0) != m.rank)
                    throw LayoutError("shared_lor2c modules must agree on rank");
                Lor2cParams p;
                p.a = out.shared_a_;  // aliases the single shared storage
                p.b = Tensor::zeros({d_model, m.rank}, true);
                out.lor2c_.emplace(m.id, std::move(p));
                break;
            }
            case AdapterKind::LoraQv: {
                LoraQvParams p;
                p.a_q = Tensor::randn({m.rank, d_model}, rng, 0.02, true);
                p.b_q = Tensor::zeros({d_model, m.rank}, true);
                p.a_v = Tensor::randn({m.rank, d_model}, rng, 0.02, true);
                p.b_v = Tensor::zeros({d_model, m.rank}, true);
                out.lora_.emplace(m.id, std::move(p));
                break;
            }
            case AdapterKind::None:
                break;
        }
    }
    return out;
}

const Lor2cParams& AdapterParams::lor2c(int module_id) const {
    auto it = lor2c_.find(module_id);
    if (it == lor2c_.end())
        throw ContractError("no lor2c params for module " + std::to_string(module_id));
    return it->second;
}

const LoraQvParams& AdapterParams::lora(int module_id) const {
    auto it = lora_.find(module_id);
    if (it == lora_.end())
        throw ContractError("no lora params for module " + std::to_string(module_id));
    return it->second;
}

Lor2cParams& AdapterParams::lor2c(int module_id) {
    return const_cast<Lor2cParams&>(static_cast<const AdapterParams*>(this)->lor2c(module_id));
}

LoraQvParams& AdapterParams::lora(int module_id) {
    return const_cast<LoraQvParams&>(static_cast<const AdapterParams*>(this)->lora(module_id));
}

bool AdapterParams::has_module(int module_id) const {
    return lor2c_.count(module_id) > 0 || lora_.count(module_id) > 0;
}

void AdapterParams::set_lor2c(int module_id, Lor2cParams p) { lor2c_[module_id] = std::move(p); }

void AdapterParams::set_lora(int module_id, LoraQvParams p) { lora_[module_id] = std::move(p); }

void AdapterParams::remove_module(int module_id) {
    lor2c_.erase(module_id);
    lora_.erase(module_id);
}

std::vector<Tensor> AdapterParams::trainable(const ModelLayout& layout) const {
    std::vector<Tensor> out;
    std::vector<const void*> seen;
    auto push = [&](const Tensor& t) {
        if (std::find(seen.begin(), seen.end(), t.id()) != seen.end()) return;
        seen.push_back(t.id());
        out.push_back(t);
    };
    for (const AdapterModule& m : layout.modules()) {
        if (m.kind == AdapterKind::Lor2c || m.kind == AdapterKind::SharedLor2c) {
            const Lor2cParams& p = lor2c(m.id);
            push(p.a);
            push(p.b);
        } else if (m.kind == AdapterKind::LoraQv) {
            const LoraQvParams& p = lora(m.id);
            push(p.a_q);
            push(p.b_q);
            push(p.a_v);
            push(p.b_v);
        }
    }
    return out;
}

// ---- forwards ------------------------------------------------------------------

Tensor lora_delta(const Tensor& x, const Tensor& b, const Tensor& a, double scaling) {
    return scale(matmul(matmul(x, b), a), scaling);
}

Tensor lor2c_span_forward(const Tensor& h_in, const AdapterModule& module,
                          const AdapterParams& params,
                          const std::function<Tensor(const Tensor&)>& base_span) {
    if (module.kind != AdapterKind::Lor2c && module.kind != AdapterKind::SharedLor2c)
        throw ContractError("lor2c_span_forward on module of kind " +
                            std::string(adapter_kind_name(module.kind)));
    const Lor2cParams& p = params.lor2c(module.id);
    Tensor base_out = base_span(h_in);
    const Shape orig = h_in.shape();
    const int d = orig.back();
    Tensor flat = reshape(h_in, {static_cast<int>(h_in.numel() / d), d});
    Tensor delta = lora_delta(flat, p.b, p.a, module.scaling);
    return add(base_out, reshape(delta, orig));
}

ParamCounts param_count(const ModelLayout& layout, int d_model) {
    layout.validate();
    ParamCounts c;
    bool shared_seen = false;
    const std::int64_t d = d_model;
    for (const AdapterModule& m : layout.modules()) {
        const std::int64_t r = m.rank;
        switch (m.kind) {
            case AdapterKind::Lor2c:
                c.lor2c += 2 * d * r;
                break;
            case AdapterKind::SharedLor2c:
                c.lor2c += d * r;  // this module's B
                if (!shared_seen) {
                    c.lor2c += d * r;  // the one shared A
                    c.shared_a = d * r;
                    shared_seen = true;
                }
                break;
            case AdapterKind::LoraQv:
                c.lora_qv += 4 * d * r;
                break;
            case AdapterKind::None:
                break;
        }
    }
    c.total = c.lor2c + c.lora_qv;
    return c;
}

}  // namespace lor2c
