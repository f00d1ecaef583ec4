// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "lor2c/errors.hpp"

namespace lor2c {

Rounding rounding_from_name(const std::string& name) {
    if (name == "floor") return Rounding::Floor;
    if (name == "continuous") return Rounding::Continuous;
    throw ConfigError("unknown rounding mode '" + name + "'");
}

const char* rounding_name(Rounding r) { return r == Rounding::Floor ? "floor" : "continuous"; }

int ScheduleConfig::completion_epoch(int op_max, double epsilon) {
    if (op_max <= 1) return 0;  // target is already op_max at epoch 0
    return static_cast<int>(std::ceil((op_max - 1) * (4.0 * op_max + epsilon)));
}

void ScheduleConfig::validate() const {
    if (m_max < 0 || i_max < 0) throw ConfigError("schedule: m_max/i_max must be >= 0");
    if (total_epochs < 1) throw ConfigError("schedule: total_epochs must be >= 1");
    if (epsilon <= 0.0) throw ConfigError("schedule: epsilon must be positive");
    if (max_span < 0) throw ConfigError("schedule: max_span must be >= 0");
    if (m_max == 0 && i_max == 0) return;
    if (total_epochs < 2)
        throw ConfigError("schedule: restructuring needs total_epochs >= 2");
    const int last = window_last_epoch();
    for (auto [name, op_max] : {std::pair{"merge", m_max}, std::pair{"inject", i_max}}) {
        const int done = completion_epoch(op_max, epsilon);
        if (op_max > 0 && done > last)
            throw ConfigError(std::string("schedule: ") + name + " count " +
                              std::to_string(op_max) + " completes at epoch " +
                              std::to_string(done) + ", outside the first half of " +
                              std::to_string(total_epochs) + " epochs (need total_epochs >= " +
                              std::to_string(2 * (done + 1)) + ")");
    }
}

int schedule_target(int epoch, int op_max, const ScheduleConfig& cfg) {
    if (op_max <= 0) return 0;
    if (epoch < 0) throw ContractError("schedule_target: negative epoch");
    const double denom = 4.0 * op_max + cfg.epsilon;
    double raw;
    if (cfg.rounding == Rounding::Floor)
        raw = std::floor(static_cast<double>(epoch) / denom) + 1.0;
    else
        raw = static_cast<double>(epoch) / denom + 1.0;  // floored once, below
    return std::min(op_max, static_cast<int>(std::floor(raw)));
}

std::pair<int, int> schedule_targets(int epoch, const ScheduleConfig& cfg) {
    return {schedule_target(epoch, cfg.m_max, cfg), schedule_target(epoch, cfg.i_max, cfg)};
}

namespace {

const SfsModuleEntry* report_entry(const SfsReport& report, int module_id) {
    for (const SfsModuleEntry& m : report.modules)
        if (m.module_id == module_id) return &m;
    return nullptr;
}

std::vector<int> covered_layers(const AdapterModule& m) {
    std::vector<int> out;
    for (int t = m.span_start; t < m.span_end(); ++t) out.push_back(t);
    return out;
}

}  // namespace

int apply_merge(ModelLayout& layout, AdapterParams& params, int left_id, int right_id,
                const SfsReport& report) {
    const AdapterModule* left = layout.module_by_id(left_id);
    const AdapterModule* right = layout.module_by_id(right_id);
    if (!left || !right) throw ContractError("apply_merge: unknown module id");
    if (left->span_start > right->span_start) {
        std::swap(left, right);
        std::swap(left_id, right_id);
    }
    const SfsModuleEntry* le = report_entry(report, left_id);
    const SfsModuleEntry* re = report_entry(report, right_id);
    if (!le || !re) throw ContractError("apply_merge: modules missing from sfs report");

    // survivor donates its factors; higher information content wins
    const bool left_survives = le->sfs >= re->sfs;  // tie goes to the lower layer
    const Lor2cParams& survivor = params.lor2c(left_survives ? left_id : right_id);
    const double survivor_scaling = left_survives ? left->scaling : right->scaling;

    Lor2cParams copied;
    copied.a = survivor.a.clone();
    copied.b = survivor.b.clone();

    const int new_id = layout.merge_modules(left_id, right_id, survivor_scaling);
    params.remove_module(left_id);
    params.remove_module(right_id);
    params.set_lor2c(new_id, std::move(copied));
    return new_id;
}

int apply_inject(ModelLayout& layout, AdapterParams& params, int module_id, int r_inj,
                 std::uint64_t seed) {
    const AdapterModule* m = layout.module_by_id(module_id);
    if (!m) throw ContractError("apply_inject: unknown module id " + std::to_string(module_id));
    if (m->span_len != 1)
        throw ContractError("apply_inject: module " + std::to_string(module_id) +
                            " spans multiple layers");
    if (r_inj < 1) throw ContractError("apply_inject: rank must be >= 1");
    const int layer = m->span_start;
    const int d = params.lor2c(module_id).a.dim(1);

    Rng rng(mix_seed(mix_seed(seed, 0x696e6a65), static_cast<std::uint64_t>(layer)));
    LoraQvParams fresh;
    fresh.a_q = Tensor::randn({r_inj, d}, rng, 0.02, true);
    fresh.b_q = Tensor::zeros({d, r_inj}, true);
    fresh.a_v = Tensor::randn({r_inj, d}, rng, 0.02, true);
    fresh.b_v = Tensor::zeros({d, r_inj}, true);

    const int new_id = layout.replace_with_lora(module_id, r_inj, 1.0);
    params.remove_module(module_id);
    params.set_lora(new_id, std::move(fresh));
    return new_id;
}

std::vector<OpLogEntry> scheduler_step(ScheduleState& state, ModelLayout& layout,
                                       AdapterParams& params, int epoch,
                                       const SfsReport& report, const ScheduleConfig& cfg,
                                       std::uint64_t seed) {
    std::vector<OpLogEntry> performed;
    if (epoch > cfg.window_last_epoch()) return performed;  // restructuring window closed
    const auto [merge_target, inject_target] = schedule_targets(epoch, cfg);

    auto emit = [&](OpLogEntry e) {
        state.log.push_back(e);
        performed.push_back(std::move(e));
    };

    // merges are prioritized
    if (state.merges_done < merge_target) {
        std::vector<PairScore> scores = pair_scores(report.modules, state.merge_excluded_layers);
        if (cfg.max_span > 0) {
            std::erase_if(scores, [&](const PairScore& p) {
                const AdapterModule* l = layout.module_by_id(p.left_id);
                const AdapterModule* r = layout.module_by_id(p.right_id);
                return !l || !r || l->span_len + r->span_len > cfg.max_span;
            });
        }
        std::erase_if(scores, [&](const PairScore& p) {
            return !layout.module_by_id(p.left_id) || !layout.module_by_id(p.right_id);
        });
        if (auto pick = select_merge_pair(scores)) {
            OpLogEntry e;
            e.epoch = epoch;
            e.op = "merge";
            e.module_a = pick->left_id;
            e.module_b = pick->right_id;
            const AdapterModule* l = layout.module_by_id(pick->left_id);
            const AdapterModule* r = layout.module_by_id(pick->right_id);
            e.layers = covered_layers(*l);
            for (int t : covered_layers(*r)) e.layers.push_back(t);
            e.new_rank = l->rank;
            e.sfs_values = {report_entry(report, pick->left_id)->sfs,
                            report_entry(report, pick->right_id)->sfs};
            e.new_module = apply_merge(layout, params, pick->left_id, pick->right_id, report);
            e.scaling = layout.module_by_id(e.new_module)->scaling;
            ++state.merges_done;
            emit(std::move(e));
        } else {
            OpLogEntry e;
            e.epoch = epoch;
            e.op = "skip";
            e.detail = "merge due but no legal pair";
            emit(std::move(e));
        }
    }

    if (state.injections_done < inject_target) {
        // candidates must still exist as single-layer lor2c modules after any
        // merge performed above
        SfsReport current;
        current.epoch = report.epoch;
        for (const SfsModuleEntry& m : report.modules) {
            const AdapterModule* mod = layout.module_by_id(m.module_id);
            if (mod && mod->kind == AdapterKind::Lor2c && mod->span_len == 1)
                current.modules.push_back(m);
        }
        if (auto target = select_inject_target(current, {}, cfg.inject_policy)) {
            const AdapterModule* mod = layout.module_by_id(*target);
            const int layer = mod->span_start;
            const int rank = mod->rank;
            const int r_inj = (rank + 1) / 2;
            OpLogEntry e;
            e.epoch = epoch;
            e.op = "inject";
            e.module_a = *target;
            e.layers = {layer};
            e.new_rank = r_inj;
            e.sfs_values = {report_entry(report, *target)->sfs};
            if (rank % 2 != 0)
                e.detail = "odd rank " + std::to_string(rank) + ": parameter count conserved only approximately";
            e.new_module = apply_inject(layout, params, *target, r_inj, seed);
            ++state.injections_done;
            state.injected_layers.insert(layer);
            for (int t : {layer - 1, layer, layer + 1})
                if (t >= 0 && t < layout.n_layers()) state.merge_excluded_layers.insert(t);
            emit(std::move(e));
        } else {
            OpLogEntry e;
            e.epoch = epoch;
            e.op = "skip";
            e.detail = "inject due but no legal single-layer module";
            emit(std::move(e));
        }
    }

    return performed;
}

void check_schedule_invariants(const ScheduleState& state, const ModelLayout& layout,
                               const ScheduleConfig& cfg) {
    if (state.merges_done > cfg.m_max)
        throw ContractError("invariant: merges_done exceeds m_max");
    if (state.injections_done > cfg.i_max)
        throw ContractError("invariant: injections_done exceeds i_max");
    layout.validate();
    for (int layer : state.injected_layers) {
        const AdapterModule* m = layout.module_at_layer(layer);
        if (!m || m->kind != AdapterKind::LoraQv)
            throw ContractError("invariant: injected layer " + std::to_string(layer) +
                                " not covered by a lora module");
        if (!state.merge_excluded_layers.count(layer))
            throw ContractError("invariant: injected layer missing from merge exclusions");
    }
    for (const AdapterModule& m : layout.modules()) {
        if (m.kind != AdapterKind::Lor2c && m.kind != AdapterKind::SharedLor2c) continue;
        for (int t = m.span_start; t < m.span_end(); ++t)
            if (state.injected_layers.count(t))
                throw ContractError("invariant: layer " + std::to_string(t) +
                                    " both injected and inside a lor2c span");
    }
}

ModelLayout replay_log(const ModelLayout& initial, const std::vector<OpLogEntry>& log) {
    ModelLayout layout = initial;
    for (const OpLogEntry& e : log) {
        if (e.op == "merge") {
            const int id = layout.merge_modules(e.module_a, e.module_b, e.scaling);
            if (id != e.new_module)
                throw ContractError("replay diverged: merge produced module " + std::to_string(id) +
                                    ", log says " + std::to_string(e.new_module));
        } else if (e.op == "inject") {
            const int id = layout.replace_with_lora(e.module_a, e.new_rank, e.scaling);
            if (id != e.new_module)
                throw ContractError("replay diverged: inject produced module " + std::to_string(id) +
                                    ", log says " + std::to_string(e.new_module));
        }
    }
    return layout;
}

}  // namespace lor2c
