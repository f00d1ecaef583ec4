// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Restructuring state machine for combined merge + inject training. Targets
// grow by target(epoch) = min(op_max, floor(epoch / (4*op_max + eps)) + 1);
// deficits are worked off one merge and one injection per epoch boundary,
// merges first. All restructuring lies in the first half of training.
//
// Exclusion rules after injecting layer L: L joins the injected set, and
// merges touching layers L-1, L, L+1 are prohibited from then on.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lor2c/adapters.hpp"
#include "lor2c/sfs.hpp"

namespace lor2c {

enum class Rounding { Floor, Continuous };

Rounding rounding_from_name(const std::string& name);
const char* rounding_name(Rounding r);

struct ScheduleConfig {
    int m_max = 0;
    int i_max = 0;
    int total_epochs = 2;
    double epsilon = 1e-9;
    Rounding rounding = Rounding::Floor;
    InjectPolicy inject_policy = InjectPolicy::LowestSfs;
    SfsMetricSource metric_source = SfsMetricSource::Weights;
    int sfs_k = 0;     // 0: ceil(rank/2) per module
    int max_span = 0;  // 0: unlimited merged span length

    // Last epoch boundary (0-indexed) inside the restructuring window.
    int window_last_epoch() const { return total_epochs / 2 - 1; }

    // First epoch at which the target count reaches op_max.
    static int completion_epoch(int op_max, double epsilon = 1e-9);

    // Throws ConfigError when the schedule cannot complete within the first
    // half of training.
    void validate() const;

    int effective_k(int rank) const { return sfs_k > 0 ? sfs_k : (rank + 1) / 2; }
};

// Cumulative target count for one operation type at an epoch (0-indexed).
int schedule_target(int epoch, int op_max, const ScheduleConfig& cfg);
// (merge_target, inject_target)
std::pair<int, int> schedule_targets(int epoch, const ScheduleConfig& cfg);

struct OpLogEntry {
    int epoch = 0;
    std::string op;  // "merge" | "inject" | "skip"
    std::vector<int> layers;
    int module_a = -1;
    int module_b = -1;
    int new_module = -1;
    int new_rank = -1;
    double scaling = 1.0;
    std::vector<double> sfs_values;
    std::string detail;
};

struct ScheduleState {
    int merges_done = 0;
    int injections_done = 0;
    std::set<int> injected_layers;
    std::set<int> merge_excluded_layers;
    std::vector<OpLogEntry> log;
};

// Merges two adjacent lor2c modules; the survivor (higher SFS, ties toward the
// lower layer) donates copies of its A/B factors. Returns the new module id.
int apply_merge(ModelLayout& layout, AdapterParams& params, int left_id, int right_id,
                const SfsReport& report);

// Replaces a single-layer lor2c module by a freshly initialized half-rank
// LoraQv module on the same layer. Returns the new module id.
int apply_inject(ModelLayout& layout, AdapterParams& params, int module_id, int r_inj,
                 std::uint64_t seed);

// One epoch-boundary step: performs at most one merge then at most one
// injection, per the current deficits and legality rules. Every action (or
// skipped deficit) is appended to state.log; entries performed this call are
// also returned.
std::vector<OpLogEntry> scheduler_step(ScheduleState& state, ModelLayout& layout,
                                       AdapterParams& params, int epoch,
                                       const SfsReport& report, const ScheduleConfig& cfg,
                                       std::uint64_t seed);

// Structural invariants checked by tests after every step: budgets respected,
// spans disjoint and in-bounds, injected layers outside every span, LoraQv
// exactly on injected layers (for scheduler-produced layouts).
void check_schedule_invariants(const ScheduleState& state, const ModelLayout& layout,
                               const ScheduleConfig& cfg);

// Rebuilds the final layout from an initial layout plus an operation log.
ModelLayout replay_log(const ModelLayout& initial, const std::vector<OpLogEntry>& log);

}  // namespace lor2c
