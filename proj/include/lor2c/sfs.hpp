// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Singular-value analysis of low-rank adapter products and the SFS
// information metric that drives merge/inject selection.
//
// SFS(lambda, k) = 1 - (sum of top k singular values) / (sum of all).
// Low SFS: information concentrated in few directions (cheap to merge away);
// high SFS: information spread out.

#pragma once

#include <optional>
#include <set>
#include <vector>

#include "lor2c/adapters.hpp"
#include "lor2c/tensor.hpp"

namespace lor2c {

// Singular values of the product X [n,r] * Y [r,m] without forming the n x m
// matrix: QR-factor X and Y^T, then take the singular values of the r x r core
// R_X * R_Y^T (one-sided Jacobi). Returned descending, length r.
std::vector<double> singular_values_of_product(const Tensor& x, const Tensor& y);

// Nonzero singular values of W = B*A for adapter factors A [r,d], B [d,r],
// zero-padded to length r.
std::vector<double> singular_values_lowrank(const Tensor& a, const Tensor& b);

// Exactly 1 - (sum of top-k)/(sum of all); 0 for an all-zero spectrum.
// lambda must be sorted descending and nonnegative, 1 <= k <= lambda.size().
double sfs(const std::vector<double>& lambda, int k);

enum class InjectPolicy { LowestSfs, HighestSfs };
enum class SfsMetricSource { Weights, Features };

InjectPolicy inject_policy_from_name(const std::string& name);
const char* inject_policy_name(InjectPolicy p);
SfsMetricSource metric_source_from_name(const std::string& name);
const char* metric_source_name(SfsMetricSource s);

struct SfsModuleEntry {
    int module_id = -1;
    AdapterKind kind = AdapterKind::None;
    int span_start = 0;
    int span_len = 1;
    std::vector<double> singular_values;  // descending
    double sfs = 0.0;
};

struct PairScore {
    int left_id = -1;
    int right_id = -1;
    double score = 0.0;
};

struct SfsReport {
    int epoch = 0;
    std::vector<SfsModuleEntry> modules;   // ordered by span_start
    std::vector<PairScore> pair_scores;
};

// Score(t, t+1) = SFS(t) + SFS(t+1) for each span-touching lor2c pair; pairs
// covering any layer in excluded_layers are skipped.
std::vector<PairScore> pair_scores(const std::vector<SfsModuleEntry>& modules,
                                   const std::set<int>& excluded_layers = {});

// Pair with minimal score; ties broken toward the lower layer. nullopt when empty.
std::optional<PairScore> select_merge_pair(const std::vector<PairScore>& scores);

// Extremal-SFS single-layer lor2c module under the policy; ties toward the
// lower layer; modules on excluded layers are skipped. nullopt when none exist.
std::optional<int> select_inject_target(const SfsReport& report,
                                        const std::set<int>& excluded_layers,
                                        InjectPolicy policy = InjectPolicy::LowestSfs);

// Per-module spectra and SFS values for every lor2c/shared module in the
// layout. k is clamped to each module's spectrum length. Feature mode needs
// span_inputs: the module's span input activations [n,d] from a probe batch
// (see model_forward_capture); the spectrum is then that of the module's
// residual-path output s*(H*B)*A.
SfsReport build_sfs_report(int epoch, const ModelLayout& layout, const AdapterParams& params,
                           int k, SfsMetricSource source = SfsMetricSource::Weights,
                           const std::map<int, Tensor>* span_inputs = nullptr,
                           const std::set<int>& excluded_layers = {});

// Mean singular value across modules per (epoch, rank index), rank indices
// 1..min(top_m, r). history[epoch][module] is a descending spectrum; all
// spectra must share one length.
struct SvTrajectoryPoint {
    int epoch = 0;
    int index = 0;  // 1-based rank index
    double mean = 0.0;
};
std::vector<SvTrajectoryPoint> sv_trajectory(
    const std::vector<std::vector<std::vector<double>>>& history, int top_m);

}  // namespace lor2c
