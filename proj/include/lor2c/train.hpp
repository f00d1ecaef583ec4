// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Fine-tuning loop over a frozen base: minibatch forward/backward/AdamW on
// adapter parameters only, per-epoch SFS evaluation, scheduler hooks for the
// merge/inject regime, and metric/gradient recording.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lor2c/adapters.hpp"
#include "lor2c/model.hpp"
#include "lor2c/optim.hpp"
#include "lor2c/scheduler.hpp"
#include "lor2c/sfs.hpp"
#include "lor2c/tasks.hpp"

namespace lor2c {

enum class Method { Lora, Lor2c, ShareLor2c, ImLor2c };

Method method_from_name(const std::string& name);
const char* method_name(Method m);

struct TrainConfig {
    Method method = Method::Lor2c;
    int rank = 8;
    double lr = 4e-4;
    int batch_size = 64;
    int epochs = 30;
    std::uint64_t seed = 123;
    double weight_decay = 0.0;
    double lora_alpha = 0.0;      // 0: alpha = rank, i.e. scaling 1
    double lor2c_scaling = 1.0;
    bool linear_lr_decay = false;
    bool record_grads = false;
    bool record_sfs = true;       // per-epoch spectra (sv-trajectory source)
    bool record_snapshots = false;  // per-epoch adapter copies
    ScheduleConfig schedule;      // consulted when method == imlor2c

    void validate() const;
    double lora_scaling() const { return lora_alpha > 0.0 ? lora_alpha / rank : 1.0; }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
    std::int64_t trainable_params = 0;
    double wall_ms = 0.0;  // informational; excluded from the determinism contract
    // mean |grad| over a layer's adapter entries, accumulated over the epoch's
    // batches; NaN for layers without adapter parameters. Empty unless
    // record_grads.
    std::vector<double> grad_mean_abs;
    std::vector<OpLogEntry> ops;
};

struct SfsEpochRecord {
    int epoch = 0;
    std::vector<SfsModuleEntry> modules;
};

struct AdapterSnapshot {
    int epoch = 0;
    ModelLayout layout;
    AdapterParams params;  // deep copies
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    std::vector<SfsEpochRecord> sfs_history;
    std::vector<OpLogEntry> op_log;
    std::vector<AdapterSnapshot> snapshots;
    ModelLayout final_layout;
    AdapterParams final_params;
    double final_accuracy = 0.0;
    bool diverged = false;
    std::string divergence_note;
};

// The layout each method starts from (adapters on every layer).
ModelLayout initial_layout(Method method, const BaseConfig& base, const TrainConfig& cfg);

// Runs the fine-tune. The base must be frozen. On divergence (non-finite
// loss) training stops early with diverged = true and state preserved.
TrainResult train(const TrainConfig& cfg, const BaseWeights& base, const Dataset& train_set,
                  const Dataset& eval_set);

// Argmax predictions over a dataset, evaluated in fixed order.
std::vector<std::int32_t> predict_labels(const ModelLayout& layout, const BaseWeights& base,
                                         const AdapterParams& params, const Dataset& data,
                                         int batch_size);
double evaluate_accuracy(const ModelLayout& layout, const BaseWeights& base,
                         const AdapterParams& params, const Dataset& data, int batch_size);

// ---- base pretraining -------------------------------------------------------

struct PretrainConfig {
    int epochs = 6;
    double lr = 1e-3;
    int batch_size = 64;
    double mask_prob = 0.15;
    int corpus_size = 4096;
    int seq_len = 8;
    std::uint64_t seed = 11;

    void validate() const;
};

// Masked-token prediction through the tied embedding head, then freeze.
// Returns per-epoch mean losses.
std::vector<double> pretrain_masked_lm(BaseWeights& w, const PretrainConfig& cfg);

// ---- gradient-propagation diagnostics ----------------------------------------

struct GradRatioCell {
    bool present = false;
    double value = 0.0;
};

// Elementwise per-(epoch, layer) ratio of mean |grad| between two recorded
// runs; cells with a zero or missing denominator are absent. Both runs must
// have recorded gradients over identical epoch counts and layer counts.
std::vector<std::vector<GradRatioCell>> grad_ratio_table(const std::vector<EpochRecord>& numer,
                                                         const std::vector<EpochRecord>& denom);

}  // namespace lor2c
