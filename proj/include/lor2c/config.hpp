// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON file with sections base / task / train /
// schedule / pretrain plus a few top-level keys. Every key can be overridden
// on the command line by a flag of the same dotted name (--train.lr 1e-3).
// Unknown keys are rejected. Runs write their fully-resolved config next to
// their outputs, and run directories are addressed by a hash of that resolved
// experiment content.

#pragma once

#include <string>

#include <json.hpp>

#include "lor2c/model.hpp"
#include "lor2c/tasks.hpp"
#include "lor2c/train.hpp"

namespace lor2c {

struct ExperimentConfig {
    BaseConfig base;
    TaskSpec task;
    TrainConfig train;
    PretrainConfig pretrain;
    std::string out_root;         // empty: $LOR2C_OUT or "runs"
    std::string base_checkpoint;  // run dir or checkpoint prefix for finetune

    // Copies the shared fields (vocabulary, class count, sequence bounds) from
    // base into the task/pretrain specs and syncs schedule.total_epochs.
    void resolve();
    void validate() const;
    std::string resolved_out_root() const;
};

// Strict JSON application: unknown sections or keys throw ConfigError.
void apply_config_json(ExperimentConfig& cfg, const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// FNV-1a hash (12 hex chars) over the experiment content, excluding out_root.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace lor2c
