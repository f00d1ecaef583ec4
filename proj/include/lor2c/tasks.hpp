// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic classification tasks. Labels are closed-form functions of the
// token multiset, so every accuracy claim has an exact recount oracle, and
// class quotas keep the label distribution uniform by construction.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lor2c/model.hpp"

namespace lor2c {

enum class TaskKind { Parity, MajorityToken, PatternMatch, CopyClassify };

TaskKind task_kind_from_name(const std::string& name);
const char* task_kind_name(TaskKind k);

struct TaskSpec {
    TaskKind kind = TaskKind::Parity;
    int vocab_size = 16;
    int seq_len = 8;
    int n_classes = 2;
    int n_train = 2048;
    int n_eval = 512;
    std::uint64_t seed = 7;

    void validate() const;  // throws ConfigError on kind/class mismatches
};

// The deterministic label rule:
//   parity:         (count of token 1) mod 2
//   majority-token: most frequent token id (ties to the smallest) mod n_classes
//   pattern-match:  1 iff both token 2 and token 3 occur
//   copy-classify:  (sum of tokens) mod n_classes
std::int32_t task_label(TaskKind kind, std::span<const std::int32_t> tokens, int n_classes);

struct Dataset {
    int seq_len = 0;
    int n_classes = 0;
    std::vector<std::int32_t> tokens;  // row-major [n, seq_len]
    std::vector<std::int32_t> labels;

    int size() const { return static_cast<int>(labels.size()); }
    std::span<const std::int32_t> sequence(int i) const {
        return {tokens.data() + static_cast<std::size_t>(i) * seq_len,
                static_cast<std::size_t>(seq_len)};
    }
    // Token batch plus labels for the given example indices.
    std::pair<TokenBatch, std::vector<std::int32_t>> batch(std::span<const int> indices) const;
};

// Deterministic (train, eval) pair; the sets are disjoint by construction and
// each is class-balanced. Tokens are drawn from [0, vocab_size-2]; the top id
// is reserved as the pretraining mask token.
std::pair<Dataset, Dataset> make_task(const TaskSpec& spec);

// Unlabeled corpus for masked-token pretraining, same token range.
Dataset make_pretrain_corpus(int vocab_size, int seq_len, int n, std::uint64_t seed);

}  // namespace lor2c
