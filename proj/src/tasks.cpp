// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/tasks.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "lor2c/errors.hpp"

namespace lor2c {

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "parity") return TaskKind::Parity;
    if (name == "majority-token") return TaskKind::MajorityToken;
    if (name == "pattern-match") return TaskKind::PatternMatch;
    if (name == "copy-classify") return TaskKind::CopyClassify;
    throw ConfigError("unknown task kind '" + name + "'");
}

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Parity: return "parity";
        case TaskKind::MajorityToken: return "majority-token";
        case TaskKind::PatternMatch: return "pattern-match";
        case TaskKind::CopyClassify: return "copy-classify";
    }
    return "?";
}

void TaskSpec::validate() const {
    if (vocab_size < 3 || seq_len < 1 || n_train < 1 || n_eval < 1)
        throw ConfigError("task: vocab_size >= 3 and positive sizes required");
    if (n_classes < 2) throw ConfigError("task: n_classes must be >= 2");
    switch (kind) {
        case TaskKind::Parity:
            if (n_classes != 2) throw ConfigError("task: parity requires n_classes = 2");
            break;
        case TaskKind::PatternMatch:
            if (n_classes != 2) throw ConfigError("task: pattern-match requires n_classes = 2");
            if (vocab_size < 5) throw ConfigError("task: pattern-match requires vocab_size >= 5");
            break;
        case TaskKind::MajorityToken:
        case TaskKind::CopyClassify:
            if (n_classes > vocab_size - 1)
                throw ConfigError("task: n_classes exceeds drawable token range");
            break;
    }
}

std::int32_t task_label(TaskKind kind, std::span<const std::int32_t> tokens, int n_classes) {
    switch (kind) {
        case TaskKind::Parity: {
            int count = 0;
            for (std::int32_t t : tokens) count += (t == 1);
            return count % 2;
        }
        case TaskKind::MajorityToken: {
            std::map<std::int32_t, int> freq;
            for (std::int32_t t : tokens) ++freq[t];
            std::int32_t best = tokens[0];
            int best_count = 0;
            for (auto [tok, count] : freq)
                if (count > best_count) {  // map order breaks ties toward the smaller id
                    best = tok;
                    best_count = count;
                }
            return best % n_classes;
        }
        case TaskKind::PatternMatch: {
            bool has2 = false, has3 = false;
            for (std::int32_t t : tokens) {
                has2 |= (t == 2);
                has3 |= (t == 3);
            }
            return (has2 && has3) ? 1 : 0;
        }
        case TaskKind::CopyClassify: {
            std::int64_t total = 0;
            for (std::int32_t t : tokens) total += t;
            return static_cast<std::int32_t>(total % n_classes);
        }
    }
    throw ContractError("task_label: bad kind");
}

std::pair<TokenBatch, std::vector<std::int32_t>> Dataset::batch(std::span<const int> indices) const {
    TokenBatch tb;
    tb.b = static_cast<int>(indices.size());
    tb.s = seq_len;
    tb.tokens.reserve(indices.size() * static_cast<std::size_t>(seq_len));
    std::vector<std::int32_t> out_labels;
    out_labels.reserve(indices.size());
    for (int i : indices) {
        auto seq = sequence(i);
        tb.tokens.insert(tb.tokens.end(), seq.begin(), seq.end());
        out_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    return {std::move(tb), std::move(out_labels)};
}

namespace {

void fill_balanced(Dataset& ds, int n, const TaskSpec& spec, Rng& rng,
                   std::set<std::vector<std::int32_t>>& seen) {
    const int classes = spec.n_classes;
    std::vector<int> quota(static_cast<std::size_t>(classes), n / classes);
    for (int c = 0; c < n % classes; ++c) ++quota[static_cast<std::size_t>(c)];

    const std::uint64_t token_range = static_cast<std::uint64_t>(spec.vocab_size - 1);
    std::vector<std::int32_t> seq(static_cast<std::size_t>(spec.seq_len));
    long long attempts = 0;
    const long long max_attempts = 4000LL * n + 100000LL;
    int remaining = n;
    while (remaining > 0) {
        if (++attempts > max_attempts)
            throw ConfigError("task generation stalled; class quotas unreachable for " +
                              std::string(task_kind_name(spec.kind)));
        for (auto& t : seq) t = static_cast<std::int32_t>(rng.uniform_int(token_range));
        const std::int32_t label = task_label(spec.kind, seq, classes);
        if (quota[static_cast<std::size_t>(label)] == 0) continue;
        if (!seen.insert(seq).second) continue;
        --quota[static_cast<std::size_t>(label)];
        --remaining;
        ds.tokens.insert(ds.tokens.end(), seq.begin(), seq.end());
        ds.labels.push_back(label);
    }
}

}  // namespace

std::pair<Dataset, Dataset> make_task(const TaskSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 0x7461736b));  // "task"
    std::set<std::vector<std::int32_t>> seen;

    Dataset train, eval;
    train.seq_len = eval.seq_len = spec.seq_len;
    train.n_classes = eval.n_classes = spec.n_classes;
    fill_balanced(train, spec.n_train, spec, rng, seen);
    fill_balanced(eval, spec.n_eval, spec, rng, seen);
    return {std::move(train), std::move(eval)};
}

Dataset make_pretrain_corpus(int vocab_size, int seq_len, int n, std::uint64_t seed) {
    if (vocab_size < 3 || seq_len < 1 || n < 1)
        throw ConfigError("pretrain corpus: vocab_size >= 3 and positive sizes required");
    Rng rng(mix_seed(seed, 0x636f7270));  // "corp"
    Dataset ds;
    ds.seq_len = seq_len;
    ds.n_classes = 0;
    ds.tokens.reserve(static_cast<std::size_t>(n) * seq_len);
    const std::uint64_t token_range = static_cast<std::uint64_t>(vocab_size - 1);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * seq_len; ++i)
        ds.tokens.push_back(static_cast<std::int32_t>(rng.uniform_int(token_range)));
    ds.labels.assign(static_cast<std::size_t>(n), 0);
    return ds;
}

}  // namespace lor2c
