// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/config.hpp"

#include <cstdlib>
#include <fstream>

#include "lor2c/errors.hpp"

namespace lor2c {

using nlohmann::json;

namespace {

template <typename T>
void take(const json& section, const std::string& key, T& out) {
    if (section.contains(key)) out = section.at(key).get<T>();
}

void take_enum(const json& section, const std::string& key, std::string& scratch,
               const std::function<void(const std::string&)>& apply) {
    if (section.contains(key)) {
        scratch = section.at(key).get<std::string>();
        apply(scratch);
    }
}

void reject_unknown(const json& section, const std::string& name,
                    std::initializer_list<const char*> known) {
    for (auto it = section.begin(); it != section.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ConfigError("unknown key '" + (name.empty() ? it.key() : name + "." + it.key()) +
                              "' in config");
    }
}

}  // namespace

void apply_config_json(ExperimentConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, "", {"base", "task", "train", "schedule", "pretrain", "out_root",
                           "base_checkpoint"});
    std::string scratch;

    if (j.contains("base")) {
        const json& b = j.at("base");
        reject_unknown(b, "base", {"d_model", "n_layers", "n_heads", "d_ff", "vocab_size",
                                   "max_seq_len", "n_classes", "seed"});
        take(b, "d_model", cfg.base.d_model);
        take(b, "n_layers", cfg.base.n_layers);
        take(b, "n_heads", cfg.base.n_heads);
        take(b, "d_ff", cfg.base.d_ff);
        take(b, "vocab_size", cfg.base.vocab_size);
        take(b, "max_seq_len", cfg.base.max_seq_len);
        take(b, "n_classes", cfg.base.n_classes);
        take(b, "seed", cfg.base.seed);
    }
    if (j.contains("task")) {
        const json& t = j.at("task");
        reject_unknown(t, "task", {"kind", "seq_len", "n_train", "n_eval", "seed"});
        take_enum(t, "kind", scratch, [&](const std::string& s) { cfg.task.kind = task_kind_from_name(s); });
        take(t, "seq_len", cfg.task.seq_len);
        take(t, "n_train", cfg.task.n_train);
        take(t, "n_eval", cfg.task.n_eval);
        take(t, "seed", cfg.task.seed);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t, "train",
                       {"method", "rank", "lr", "batch_size", "epochs", "seed", "weight_decay",
                        "lora_alpha", "lor2c_scaling", "linear_lr_decay", "record_grads",
                        "record_sfs", "record_snapshots"});
        take_enum(t, "method", scratch, [&](const std::string& s) { cfg.train.method = method_from_name(s); });
        take(t, "rank", cfg.train.rank);
        take(t, "lr", cfg.train.lr);
        take(t, "batch_size", cfg.train.batch_size);
        take(t, "epochs", cfg.train.epochs);
        take(t, "seed", cfg.train.seed);
        take(t, "weight_decay", cfg.train.weight_decay);
        take(t, "lora_alpha", cfg.train.lora_alpha);
        take(t, "lor2c_scaling", cfg.train.lor2c_scaling);
        take(t, "linear_lr_decay", cfg.train.linear_lr_decay);
        take(t, "record_grads", cfg.train.record_grads);
        take(t, "record_sfs", cfg.train.record_sfs);
        take(t, "record_snapshots", cfg.train.record_snapshots);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        reject_unknown(s, "schedule", {"m_max", "i_max", "epsilon", "rounding", "inject_policy",
                                       "metric_source", "sfs_k", "max_span"});
        take(s, "m_max", cfg.train.schedule.m_max);
        take(s, "i_max", cfg.train.schedule.i_max);
        take(s, "epsilon", cfg.train.schedule.epsilon);
        take_enum(s, "rounding", scratch,
                  [&](const std::string& v) { cfg.train.schedule.rounding = rounding_from_name(v); });
        take_enum(s, "inject_policy", scratch, [&](const std::string& v) {
            cfg.train.schedule.inject_policy = inject_policy_from_name(v);
        });
        take_enum(s, "metric_source", scratch, [&](const std::string& v) {
            cfg.train.schedule.metric_source = metric_source_from_name(v);
        });
        take(s, "sfs_k", cfg.train.schedule.sfs_k);
        take(s, "max_span", cfg.train.schedule.max_span);
    }
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        reject_unknown(p, "pretrain",
                       {"epochs", "lr", "batch_size", "mask_prob", "corpus_size", "seq_len", "seed"});
        take(p, "epochs", cfg.pretrain.epochs);
        take(p, "lr", cfg.pretrain.lr);
        take(p, "batch_size", cfg.pretrain.batch_size);
        take(p, "mask_prob", cfg.pretrain.mask_prob);
        take(p, "corpus_size", cfg.pretrain.corpus_size);
        take(p, "seq_len", cfg.pretrain.seq_len);
        take(p, "seed", cfg.pretrain.seed);
    }
    take(j, "out_root", cfg.out_root);
    take(j, "base_checkpoint", cfg.base_checkpoint);
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    ExperimentConfig cfg;
    apply_config_json(cfg, j);
    return cfg;
}

void ExperimentConfig::resolve() {
    task.vocab_size = base.vocab_size;
    task.n_classes = base.n_classes;
    train.schedule.total_epochs = train.epochs;
}

void ExperimentConfig::validate() const {
    base.validate();
    task.validate();
    train.validate();
    pretrain.validate();
    if (task.seq_len > base.max_seq_len)
        throw ConfigError("task.seq_len exceeds base.max_seq_len");
    if (pretrain.seq_len > base.max_seq_len)
        throw ConfigError("pretrain.seq_len exceeds base.max_seq_len");
}

std::string ExperimentConfig::resolved_out_root() const {
    if (!out_root.empty()) return out_root;
    if (const char* env = std::getenv("LOR2C_OUT")) return env;
    return "runs";
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["base"] = {{"d_model", cfg.base.d_model},
                 {"n_layers", cfg.base.n_layers},
                 {"n_heads", cfg.base.n_heads},
                 {"d_ff", cfg.base.d_ff},
                 {"vocab_size", cfg.base.vocab_size},
                 {"max_seq_len", cfg.base.max_seq_len},
                 {"n_classes", cfg.base.n_classes},
                 {"seed", cfg.base.seed}};
    j["task"] = {{"kind", task_kind_name(cfg.task.kind)},
                 {"seq_len", cfg.task.seq_len},
                 {"n_train", cfg.task.n_train},
                 {"n_eval", cfg.task.n_eval},
                 {"seed", cfg.task.seed}};
    j["train"] = {{"method", method_name(cfg.train.method)},
                  {"rank", cfg.train.rank},
                  {"lr", cfg.train.lr},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"seed", cfg.train.seed},
                  {"weight_decay", cfg.train.weight_decay},
                  {"lora_alpha", cfg.train.lora_alpha},
                  {"lor2c_scaling", cfg.train.lor2c_scaling},
                  {"linear_lr_decay", cfg.train.linear_lr_decay},
                  {"record_grads", cfg.train.record_grads},
                  {"record_sfs", cfg.train.record_sfs},
                  {"record_snapshots", cfg.train.record_snapshots}};
    j["schedule"] = {{"m_max", cfg.train.schedule.m_max},
                     {"i_max", cfg.train.schedule.i_max},
                     {"epsilon", cfg.train.schedule.epsilon},
                     {"rounding", rounding_name(cfg.train.schedule.rounding)},
                     {"inject_policy", inject_policy_name(cfg.train.schedule.inject_policy)},
                     {"metric_source", metric_source_name(cfg.train.schedule.metric_source)},
                     {"sfs_k", cfg.train.schedule.sfs_k},
                     {"max_span", cfg.train.schedule.max_span}};
    j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                     {"lr", cfg.pretrain.lr},
                     {"batch_size", cfg.pretrain.batch_size},
                     {"mask_prob", cfg.pretrain.mask_prob},
                     {"corpus_size", cfg.pretrain.corpus_size},
                     {"seq_len", cfg.pretrain.seq_len},
                     {"seed", cfg.pretrain.seed}};
    j["out_root"] = cfg.out_root;
    j["base_checkpoint"] = cfg.base_checkpoint;
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("out_root");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf).substr(0, 12);
}

}  // namespace lor2c
