// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "lor2c/errors.hpp"

namespace lor2c {

Method method_from_name(const std::string& name) {
    if (name == "lora") return Method::Lora;
    if (name == "lor2c") return Method::Lor2c;
    if (name == "sharelor2c") return Method::ShareLor2c;
    if (name == "imlor2c") return Method::ImLor2c;
    throw ConfigError("unknown method '" + name + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::Lora: return "lora";
        case Method::Lor2c: return "lor2c";
        case Method::ShareLor2c: return "sharelor2c";
        case Method::ImLor2c: return "imlor2c";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (rank < 1) throw ConfigError("train: rank must be >= 1");
    if (lr < 0.0) throw ConfigError("train: learning rate must be >= 0");
    if (batch_size < 1 || epochs < 1) throw ConfigError("train: batch_size and epochs must be >= 1");
    if (method == Method::ImLor2c) {
        if ((schedule.m_max > 0 || schedule.i_max > 0) && epochs < 2)
            throw ConfigError("train: restructuring requires epochs >= 2");
        ScheduleConfig synced = schedule;
        synced.total_epochs = epochs;
        synced.validate();
    }
}

ModelLayout initial_layout(Method method, const BaseConfig& base, const TrainConfig& cfg) {
    switch (method) {
        case Method::Lora:
            return ModelLayout::lora_all_layers(base.n_layers, cfg.rank, cfg.lora_scaling());
        case Method::Lor2c:
        case Method::ImLor2c:
            return ModelLayout::lor2c_all_layers(base.n_layers, cfg.rank, cfg.lor2c_scaling);
        case Method::ShareLor2c:
            return ModelLayout::shared_all_layers(base.n_layers, cfg.rank, cfg.lor2c_scaling);
    }
    throw ContractError("initial_layout: bad method");
}

std::vector<std::int32_t> predict_labels(const ModelLayout& layout, const BaseWeights& base,
                                         const AdapterParams& params, const Dataset& data,
                                         int batch_size) {
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(data.size()));
    for (int start = 0; start < data.size(); start += batch_size) {
        const int stop = std::min(data.size(), start + batch_size);
        std::vector<int> idx(static_cast<std::size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [batch, labels] = data.batch(idx);
        Tensor logits = model_forward(batch, layout, base, params);
        const int classes = logits.dim(1);
        for (int r = 0; r < logits.dim(0); ++r) {
            const double* row = logits.data().data() + static_cast<std::size_t>(r) * classes;
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;  // ties to the lowest class
            out.push_back(best);
        }
    }
    return out;
}

double evaluate_accuracy(const ModelLayout& layout, const BaseWeights& base,
                         const AdapterParams& params, const Dataset& data, int batch_size) {
    const std::vector<std::int32_t> pred = predict_labels(layout, base, params, data, batch_size);
    std::int64_t correct = 0;
    for (int i = 0; i < data.size(); ++i)
        correct += (pred[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(i)]);
    return static_cast<double>(correct) / data.size();
}

namespace {

// adapter tensors grouped by the layers their module covers
std::vector<std::vector<Tensor>> per_layer_params(const ModelLayout& layout,
                                                  const AdapterParams& params) {
    std::vector<std::vector<Tensor>> by_layer(static_cast<std::size_t>(layout.n_layers()));
    for (const AdapterModule& m : layout.modules()) {
        std::vector<Tensor> ts;
        if (m.kind == AdapterKind::Lor2c || m.kind == AdapterKind::SharedLor2c) {
            const Lor2cParams& p = params.lor2c(m.id);
            ts = {p.a, p.b};
        } else if (m.kind == AdapterKind::LoraQv) {
            const LoraQvParams& p = params.lora(m.id);
            ts = {p.a_q, p.b_q, p.a_v, p.b_v};
        }
        for (int t = m.span_start; t < m.span_end(); ++t)
            for (const Tensor& x : ts) by_layer[static_cast<std::size_t>(t)].push_back(x);
    }
    return by_layer;
}

AdapterParams deep_copy(const ModelLayout& layout, const AdapterParams& params) {
    AdapterParams copy;
    Tensor shared;
    for (const AdapterModule& m : layout.modules()) {
        if (m.kind == AdapterKind::Lor2c) {
            const Lor2cParams& p = params.lor2c(m.id);
            copy.set_lor2c(m.id, {p.a.clone(), p.b.clone()});
        } else if (m.kind == AdapterKind::SharedLor2c) {
            const Lor2cParams& p = params.lor2c(m.id);
            if (!shared.defined()) shared = p.a.clone();
            copy.set_lor2c(m.id, {shared, p.b.clone()});
        } else if (m.kind == AdapterKind::LoraQv) {
            const LoraQvParams& p = params.lora(m.id);
            copy.set_lora(m.id, {p.a_q.clone(), p.b_q.clone(), p.a_v.clone(), p.b_v.clone()});
        }
    }
    return copy;
}

SfsReport sfs_eval(int epoch, const ModelLayout& layout, const AdapterParams& params,
                   const TrainConfig& cfg, const BaseWeights& base, const Dataset& eval_set,
                   const std::set<int>& excluded_layers) {
    const int k = cfg.schedule.effective_k(cfg.rank);
    if (cfg.schedule.metric_source == SfsMetricSource::Features) {
        // probe batch: leading slice of the eval set
        const int probe = std::min(eval_set.size(), cfg.batch_size);
        std::vector<int> idx(static_cast<std::size_t>(probe));
        std::iota(idx.begin(), idx.end(), 0);
        auto [batch, labels] = eval_set.batch(idx);
        std::map<int, Tensor> span_inputs;
        model_forward_capture(batch, layout, base, params, span_inputs);
        return build_sfs_report(epoch, layout, params, k, SfsMetricSource::Features, &span_inputs,
                                excluded_layers);
    }
    return build_sfs_report(epoch, layout, params, k, SfsMetricSource::Weights, nullptr,
                            excluded_layers);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const BaseWeights& base, const Dataset& train_set,
                  const Dataset& eval_set) {
    cfg.validate();
    if (!base.frozen) throw ContractError("train: base weights must be frozen");
    if (train_set.size() < 1 || eval_set.size() < 1) throw ContractError("train: empty dataset");

    ScheduleConfig schedule = cfg.schedule;
    schedule.total_epochs = cfg.epochs;
    if (cfg.method == Method::ImLor2c) schedule.validate();

    TrainResult result;
    ModelLayout layout = initial_layout(cfg.method, base.config, cfg);
    AdapterParams params = AdapterParams::init(layout, base.config.d_model, cfg.seed);
    std::vector<Tensor> trainable = params.trainable(layout);

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW optimizer(opt_cfg);
    ScheduleState sched_state;

    std::vector<int> order(static_cast<std::size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.linear_lr_decay)
            optimizer.set_lr(cfg.lr * (1.0 - static_cast<double>(epoch) / cfg.epochs));

        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 0x73687566), static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochRecord rec;
        rec.epoch = epoch;

        std::vector<double> grad_abs_sum;
        std::vector<std::int64_t> grad_entry_count;
        if (cfg.record_grads) {
            grad_abs_sum.assign(static_cast<std::size_t>(base.config.n_layers), 0.0);
            grad_entry_count.assign(static_cast<std::size_t>(base.config.n_layers), 0);
        }

        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train_set.size() && !result.diverged;
             start += cfg.batch_size) {
            const int stop = std::min(train_set.size(), start + cfg.batch_size);
            std::span<const int> idx(order.data() + start, static_cast<std::size_t>(stop - start));
            auto [batch, labels] = train_set.batch(idx);

            Tensor logits = model_forward(batch, layout, base, params);
            Tensor loss = cross_entropy(logits, labels);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                result.diverged = true;
                result.divergence_note = "non-finite loss at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batches);
                break;
            }
            AdamW::zero_grad(trainable);
            backward(loss);

            if (cfg.record_grads) {
                const auto by_layer = per_layer_params(layout, params);
                for (std::size_t t = 0; t < by_layer.size(); ++t)
                    for (const Tensor& p : by_layer[t]) {
                        for (double g : p.grad()) grad_abs_sum[t] += std::abs(g);
                        grad_entry_count[t] += p.numel();
                    }
            }
            optimizer.step(trainable);
            loss_sum += loss_value;
            ++batches;
        }
        if (result.diverged) {
            result.final_layout = layout;
            result.final_params = deep_copy(layout, params);
            break;
        }

        rec.train_loss = batches > 0 ? loss_sum / batches : 0.0;
        rec.eval_accuracy = evaluate_accuracy(layout, base, params, eval_set, cfg.batch_size);
        if (cfg.record_grads) {
            rec.grad_mean_abs.resize(grad_abs_sum.size());
            for (std::size_t t = 0; t < grad_abs_sum.size(); ++t)
                rec.grad_mean_abs[t] = grad_entry_count[t] > 0
                                           ? grad_abs_sum[t] / static_cast<double>(grad_entry_count[t])
                                           : std::numeric_limits<double>::quiet_NaN();
        }

        const bool wants_sfs = cfg.record_sfs || cfg.method == Method::ImLor2c;
        if (wants_sfs) {
            const SfsReport report = sfs_eval(epoch, layout, params, cfg, base, eval_set,
                                              sched_state.merge_excluded_layers);
            if (cfg.record_sfs) {
                SfsEpochRecord sr;
                sr.epoch = epoch;
                sr.modules = report.modules;
                result.sfs_history.push_back(std::move(sr));
            }
            if (cfg.method == Method::ImLor2c) {
                rec.ops = scheduler_step(sched_state, layout, params, epoch, report, schedule,
                                         cfg.seed);
                if (!rec.ops.empty()) {
                    trainable = params.trainable(layout);
                    optimizer.retain_only(trainable);
                }
            }
        }

        if (cfg.record_snapshots)
            result.snapshots.push_back({epoch, layout, deep_copy(layout, params)});

        rec.trainable_params = param_count(layout, base.config.d_model).total;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
        result.epochs.push_back(std::move(rec));
    }

    result.op_log = sched_state.log;
    if (!result.diverged) {
        result.final_layout = layout;
        result.final_params = deep_copy(layout, params);
        result.final_accuracy = result.epochs.empty() ? 0.0 : result.epochs.back().eval_accuracy;
    }
    return result;
}

// ---- pretraining ---------------------------------------------------------------

void PretrainConfig::validate() const {
    if (epochs < 0 || lr < 0.0 || batch_size < 1 || corpus_size < 1 || seq_len < 1)
        throw ConfigError("pretrain: invalid sizes");
    if (mask_prob <= 0.0 || mask_prob >= 1.0)
        throw ConfigError("pretrain: mask_prob must lie in (0,1)");
}

std::vector<double> pretrain_masked_lm(BaseWeights& w, const PretrainConfig& cfg) {
    cfg.validate();
    if (w.frozen) throw ContractError("pretrain: base already frozen");
    const BaseConfig& base_cfg = w.config;
    if (cfg.seq_len > base_cfg.max_seq_len)
        throw ConfigError("pretrain: seq_len exceeds max_seq_len");

    Dataset corpus = make_pretrain_corpus(base_cfg.vocab_size, cfg.seq_len, cfg.corpus_size,
                                          cfg.seed);
    std::vector<Tensor> trainable = w.all_tensors();
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    AdamW optimizer(opt_cfg);
    Rng mask_rng(mix_seed(cfg.seed, 0x6d61736b));  // "mask"
    const std::int32_t mask_id = base_cfg.mask_token();

    std::vector<int> order(static_cast<std::size_t>(corpus.size()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> losses;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 0x70726573), static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < corpus.size(); start += cfg.batch_size) {
            const int stop = std::min(corpus.size(), start + cfg.batch_size);
            std::span<const int> idx(order.data() + start, static_cast<std::size_t>(stop - start));
            auto [batch, dummy] = corpus.batch(idx);

            std::vector<std::int32_t> targets(batch.tokens.size(), -1);
            bool any = false;
            for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
                if (mask_rng.uniform() < cfg.mask_prob) {
                    targets[i] = batch.tokens[i];
                    batch.tokens[i] = mask_id;
                    any = true;
                }
            }
            if (!any) {  // guarantee a training signal in every batch
                targets[0] = batch.tokens[0];
                batch.tokens[0] = mask_id;
            }

            Tensor logits = mlm_logits(batch, w);
            Tensor loss = cross_entropy(logits, targets, -1);
            if (!std::isfinite(loss.item()))
                throw NumericError("pretrain diverged at epoch " + std::to_string(epoch));
            AdamW::zero_grad(trainable);
            backward(loss);
            optimizer.step(trainable);
            loss_sum += loss.item();
            ++batches;
        }
        losses.push_back(batches > 0 ? loss_sum / batches : 0.0);
    }
    w.freeze();
    return losses;
}

// ---- diagnostics ----------------------------------------------------------------

std::vector<std::vector<GradRatioCell>> grad_ratio_table(const std::vector<EpochRecord>& numer,
                                                         const std::vector<EpochRecord>& denom) {
    if (numer.size() != denom.size() || numer.empty())
        throw ContractError("grad_ratio_table: epoch counts differ or are empty");
    std::vector<std::vector<GradRatioCell>> table;
    table.reserve(numer.size());
    for (std::size_t e = 0; e < numer.size(); ++e) {
        const auto& a = numer[e].grad_mean_abs;
        const auto& b = denom[e].grad_mean_abs;
        if (a.empty() || b.empty())
            throw ContractError("grad_ratio_table: gradients were not recorded (enable record_grads)");
        if (a.size() != b.size()) throw ContractError("grad_ratio_table: layer counts differ");
        std::vector<GradRatioCell> row(a.size());
        for (std::size_t t = 0; t < a.size(); ++t) {
            if (std::isfinite(a[t]) && std::isfinite(b[t]) && b[t] != 0.0)
                row[t] = {true, a[t] / b[t]};
        }
        table.push_back(std::move(row));
    }
    return table;
}

}  // namespace lor2c
