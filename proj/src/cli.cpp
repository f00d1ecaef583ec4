// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/cli.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "lor2c/checkpoint.hpp"
#include "lor2c/config.hpp"
#include "lor2c/errors.hpp"
#include "lor2c/train.hpp"

namespace lor2c::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << contents;
}

json op_to_json(const OpLogEntry& e) {
    json j;
    j["epoch"] = e.epoch;
    j["op"] = e.op;
    j["layers"] = e.layers;
    j["module_a"] = e.module_a;
    j["module_b"] = e.module_b;
    j["new_module"] = e.new_module;
    j["new_rank"] = e.new_rank;
    j["scaling"] = e.scaling;
    j["sfs_values"] = e.sfs_values;
    j["detail"] = e.detail;
    return j;
}

// nlohmann serializes NaN as null; map back when reading
std::vector<double> doubles_from_json(const json& arr) {
    std::vector<double> out;
    for (const json& v : arr)
        out.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        lines.push_back(json::parse(line));
    }
    return lines;
}

struct RunArtifacts {
    fs::path dir;

    fs::path metrics() const { return dir / "metrics.jsonl"; }
    fs::path timing() const { return dir / "timing.jsonl"; }
    fs::path oplog() const { return dir / "oplog.jsonl"; }
    fs::path sfs_history() const { return dir / "sfs_history.jsonl"; }
    fs::path predictions() const { return dir / "predictions.csv"; }
    fs::path config() const { return dir / "config.json"; }
    fs::path adapters_prefix() const { return dir / "adapters"; }
    fs::path base_prefix() const { return dir / "base"; }
};

void write_run_metrics(const RunArtifacts& run, const TrainResult& result) {
    std::ostringstream metrics, timing, oplog, sfs;
    for (const EpochRecord& r : result.epochs) {
        json j;
        j["epoch"] = r.epoch;
        j["train_loss"] = r.train_loss;
        j["eval_accuracy"] = r.eval_accuracy;
        j["trainable_params"] = r.trainable_params;
        if (!r.grad_mean_abs.empty()) j["grad_mean_abs"] = r.grad_mean_abs;
        if (!r.ops.empty()) {
            json ops = json::array();
            for (const OpLogEntry& e : r.ops) ops.push_back(op_to_json(e));
            j["ops"] = ops;
        }
        metrics << j.dump() << "\n";
        json t;
        t["epoch"] = r.epoch;
        t["wall_ms"] = r.wall_ms;
        timing << t.dump() << "\n";
    }
    for (const OpLogEntry& e : result.op_log) oplog << op_to_json(e).dump() << "\n";
    for (const SfsEpochRecord& sr : result.sfs_history) {
        json j;
        j["epoch"] = sr.epoch;
        json mods = json::array();
        for (const SfsModuleEntry& m : sr.modules) {
            json mj;
            mj["module_id"] = m.module_id;
            mj["kind"] = adapter_kind_name(m.kind);
            mj["span_start"] = m.span_start;
            mj["span_len"] = m.span_len;
            mj["sfs"] = m.sfs;
            mj["singular_values"] = m.singular_values;
            mods.push_back(mj);
        }
        j["modules"] = mods;
        sfs << j.dump() << "\n";
    }
    write_text(run.metrics(), metrics.str());
    write_text(run.timing(), timing.str());
    write_text(run.oplog(), oplog.str());
    if (!result.sfs_history.empty()) write_text(run.sfs_history(), sfs.str());
}

fs::path prepare_run_dir(const ExperimentConfig& cfg, const std::string& kind,
                         std::uint64_t seed, bool force) {
    const fs::path root = cfg.resolved_out_root();
    const fs::path dir = root / (kind + "-" + config_hash(cfg) + "-s" + std::to_string(seed));
    if (fs::exists(dir)) {
        if (!force)
            throw ConfigError("run directory " + dir.string() +
                              " already exists (use --force to overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

// Accepts either a checkpoint prefix or a run directory containing base.json.
fs::path resolve_base_prefix(const std::string& given) {
    if (given.empty())
        throw ConfigError("no base checkpoint configured (set base_checkpoint or --base)");
    fs::path p(given);
    if (fs::exists(p.string() + ".json")) return p;
    if (fs::exists(p / "base.json")) return p / "base";
    throw ConfigError("base checkpoint not found at '" + given + "'");
}

// ---- pretrain ------------------------------------------------------------------

int cmd_pretrain(ExperimentConfig cfg, bool force) {
    cfg.resolve();
    cfg.validate();
    RunArtifacts run{prepare_run_dir(cfg, "pretrain", cfg.base.seed, force)};

    BaseWeights base = base_init(cfg.base);
    const std::vector<double> losses = pretrain_masked_lm(base, cfg.pretrain);

    save_base_checkpoint(run.base_prefix(), base);
    std::ostringstream metrics;
    for (std::size_t e = 0; e < losses.size(); ++e) {
        json j;
        j["epoch"] = static_cast<int>(e);
        j["mlm_loss"] = losses[e];
        metrics << j.dump() << "\n";
    }
    write_text(run.metrics(), metrics.str());
    write_text(run.config(), config_to_json(cfg).dump(2) + "\n");
    std::cout << run.dir.string() << "\n";
    return 0;
}

// ---- finetune ------------------------------------------------------------------

int cmd_finetune(ExperimentConfig cfg, bool force) {
    cfg.resolve();
    cfg.validate();
    const fs::path base_prefix = resolve_base_prefix(cfg.base_checkpoint);
    BaseWeights base = load_base_checkpoint(base_prefix);
    if (!base.frozen) throw ConfigError("base checkpoint is not frozen; run pretrain first");
    if (base.config.vocab_size != cfg.base.vocab_size || base.config.d_model != cfg.base.d_model ||
        base.config.n_layers != cfg.base.n_layers || base.config.n_classes != cfg.base.n_classes)
        throw ConfigError("config base dimensions do not match the loaded base checkpoint");

    auto [train_set, eval_set] = make_task(cfg.task);
    RunArtifacts run{prepare_run_dir(cfg, std::string("ft-") + method_name(cfg.train.method),
                                     cfg.train.seed, force)};

    const TrainResult result = train(cfg.train, base, train_set, eval_set);

    write_run_metrics(run, result);
    write_text(run.config(), config_to_json(cfg).dump(2) + "\n");
    save_adapter_checkpoint(run.adapters_prefix(), result.final_layout, result.final_params);
    for (const AdapterSnapshot& snap : result.snapshots) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch%04d", snap.epoch);
        save_adapter_checkpoint(run.dir / "snapshots" / name, snap.layout, snap.params);
    }

    if (result.diverged) {
        std::cerr << "training diverged: " << result.divergence_note << "\n";
        std::cout << run.dir.string() << "\n";
        return 3;
    }

    const std::vector<std::int32_t> pred =
        predict_labels(result.final_layout, base, result.final_params, eval_set,
                       cfg.train.batch_size);
    std::ostringstream pcsv;
    pcsv << "index,predicted,label\n";
    for (int i = 0; i < eval_set.size(); ++i)
        pcsv << i << "," << pred[static_cast<std::size_t>(i)] << ","
             << eval_set.labels[static_cast<std::size_t>(i)] << "\n";
    write_text(run.predictions(), pcsv.str());

    std::cout << run.dir.string() << "\n";
    return 0;
}

// ---- report --------------------------------------------------------------------

void report_sfs(const fs::path& run_dir, std::ostream& out) {
    const auto lines = read_jsonl(run_dir / "sfs_history.jsonl");
    std::size_t max_r = 0;
    for (const json& j : lines)
        for (const json& m : j.at("modules"))
            max_r = std::max(max_r, m.at("singular_values").size());
    out << "epoch,module_id,span_start,span_len,sfs";
    for (std::size_t i = 1; i <= max_r; ++i) out << ",sv" << i;
    out << "\n";
    for (const json& j : lines)
        for (const json& m : j.at("modules")) {
            out << j.at("epoch").get<int>() << "," << m.at("module_id").get<int>() << ","
                << m.at("span_start").get<int>() << "," << m.at("span_len").get<int>() << ","
                << fmt_double(m.at("sfs").get<double>());
            const auto sv = doubles_from_json(m.at("singular_values"));
            for (std::size_t i = 0; i < max_r; ++i)
                out << "," << (i < sv.size() ? fmt_double(sv[i]) : "");
            out << "\n";
        }
}

void report_sv_trajectory(const fs::path& run_dir, int top_m, std::ostream& out) {
    const auto lines = read_jsonl(run_dir / "sfs_history.jsonl");
    std::vector<std::vector<std::vector<double>>> history;
    std::vector<int> epochs;
    for (const json& j : lines) {
        std::vector<std::vector<double>> row;
        for (const json& m : j.at("modules")) row.push_back(doubles_from_json(m.at("singular_values")));
        history.push_back(std::move(row));
        epochs.push_back(j.at("epoch").get<int>());
    }
    const auto points = sv_trajectory(history, top_m);
    out << "epoch,index,mean\n";
    for (const SvTrajectoryPoint& p : points)
        out << epochs[static_cast<std::size_t>(p.epoch)] << "," << p.index << ","
            << fmt_double(p.mean) << "\n";
}

std::vector<EpochRecord> metrics_from_run(const fs::path& run_dir) {
    std::vector<EpochRecord> out;
    for (const json& j : read_jsonl(run_dir / "metrics.jsonl")) {
        EpochRecord r;
        r.epoch = j.at("epoch").get<int>();
        r.train_loss = j.value("train_loss", 0.0);
        r.eval_accuracy = j.value("eval_accuracy", 0.0);
        r.trainable_params = j.value("trainable_params", std::int64_t{0});
        if (j.contains("grad_mean_abs")) r.grad_mean_abs = doubles_from_json(j.at("grad_mean_abs"));
        out.push_back(std::move(r));
    }
    return out;
}

void report_grad_ratio(const fs::path& numer_dir, const fs::path& denom_dir, std::ostream& out) {
    const auto numer = metrics_from_run(numer_dir);
    const auto denom = metrics_from_run(denom_dir);
    for (const auto& recs : {numer, denom})
        for (const EpochRecord& r : recs)
            if (r.grad_mean_abs.empty())
                throw ConfigError(
                    "run has no recorded gradients; re-run with --train.record_grads true");
    const auto table = grad_ratio_table(numer, denom);
    out << "epoch,layer,ratio\n";
    for (std::size_t e = 0; e < table.size(); ++e)
        for (std::size_t t = 0; t < table[e].size(); ++t) {
            out << numer[e].epoch << "," << t << ",";
            if (table[e][t].present) out << fmt_double(table[e][t].value);
            out << "\n";
        }
}

void report_params(const fs::path& run_dir, std::ostream& out) {
    out << "epoch,trainable_params\n";
    for (const EpochRecord& r : metrics_from_run(run_dir))
        out << r.epoch << "," << r.trainable_params << "\n";
}

int cmd_report(const std::string& kind, const std::vector<std::string>& dirs, int top_m,
               const std::string& out_file) {
    std::ostringstream body;
    if (kind == "sfs") {
        if (dirs.size() != 1) throw ConfigError("report --kind sfs takes exactly one run dir");
        report_sfs(dirs[0], body);
    } else if (kind == "sv-trajectory") {
        if (dirs.size() != 1)
            throw ConfigError("report --kind sv-trajectory takes exactly one run dir");
        report_sv_trajectory(dirs[0], top_m, body);
    } else if (kind == "grad-ratio") {
        if (dirs.size() != 2)
            throw ConfigError("report --kind grad-ratio takes two run dirs (numerator, denominator)");
        report_grad_ratio(dirs[0], dirs[1], body);
    } else if (kind == "params") {
        if (dirs.size() != 1) throw ConfigError("report --kind params takes exactly one run dir");
        report_params(dirs[0], body);
    } else {
        throw ConfigError("unknown report kind '" + kind + "'");
    }
    if (out_file.empty())
        std::cout << body.str();
    else
        write_text(out_file, body.str());
    return 0;
}

// ---- grid ----------------------------------------------------------------------

int cmd_grid(ExperimentConfig cfg, bool force, int mmax_hi, int imax_hi, int jobs,
             const std::string& out_file) {
    cfg.resolve();
    cfg.train.method = Method::ImLor2c;
    {
        // the largest cell dictates the minimum epoch budget
        ScheduleConfig probe = cfg.train.schedule;
        probe.m_max = mmax_hi;
        probe.i_max = imax_hi;
        probe.total_epochs = cfg.train.epochs;
        probe.validate();
    }
    cfg.validate();
    const fs::path base_prefix = resolve_base_prefix(cfg.base_checkpoint);
    const BaseWeights base = load_base_checkpoint(base_prefix);
    if (!base.frozen) throw ConfigError("base checkpoint is not frozen; run pretrain first");

    const auto [train_set, eval_set] = make_task(cfg.task);
    RunArtifacts run{prepare_run_dir(cfg, "grid", cfg.train.seed, force)};

    struct Cell {
        int m, i;
        double accuracy = 0.0;
        bool failed = false;
        std::string note;
    };
    std::vector<Cell> cells;
    for (int m = 0; m <= mmax_hi; ++m)
        for (int i = 0; i <= imax_hi; ++i) cells.push_back({m, i, 0.0, false, {}});

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t at = next.fetch_add(1);
            if (at >= cells.size()) return;
            Cell& cell = cells[at];
            TrainConfig tc = cfg.train;
            tc.schedule.m_max = cell.m;
            tc.schedule.i_max = cell.i;
            tc.record_sfs = false;
            tc.record_grads = false;
            tc.record_snapshots = false;
            try {
                const TrainResult r = train(tc, base, train_set, eval_set);
                if (r.diverged) {
                    cell.failed = true;
                    cell.note = r.divergence_note;
                } else {
                    cell.accuracy = r.final_accuracy;
                }
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.note = e.what();
            }
        }
    };
    const int n_jobs = std::max(1, jobs);
    std::vector<std::thread> pool;
    for (int t = 1; t < n_jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::ostringstream csv;
    csv << "m_max,i_max,accuracy\n";
    bool any_failed = false;
    for (const Cell& c : cells) {
        if (c.failed) {
            any_failed = true;
            std::cerr << "cell (" << c.m << "," << c.i << ") failed: " << c.note << "\n";
            csv << c.m << "," << c.i << ",\n";
        } else {
            csv << c.m << "," << c.i << "," << fmt_double(c.accuracy) << "\n";
        }
    }
    write_text(run.dir / "grid.csv", csv.str());
    write_text(run.config(), config_to_json(cfg).dump(2) + "\n");
    if (!out_file.empty()) write_text(out_file, csv.str());
    std::cout << run.dir.string() << "\n";
    return any_failed ? 3 : 0;
}

// ---- option plumbing -------------------------------------------------------------

void add_config_options(CLI::App& sub, ExperimentConfig& cfg) {
    sub.add_option("--config", "path to a JSON experiment config")->type_name("FILE");

    sub.add_option("--base.d_model", cfg.base.d_model);
    sub.add_option("--base.n_layers", cfg.base.n_layers);
    sub.add_option("--base.n_heads", cfg.base.n_heads);
    sub.add_option("--base.d_ff", cfg.base.d_ff);
    sub.add_option("--base.vocab_size", cfg.base.vocab_size);
    sub.add_option("--base.max_seq_len", cfg.base.max_seq_len);
    sub.add_option("--base.n_classes", cfg.base.n_classes);
    sub.add_option("--base.seed", cfg.base.seed);

    sub.add_option_function<std::string>(
        "--task.kind", [&cfg](const std::string& s) { cfg.task.kind = task_kind_from_name(s); });
    sub.add_option("--task.seq_len", cfg.task.seq_len);
    sub.add_option("--task.n_train", cfg.task.n_train);
    sub.add_option("--task.n_eval", cfg.task.n_eval);
    sub.add_option("--task.seed", cfg.task.seed);

    sub.add_option_function<std::string>(
        "--train.method", [&cfg](const std::string& s) { cfg.train.method = method_from_name(s); });
    sub.add_option("--train.rank", cfg.train.rank);
    sub.add_option("--train.lr", cfg.train.lr);
    sub.add_option("--train.batch_size", cfg.train.batch_size);
    sub.add_option("--train.epochs", cfg.train.epochs);
    sub.add_option("--train.seed", cfg.train.seed);
    sub.add_option("--train.weight_decay", cfg.train.weight_decay);
    sub.add_option("--train.lora_alpha", cfg.train.lora_alpha);
    sub.add_option("--train.lor2c_scaling", cfg.train.lor2c_scaling);
    sub.add_option("--train.linear_lr_decay", cfg.train.linear_lr_decay);
    sub.add_option("--train.record_grads", cfg.train.record_grads);
    sub.add_option("--train.record_sfs", cfg.train.record_sfs);
    sub.add_option("--train.record_snapshots", cfg.train.record_snapshots);

    sub.add_option("--schedule.m_max", cfg.train.schedule.m_max);
    sub.add_option("--schedule.i_max", cfg.train.schedule.i_max);
    sub.add_option("--schedule.epsilon", cfg.train.schedule.epsilon);
    sub.add_option_function<std::string>("--schedule.rounding", [&cfg](const std::string& s) {
        cfg.train.schedule.rounding = rounding_from_name(s);
    });
    sub.add_option_function<std::string>("--schedule.inject_policy", [&cfg](const std::string& s) {
        cfg.train.schedule.inject_policy = inject_policy_from_name(s);
    });
    sub.add_option_function<std::string>("--schedule.metric_source", [&cfg](const std::string& s) {
        cfg.train.schedule.metric_source = metric_source_from_name(s);
    });
    sub.add_option("--schedule.sfs_k", cfg.train.schedule.sfs_k);
    sub.add_option("--schedule.max_span", cfg.train.schedule.max_span);

    sub.add_option("--pretrain.epochs", cfg.pretrain.epochs);
    sub.add_option("--pretrain.lr", cfg.pretrain.lr);
    sub.add_option("--pretrain.batch_size", cfg.pretrain.batch_size);
    sub.add_option("--pretrain.mask_prob", cfg.pretrain.mask_prob);
    sub.add_option("--pretrain.corpus_size", cfg.pretrain.corpus_size);
    sub.add_option("--pretrain.seq_len", cfg.pretrain.seq_len);
    sub.add_option("--pretrain.seed", cfg.pretrain.seed);

    sub.add_option("--out_root", cfg.out_root);
    sub.add_option("--base_checkpoint", cfg.base_checkpoint);
}

// Applies the config file (if any) before flag values land on top.
void preload_config(const std::vector<std::string>& args, ExperimentConfig& cfg) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            cfg = load_config_file(args[i + 1]);
            return;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            cfg = load_config_file(args[i].substr(9));
            return;
        }
    }
}

}  // namespace

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full = {"lor2c"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
    CLI::App app{"desk-scale low-rank residual adapter laboratory"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    bool force = false;

    CLI::App* pre = app.add_subcommand("pretrain", "build, pretrain and freeze a base model");
    add_config_options(*pre, cfg);
    pre->add_flag("--force", force, "overwrite an existing run directory");

    CLI::App* ft = app.add_subcommand("finetune", "fine-tune adapters over a frozen base");
    add_config_options(*ft, cfg);
    ft->add_flag("--force", force);
    ft->add_option("--base", cfg.base_checkpoint, "base checkpoint (run dir or prefix)");
    ft->add_option_function<std::string>(
        "--method", [&cfg](const std::string& s) { cfg.train.method = method_from_name(s); });
    ft->add_option("--rank", cfg.train.rank);
    ft->add_option("--mmax", cfg.train.schedule.m_max);
    ft->add_option("--imax", cfg.train.schedule.i_max);
    ft->add_option("--seed", cfg.train.seed);

    CLI::App* rep = app.add_subcommand("report", "emit CSV tables from stored run artifacts");
    std::string kind;
    std::vector<std::string> dirs;
    int top_m = 50;
    std::string out_file;
    rep->add_option("--kind", kind, "sfs | sv-trajectory | grad-ratio | params")->required();
    rep->add_option("dirs", dirs, "run directories")->required();
    rep->add_option("--top", top_m, "rank indices for sv-trajectory");
    rep->add_option("--out", out_file, "write CSV here instead of stdout");

    CLI::App* grid = app.add_subcommand("grid", "sweep m_max x i_max and emit an accuracy grid");
    add_config_options(*grid, cfg);
    grid->add_flag("--force", force);
    grid->add_option("--base", cfg.base_checkpoint);
    int mmax_hi = 3, imax_hi = 3, jobs = 1;
    grid->add_option("--mmax-hi", mmax_hi, "largest merge budget (inclusive)");
    grid->add_option("--imax-hi", imax_hi, "largest inject budget (inclusive)");
    grid->add_option("--jobs", jobs, "parallel training threads");
    std::string grid_out;
    grid->add_option("--out", grid_out, "also write the grid CSV here");

    try {
        std::vector<std::string> rest(argv + 1, argv + argc);
        if (!rest.empty())
            preload_config(std::vector<std::string>(rest.begin() + 1, rest.end()), cfg);
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (pre->parsed()) return cmd_pretrain(cfg, force);
        if (ft->parsed()) return cmd_finetune(cfg, force);
        if (rep->parsed()) return cmd_report(kind, dirs, top_m, out_file);
        if (grid->parsed()) return cmd_grid(cfg, force, mmax_hi, imax_hi, jobs, grid_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

}  // namespace lor2c::cli
