// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "lor2c/errors.hpp"

namespace lor2c {

namespace {

using nlohmann::json;

void append_f32_le(std::string& blob, double value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    blob.push_back(static_cast<char>(bits & 0xff));
    blob.push_back(static_cast<char>((bits >> 8) & 0xff));
    blob.push_back(static_cast<char>((bits >> 16) & 0xff));
    blob.push_back(static_cast<char>((bits >> 24) & 0xff));
}

double read_f32_le(const std::string& blob, std::size_t offset) {
    const std::uint32_t bits = static_cast<std::uint8_t>(blob[offset]) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[offset + 1])) << 8) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[offset + 2])) << 16) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[offset + 3])) << 24);
    return static_cast<double>(std::bit_cast<float>(bits));
}

struct BlobWriter {
    std::string blob;
    json manifest_tensors = json::array();

    void add(const std::string& name, const Tensor& t) {
        const std::int64_t offset = static_cast<std::int64_t>(blob.size());
        for (double v : t.data()) append_f32_le(blob, v);
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["dtype"] = "f32";
        entry["offset"] = offset;
        entry["length"] = static_cast<std::int64_t>(blob.size()) - offset;
        manifest_tensors.push_back(entry);
    }
};

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return contents;
}

void write_checkpoint_files(const std::filesystem::path& prefix, json manifest, BlobWriter&& bw) {
    manifest["tensors"] = std::move(bw.manifest_tensors);
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    write_file(prefix.string() + ".json", manifest.dump(2) + "\n");
    write_file(prefix.string() + ".bin", bw.blob);
}

struct LoadedCheckpoint {
    json manifest;
    std::string blob;

    Tensor tensor(const std::string& name, bool requires_grad) const {
        for (const json& entry : manifest.at("tensors")) {
            if (entry.at("name").get<std::string>() != name) continue;
            const Shape shape = entry.at("shape").get<Shape>();
            const std::int64_t offset = entry.at("offset").get<std::int64_t>();
            const std::int64_t length = entry.at("length").get<std::int64_t>();
            if (entry.at("dtype").get<std::string>() != "f32")
                throw IoError("tensor " + name + ": unsupported dtype");
            if (length != shape_numel(shape) * 4)
                throw IoError("tensor " + name + ": length/shape mismatch in manifest");
            if (offset < 0 || static_cast<std::size_t>(offset + length) > blob.size())
                throw IoError("tensor " + name + ": blob range out of bounds");
            std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
            for (std::size_t i = 0; i < values.size(); ++i)
                values[i] = read_f32_le(blob, static_cast<std::size_t>(offset) + 4 * i);
            return Tensor::from_data(shape, std::move(values), requires_grad);
        }
        throw IoError("tensor " + name + " missing from checkpoint");
    }
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix, const char* expected_kind) {
    LoadedCheckpoint c;
    try {
        c.manifest = json::parse(read_file(prefix.string() + ".json"));
    } catch (const json::exception& e) {
        throw IoError("bad checkpoint manifest " + prefix.string() + ".json: " + e.what());
    }
    if (c.manifest.value("format", "") != "lor2c-checkpoint" ||
        c.manifest.value("kind", "") != expected_kind)
        throw IoError(prefix.string() + ".json is not a lor2c " + expected_kind + " checkpoint");
    c.blob = read_file(prefix.string() + ".bin");
    return c;
}

json layout_to_json(const ModelLayout& layout) {
    json j;
    j["n_layers"] = layout.n_layers();
    j["next_id"] = layout.next_id();
    json mods = json::array();
    for (const AdapterModule& m : layout.modules()) {
        json mj;
        mj["id"] = m.id;
        mj["kind"] = adapter_kind_name(m.kind);
        mj["rank"] = m.rank;
        mj["span_start"] = m.span_start;
        mj["span_len"] = m.span_len;
        mj["scaling"] = m.scaling;
        mods.push_back(mj);
    }
    j["modules"] = mods;
    return j;
}

ModelLayout layout_from_json(const json& j) {
    ModelLayout layout(j.at("n_layers").get<int>());
    for (const json& mj : j.at("modules")) {
        AdapterModule m;
        m.id = mj.at("id").get<int>();
        m.kind = adapter_kind_from_name(mj.at("kind").get<std::string>());
        m.rank = mj.at("rank").get<int>();
        m.span_start = mj.at("span_start").get<int>();
        m.span_len = mj.at("span_len").get<int>();
        m.scaling = mj.at("scaling").get<double>();
        layout.add_module(m);
    }
    return layout;
}

}  // namespace

void save_base_checkpoint(const std::filesystem::path& prefix, const BaseWeights& w) {
    json manifest;
    manifest["format"] = "lor2c-checkpoint";
    manifest["version"] = 1;
    manifest["kind"] = "base";
    manifest["frozen"] = w.frozen;
    json cfg;
    cfg["d_model"] = w.config.d_model;
    cfg["n_layers"] = w.config.n_layers;
    cfg["n_heads"] = w.config.n_heads;
    cfg["d_ff"] = w.config.d_ff;
    cfg["vocab_size"] = w.config.vocab_size;
    cfg["max_seq_len"] = w.config.max_seq_len;
    cfg["n_classes"] = w.config.n_classes;
    cfg["seed"] = w.config.seed;
    manifest["base_config"] = cfg;

    BlobWriter bw;
    for (const auto& [name, tensor] : w.named_tensors()) bw.add(name, tensor);
    write_checkpoint_files(prefix, std::move(manifest), std::move(bw));
}

BaseWeights load_base_checkpoint(const std::filesystem::path& prefix) {
    const LoadedCheckpoint c = load_checkpoint(prefix, "base");
    const json& cfg = c.manifest.at("base_config");
    BaseConfig base_cfg;
    base_cfg.d_model = cfg.at("d_model").get<int>();
    base_cfg.n_layers = cfg.at("n_layers").get<int>();
    base_cfg.n_heads = cfg.at("n_heads").get<int>();
    base_cfg.d_ff = cfg.at("d_ff").get<int>();
    base_cfg.vocab_size = cfg.at("vocab_size").get<int>();
    base_cfg.max_seq_len = cfg.at("max_seq_len").get<int>();
    base_cfg.n_classes = cfg.at("n_classes").get<int>();
    base_cfg.seed = cfg.at("seed").get<std::uint64_t>();
    base_cfg.validate();

    const bool frozen = c.manifest.at("frozen").get<bool>();
    const bool trainable = !frozen;

    BaseWeights w;
    w.config = base_cfg;
    w.embedding = c.tensor("embedding", trainable);
    for (int t = 0; t < base_cfg.n_layers; ++t) {
        const std::string p = "layer" + std::to_string(t) + ".";
        LayerWeights l;
        l.wq = c.tensor(p + "wq", trainable);
        l.wk = c.tensor(p + "wk", trainable);
        l.wv = c.tensor(p + "wv", trainable);
        l.wo = c.tensor(p + "wo", trainable);
        l.w1 = c.tensor(p + "w1", trainable);
        l.b1 = c.tensor(p + "b1", trainable);
        l.w2 = c.tensor(p + "w2", trainable);
        l.b2 = c.tensor(p + "b2", trainable);
        l.ln1_gamma = c.tensor(p + "ln1_gamma", trainable);
        l.ln1_beta = c.tensor(p + "ln1_beta", trainable);
        l.ln2_gamma = c.tensor(p + "ln2_gamma", trainable);
        l.ln2_beta = c.tensor(p + "ln2_beta", trainable);
        w.layers.push_back(std::move(l));
    }
    w.head = c.tensor("head", trainable);
    w.frozen = frozen;
    return w;
}

void save_adapter_checkpoint(const std::filesystem::path& prefix, const ModelLayout& layout,
                             const AdapterParams& params) {
    layout.validate();
    json manifest;
    manifest["format"] = "lor2c-checkpoint";
    manifest["version"] = 1;
    manifest["kind"] = "adapters";
    manifest["layout"] = layout_to_json(layout);

    BlobWriter bw;
    bool shared_written = false;
    for (const AdapterModule& m : layout.modules()) {
        const std::string p = "module" + std::to_string(m.id) + ".";
        if (m.kind == AdapterKind::Lor2c) {
            const Lor2cParams& lp = params.lor2c(m.id);
            bw.add(p + "a", lp.a);
            bw.add(p + "b", lp.b);
        } else if (m.kind == AdapterKind::SharedLor2c) {
            const Lor2cParams& lp = params.lor2c(m.id);
            if (!shared_written) {
                bw.add("shared.a", lp.a);
                shared_written = true;
            }
            bw.add(p + "b", lp.b);
        } else if (m.kind == AdapterKind::LoraQv) {
            const LoraQvParams& lp = params.lora(m.id);
            bw.add(p + "a_q", lp.a_q);
            bw.add(p + "b_q", lp.b_q);
            bw.add(p + "a_v", lp.a_v);
            bw.add(p + "b_v", lp.b_v);
        }
    }
    write_checkpoint_files(prefix, std::move(manifest), std::move(bw));
}

std::pair<ModelLayout, AdapterParams> load_adapter_checkpoint(const std::filesystem::path& prefix) {
    const LoadedCheckpoint c = load_checkpoint(prefix, "adapters");
    ModelLayout layout = layout_from_json(c.manifest.at("layout"));
    layout.validate();

    AdapterParams params;
    Tensor shared;
    for (const AdapterModule& m : layout.modules()) {
        const std::string p = "module" + std::to_string(m.id) + ".";
        if (m.kind == AdapterKind::Lor2c) {
            params.set_lor2c(m.id, {c.tensor(p + "a", true), c.tensor(p + "b", true)});
        } else if (m.kind == AdapterKind::SharedLor2c) {
            if (!shared.defined()) shared = c.tensor("shared.a", true);
            params.set_lor2c(m.id, {shared, c.tensor(p + "b", true)});
        } else if (m.kind == AdapterKind::LoraQv) {
            params.set_lora(m.id, {c.tensor(p + "a_q", true), c.tensor(p + "b_q", true),
                                   c.tensor(p + "a_v", true), c.tensor(p + "b_v", true)});
        }
    }
    return {std::move(layout), std::move(params)};
}

}  // namespace lor2c
