#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "gazeseq/error.hpp"
#include "gazeseq/image_io.hpp"
#include "gazeseq/models.hpp"

namespace gazeseq {

/// Sidecar metadata stored as checkpoint.json next to the parameter blob.
struct CheckpointMeta {
    ModelVariant variant;
    ModelDims dims;
    int epoch = 0;
    double val_mae_mean_deg = 0.0;
    std::uint64_t seed = 0;
    std::int64_t param_count = 0;
    std::string dataset_root;
    std::uint64_t dataset_seed = 0;
    std::string dataset_hash;  ///< manifest_hash of the training corpus, hex
    std::string parent;  ///< stage-1 run directory for temporal models
};

inline nlohmann::json to_json(const ModelDims& d) {
    return {{"in_channels", d.in_channels},     {"stem_channels", d.stem_channels},
            {"stage_channels", d.stage_channels}, {"stage_strides", d.stage_strides},
            {"blocks_per_stage", d.blocks_per_stage}, {"pool", {d.pool_h, d.pool_w}},
            {"lstm_hidden", d.lstm_hidden},       {"fc_hidden", d.fc_hidden},
            {"static2_hidden", d.static2_hidden}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
    ModelDims d;
    d.in_channels = j.at("in_channels").get<int>();
    d.stem_channels = j.at("stem_channels").get<int>();
    d.stage_channels = j.at("stage_channels").get<std::array<int, 3>>();
    d.stage_strides = j.at("stage_strides").get<std::array<int, 3>>();
    d.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    const auto pool = j.at("pool").get<std::array<int, 2>>();
    d.pool_h = pool[0];
    d.pool_w = pool[1];
    d.lstm_hidden = j.at("lstm_hidden").get<int>();
    d.fc_hidden = j.at("fc_hidden").get<int>();
    d.static2_hidden = j.at("static2_hidden").get<int>();
    return d;
}

inline nlohmann::json to_json(const CheckpointMeta& m) {
    return {{"variant", std::string(to_string(m.variant.kind))},
            {"window", m.variant.window},
            {"epoch", m.epoch},
            {"val_mae_mean_deg", m.val_mae_mean_deg},
            {"seed", m.seed},
            {"param_count", m.param_count},
            {"input_normalization", "pixels/255, no standardization"},
            {"dataset_root", m.dataset_root},
            {"dataset_seed", m.dataset_seed},
            {"dataset_hash", m.dataset_hash},
            {"parent", m.parent},
            {"dims", to_json(m.dims)}};
}

inline CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j) {
    try {
        CheckpointMeta m;
        m.variant = {parse_model_kind(j.at("variant").get<std::string>()), j.at("window").get<int>()};
        m.dims = dims_from_json(j.at("dims"));
        m.epoch = j.at("epoch").get<int>();
        m.val_mae_mean_deg = j.at("val_mae_mean_deg").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.param_count = j.at("param_count").get<std::int64_t>();
        m.dataset_root = j.value("dataset_root", "");
        m.dataset_seed = j.value("dataset_seed", std::uint64_t{0});
        m.dataset_hash = j.value("dataset_hash", "");
        m.parent = j.value("parent", "");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
    }
}

namespace checkpoint_files {
inline std::filesystem::path blob(const std::filesystem::path& dir) { return dir / "checkpoint.bin"; }
inline std::filesystem::path meta(const std::filesystem::path& dir) { return dir / "checkpoint.json"; }
}  // namespace checkpoint_files

inline constexpr char kCheckpointMagic[8] = {'G', 'Z', 'S', 'Q', 'C', 'K', 'P', 'T'};

/// Blob layout (little endian): magic[8], u32 version, u32 count, then per
/// tensor: u32 name length, name bytes, u32 rows, u32 cols, u8 trainable,
/// rows*cols float32 values.
template <typename T>
std::string encode_parameters(const nn::ParameterList<T>& params) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto put_u32 = [&out](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        put_u32(static_cast<std::uint32_t>(p->name.size()));
        out += p->name;
        put_u32(static_cast<std::uint32_t>(p->value.rows()));
        put_u32(static_cast<std::uint32_t>(p->value.cols()));
        out.push_back(p->trainable ? 1 : 0);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const float v = static_cast<float>(p->value.data()[i]);
            out.append(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
    return out;
}

struct StoredTensor {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    bool trainable = true;
    std::vector<float> values;
};

inline std::map<std::string, StoredTensor> decode_parameters(const std::string& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw DataError("truncated checkpoint blob");
    };
    auto get_u32 = [&] {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    };
    need(sizeof(kCheckpointMagic));
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw DataError("not a checkpoint blob");
    }
    pos = sizeof(kCheckpointMagic);
    if (get_u32() != 1) throw DataError("unsupported checkpoint version");
    const std::uint32_t count = get_u32();
    std::map<std::string, StoredTensor> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t len = get_u32();
        need(len);
        std::string name = bytes.substr(pos, len);
        pos += len;
        StoredTensor t;
        t.rows = get_u32();
        t.cols = get_u32();
        need(1);
        t.trainable = bytes[pos++] != 0;
        const auto n = static_cast<std::size_t>(t.rows * t.cols);
        need(n * sizeof(float));
        t.values.resize(n);
        std::memcpy(t.values.data(), bytes.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

template <typename T>
void load_parameters_into(const std::map<std::string, StoredTensor>& stored, const nn::ParameterList<T>& params) {
    for (auto* p : params) {
        const auto it = stored.find(p->name);
        if (it == stored.end()) throw DataError("checkpoint lacks tensor '" + p->name + "'");
        if (it->second.rows != p->value.rows() || it->second.cols != p->value.cols()) {
            throw DataError("checkpoint tensor '" + p->name + "' has the wrong shape");
        }
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            p->value.data()[i] = static_cast<T>(it->second.values[static_cast<std::size_t>(i)]);
        }
    }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, GazeModel<T>& model, CheckpointMeta meta) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw PersistenceError("cannot create '" + dir.string() + "': " + ec.message());
    meta.variant = model.variant();
    meta.dims = model.dims();
    meta.param_count = static_cast<std::int64_t>(model.trainable_parameter_count());
    write_file(checkpoint_files::blob(dir), encode_parameters(model.parameters()));
    write_file(checkpoint_files::meta(dir), to_json(meta).dump(2) + "\n");
}

inline CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir) {
    const std::string text = read_file(checkpoint_files::meta(dir));
    try {
        return checkpoint_meta_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
    }
}

template <typename T = float>
GazeModel<T> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta_out = nullptr) {
    const CheckpointMeta meta = load_checkpoint_meta(dir);
    GazeModel<T> model(meta.variant, meta.dims);
    const auto stored = decode_parameters(read_file(checkpoint_files::blob(dir)));
    std::int64_t stored_trainable = 0;
    for (const auto& [name, t] : stored) {
        if (t.trainable) stored_trainable += static_cast<std::int64_t>(t.values.size());
    }
    if (stored_trainable != meta.param_count) throw DataError("checkpoint parameter count does not match metadata");
    load_parameters_into(stored, model.parameters());
    model.zero_grad();
    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace gazeseq
