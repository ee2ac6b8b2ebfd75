// SPDX-License-Identifier: Apache-2.0
#include "bprune/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "bprune/errors.h"

namespace bprune {

namespace {

constexpr char kMagic[8] = {'B', 'P', 'R', 'U', 'N', 'E', 'C', 'K'};
constexpr std::size_t kAlign = 64;

std::uint64_t to_le64(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
    return v;
}

void write_f32_le(std::ostream& os, std::span<const float> data) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    } else {
        for (const float f : data) {
            const std::uint32_t u = __builtin_bswap32(std::bit_cast<std::uint32_t>(f));
            os.write(reinterpret_cast<const char*>(&u), sizeof(u));
        }
    }
}

void read_f32_le(std::istream& is, std::span<float> out) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : out) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    }
}

}  // namespace

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("checkpoint: missing tensor '" + name + "'");
    return it->second;
}

Tensor<float>& Checkpoint::tensor(const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("checkpoint: missing tensor '" + name + "'");
    return it->second;
}

std::string Checkpoint::layer_name(int layer, const char* leaf) {
    return "model.layers." + std::to_string(layer) + "." + leaf;
}

Selection Checkpoint::structure() const {
    if (pruning && pruning->folded) return pruning->retained;
    return full_selection(config);
}

std::optional<Selection> Checkpoint::pending_selection() const {
    if (pruning && !pruning->folded) return pruning->retained;
    return std::nullopt;
}

std::int64_t Checkpoint::tensor_param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors) n += static_cast<std::int64_t>(t.size());
    return n;
}

void Checkpoint::validate() const {
    config.validate();
    const Selection sel = structure();
    validate_selection(config, sel);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto dh = static_cast<std::size_t>(config.head_dim);
    const auto g = static_cast<std::size_t>(config.group_size());
    const auto vocab = static_cast<std::size_t>(config.vocab_size);
    const auto expect = [&](const std::string& name, const Shape& shape) {
        const Tensor<float>& t = tensor(name);
        if (t.shape() != shape) {
            throw ShapeError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                             shape_str(shape));
        }
    };
    expect(tensor_names::embed, {vocab, d});
    expect(tensor_names::final_norm, {d});
    expect(tensor_names::lm_head, {vocab, d});
    std::size_t expected_count = 3;
    for (int l = 0; l < config.n_layers; ++l) {
        const std::size_t kv = sel[l].kv.size();
        const std::size_t ffn = sel[l].ffn.size();
        if (kv == 0 || ffn == 0) {
            throw InvariantError("checkpoint: layer " + std::to_string(l) + " has an empty unit group");
        }
        expect(layer_name(l, tensor_names::attn_norm), {d});
        expect(layer_name(l, tensor_names::ffn_norm), {d});
        expect(layer_name(l, tensor_names::q_proj), {kv * g * dh, d});
        expect(layer_name(l, tensor_names::k_proj), {kv * dh, d});
        expect(layer_name(l, tensor_names::v_proj), {kv * dh, d});
        expect(layer_name(l, tensor_names::o_proj), {d, kv * g * dh});
        expect(layer_name(l, tensor_names::gate_proj), {ffn, d});
        expect(layer_name(l, tensor_names::up_proj), {ffn, d});
        expect(layer_name(l, tensor_names::down_proj), {d, ffn});
        expected_count += 9;
    }
    if (tensors.size() != expected_count) {
        throw ShapeError("checkpoint: expected " + std::to_string(expected_count) + " tensors, found " +
                         std::to_string(tensors.size()));
    }
    if (pruning && pruning->gamma_ffn) {
        if (pruning->gamma_ffn->size() != sel.size() || !pruning->gamma_kv || pruning->gamma_kv->size() != sel.size()) {
            throw ShapeError("checkpoint: scale vectors do not cover every layer");
        }
        for (std::size_t l = 0; l < sel.size(); ++l) {
            if ((*pruning->gamma_ffn)[l].size() != pruning->retained[l].ffn.size() ||
                (*pruning->gamma_kv)[l].size() != pruning->retained[l].kv.size()) {
                throw ShapeError("checkpoint: scale vector length does not match retained units in layer " +
                                 std::to_string(l));
            }
        }
    }
}

void to_json(nlohmann::json& j, const PruningMetadata& m) {
    j = nlohmann::json{{"keep_ratio", m.keep_ratio}, {"retained", m.retained}, {"folded", m.folded}, {"run", m.run}};
    if (m.gamma_ffn) j["gamma_ffn"] = *m.gamma_ffn;
    if (m.gamma_kv) j["gamma_kv"] = *m.gamma_kv;
}

void from_json(const nlohmann::json& j, PruningMetadata& m) {
    j.at("keep_ratio").get_to(m.keep_ratio);
    j.at("retained").get_to(m.retained);
    j.at("folded").get_to(m.folded);
    m.run = j.value("run", nlohmann::json::object());
    if (j.contains("gamma_ffn")) m.gamma_ffn = j.at("gamma_ffn").get<std::vector<std::vector<float>>>();
    if (j.contains("gamma_kv")) m.gamma_kv = j.at("gamma_kv").get<std::vector<std::vector<float>>>();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    ckpt.validate();
    nlohmann::json manifest;
    manifest["format"] = "bprune-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "f32-le";
    manifest["config"] = ckpt.config;
    manifest["pruning"] = ckpt.pruning ? nlohmann::json(*ckpt.pruning) : nlohmann::json(nullptr);
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const std::uint64_t nbytes = t.size() * sizeof(float);
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    manifest["tensors"] = std::move(entries);
    const std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = to_le64(text.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::size_t header = sizeof(kMagic) + sizeof(len) + text.size();
    const std::size_t pad = (kAlign - header % kAlign) % kAlign;
    const std::string zeros(pad, '\0');
    os.write(zeros.data(), static_cast<std::streamsize>(pad));
    for (const auto& [name, t] : ckpt.tensors) write_f32_le(os, t.data());
    if (!os) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw UsageError("'" + path.string() + "' is not a checkpoint container");
    }
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    len = to_le64(len);
    if (!is || len > (1ULL << 32)) throw UsageError("checkpoint manifest length is corrupt");
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    const nlohmann::json manifest = nlohmann::json::parse(text);
    if (manifest.value("format", "") != "bprune-checkpoint" || manifest.value("dtype", "") != "f32-le") {
        throw UsageError("unsupported checkpoint format in '" + path.string() + "'");
    }
    const std::size_t header = sizeof(kMagic) + sizeof(len) + len;
    const std::uint64_t blob_start = header + (kAlign - header % kAlign) % kAlign;

    Checkpoint ckpt;
    ckpt.config = manifest.at("config").get<ModelConfig>();
    if (!manifest.at("pruning").is_null()) ckpt.pruning = manifest.at("pruning").get<PruningMetadata>();
    for (const auto& e : manifest.at("tensors")) {
        Shape shape = e.at("shape").get<Shape>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto nbytes = e.at("nbytes").get<std::uint64_t>();
        if (nbytes != shape_numel(shape) * sizeof(float)) throw UsageError("checkpoint: inconsistent tensor size");
        Tensor<float> t(std::move(shape));
        is.seekg(static_cast<std::streamoff>(blob_start + offset));
        read_f32_le(is, t.data());
        if (!is) throw UsageError("checkpoint: truncated tensor data for '" + e.at("name").get<std::string>() + "'");
        ckpt.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    ckpt.validate();
    return ckpt;
}

}  // namespace bprune
