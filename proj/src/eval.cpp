// SPDX-License-Identifier: Apache-2.0
#include "bprune/eval.h"

#include <cmath>
#include <map>
#include <sstream>

namespace bprune {

double mean_loss(const Weights<float>& weights, const GateHooks<float>* hooks, const TokenDataset& data) {
    if (data.empty()) throw UsageError("evaluation dataset is empty");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += window_loss(weights, data[i], hooks);
    const double mean = total / static_cast<double>(data.size());
    if (!std::isfinite(mean)) throw NumericalError("evaluation: non-finite loss");
    return mean;
}

double perplexity(const Weights<float>& weights, const GateHooks<float>* hooks, const TokenDataset& data) {
    const double ppl = std::exp(mean_loss(weights, hooks, data));
    if (!std::isfinite(ppl)) throw NumericalError("evaluation: perplexity overflow");
    return ppl;
}

double perplexity(const Checkpoint& ckpt, const TokenDataset& data) {
    const LoadedModel<float> m = LoadedModel<float>::from_checkpoint(ckpt);
    return perplexity(m.weights, m.hooks_ptr(), data);
}

namespace {

ModelConfig make_preset(int layers, int d, int ffn, int heads, int kv_heads, int vocab) {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d;
    c.ffn_dim = ffn;
    c.n_heads = heads;
    c.n_kv_heads = kv_heads;
    c.head_dim = d / heads;
    c.vocab_size = vocab;
    return c;
}

const std::map<std::string, ModelConfig>& presets() {
    static const std::map<std::string, ModelConfig> table = {
        {"toy", ModelConfig::toy()},
        {"llama-7b", make_preset(32, 4096, 11008, 32, 32, 32000)},
        {"llama2-7b", make_preset(32, 4096, 11008, 32, 32, 32000)},
        {"vicuna-7b", make_preset(32, 4096, 11008, 32, 32, 32000)},
        {"llama2-13b", make_preset(40, 5120, 13824, 40, 40, 32000)},
        {"llama3.1-8b", make_preset(32, 4096, 14336, 32, 8, 128256)},
        {"qwen3-8b", make_preset(36, 4096, 12288, 32, 8, 151936)},
        {"qwen3-14b", make_preset(40, 5120, 17408, 40, 8, 151936)},
    };
    return table;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [name, cfg] : presets()) out.push_back(name);
    return out;
}

ModelConfig preset(const std::string& name) {
    const auto it = presets().find(name);
    if (it == presets().end()) {
        std::string known;
        for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw UsageError("unknown config preset '" + name + "' (known: " + known + ")");
    }
    return it->second;
}

void to_json(nlohmann::json& j, const MemoryEstimate& m) {
    j = nlohmann::json{{"params", m.params},
                       {"weights_mib", m.weights_mib},
                       {"kv_cache_mib", m.kv_cache_mib},
                       {"seq_len", m.seq_len},
                       {"batch", m.batch},
                       {"bytes_per_scalar", m.bytes_per_scalar},
                       {"kv_groups_per_layer", m.kv_groups_per_layer}};
}

double kv_cache_mib(std::int64_t retained_kv_groups, int head_dim, std::int64_t seq_len, std::int64_t batch,
                    std::int64_t bytes_per_scalar) {
    if (seq_len < 1 || batch < 1 || bytes_per_scalar < 1) {
        throw UsageError("sequence length, batch and bytes per scalar must be at least 1");
    }
    const auto bytes = static_cast<long double>(2) * retained_kv_groups * head_dim * seq_len * batch * bytes_per_scalar;
    return static_cast<double>(bytes / static_cast<long double>(kMiB));
}

MemoryEstimate estimate_memory(const ModelConfig& config, const std::optional<Selection>& retained,
                               std::int64_t seq_len, std::int64_t batch, std::int64_t bytes_per_scalar) {
    config.validate();
    const Selection sel = retained ? *retained : full_selection(config);
    validate_selection(config, sel);
    MemoryEstimate m;
    m.seq_len = seq_len;
    m.batch = batch;
    m.bytes_per_scalar = bytes_per_scalar;
    m.params = param_count(config, sel);
    std::int64_t groups = 0;
    for (const auto& layer : sel) {
        m.kv_groups_per_layer.push_back(static_cast<int>(layer.kv.size()));
        groups += static_cast<std::int64_t>(layer.kv.size());
    }
    m.kv_cache_mib = kv_cache_mib(groups, config.head_dim, seq_len, batch, bytes_per_scalar);
    m.weights_mib = static_cast<double>(static_cast<long double>(m.params) * bytes_per_scalar /
                                        static_cast<long double>(kMiB));
    return m;
}

namespace {

double ratio(std::size_t kept, std::size_t total) {
    return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

}  // namespace

RetentionReport retention_report(const ModelConfig& config, const Selection& retained) {
    validate_selection(config, retained);
    RetentionReport r;
    for (std::size_t l = 0; l < retained.size(); ++l) {
        LayerRetention lr;
        lr.layer = static_cast<int>(l);
        lr.ffn_kept = retained[l].ffn.size();
        lr.ffn_total = static_cast<std::size_t>(config.ffn_dim);
        lr.kv_kept = retained[l].kv.size();
        lr.kv_total = static_cast<std::size_t>(config.n_kv_heads);
        lr.ffn_ratio = ratio(lr.ffn_kept, lr.ffn_total);
        lr.kv_ratio = ratio(lr.kv_kept, lr.kv_total);
        r.ffn_kept += lr.ffn_kept;
        r.ffn_total += lr.ffn_total;
        r.kv_kept += lr.kv_kept;
        r.kv_total += lr.kv_total;
        r.layers.push_back(lr);
    }
    r.ffn_ratio = ratio(r.ffn_kept, r.ffn_total);
    r.kv_ratio = ratio(r.kv_kept, r.kv_total);
    return r;
}

RetentionReport retention_report(std::span<const std::uint8_t> mask, const PrunableRegistry& registry) {
    if (!registry.config()) throw UsageError("retention_report needs a registry built from a model config");
    return retention_report(*registry.config(), selection_from_mask(mask, registry));
}

std::string RetentionReport::csv() const {
    std::ostringstream os;
    os << "layer,kind,kept,total,ratio\n";
    for (const auto& l : layers) {
        os << l.layer << ",ffn," << l.ffn_kept << ',' << l.ffn_total << ',' << l.ffn_ratio << '\n';
        os << l.layer << ",kv," << l.kv_kept << ',' << l.kv_total << ',' << l.kv_ratio << '\n';
    }
    os << "all,ffn," << ffn_kept << ',' << ffn_total << ',' << ffn_ratio << '\n';
    os << "all,kv," << kv_kept << ',' << kv_total << ',' << kv_ratio << '\n';
    return os.str();
}

void to_json(nlohmann::json& j, const RetentionReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"layer", l.layer},
                          {"ffn_kept", l.ffn_kept},
                          {"ffn_total", l.ffn_total},
                          {"ffn_ratio", l.ffn_ratio},
                          {"kv_kept", l.kv_kept},
                          {"kv_total", l.kv_total},
                          {"kv_ratio", l.kv_ratio}});
    }
    j = nlohmann::json{{"ffn_kept", r.ffn_kept}, {"ffn_total", r.ffn_total}, {"ffn_ratio", r.ffn_ratio},
                       {"kv_kept", r.kv_kept},   {"kv_total", r.kv_total},   {"kv_ratio", r.kv_ratio},
                       {"layers", layers}};
}

nlohmann::json allocation_json(const std::vector<RuleAllocation>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json kinds = nlohmann::json::object();
        for (const auto& k : r.kinds) {
            kinds[kind_name(k.kind)] = {{"kept", k.kept},
                                        {"total", k.total},
                                        {"keep_ratio", k.keep_ratio},
                                        {"budget_share", k.budget_share},
                                        {"mean_p", k.mean_p}};
        }
        out.push_back({{"rank", ranking_name(r.variant)}, {"consumed_cost", r.consumed_cost.str()}, {"kinds", kinds}});
    }
    return out;
}

std::string allocation_csv(const std::vector<RuleAllocation>& rows) {
    std::ostringstream os;
    os << "rank,kind,kept,total,keep_ratio,budget_share,mean_p\n";
    for (const auto& r : rows) {
        for (const auto& k : r.kinds) {
            os << ranking_name(r.variant) << ',' << kind_name(k.kind) << ',' << k.kept << ',' << k.total << ','
               << k.keep_ratio << ',' << k.budget_share << ',' << k.mean_p << '\n';
        }
    }
    return os.str();
}

}  // namespace bprune
