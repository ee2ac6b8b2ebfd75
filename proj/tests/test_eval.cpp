// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "bprune/dataset.h"
#include "bprune/eval.h"
#include "doctest.h"
#include "support.h"

using namespace bprune;
using namespace bprune::testing;

TEST_CASE("a model with a zero output head has perplexity 256") {
    Checkpoint ckpt = init_checkpoint(ModelConfig::toy(), 1);
    for (float& v : ckpt.tensor(tensor_names::lm_head).data()) v = 0.0f;
    Rng rng(2);
    std::vector<std::vector<int>> seqs;
    for (int i = 0; i < 4; ++i) seqs.push_back(random_tokens(33, rng));
    const TokenDataset data(32, std::move(seqs));
    CHECK(std::abs(perplexity(ckpt, data) - 256.0) < 1.0);
    CHECK_THROWS(perplexity(ckpt, TokenDataset(32, {})));
}

TEST_CASE("a memorized periodic corpus approaches perplexity 1") {
    std::vector<int> corpus;
    for (int i = 0; i < 4000; ++i) corpus.push_back("abcd"[i % 4]);
    ModelConfig c = ModelConfig::toy();
    c.n_layers = 1;
    PretrainConfig cfg;
    cfg.steps = 150;
    cfg.warmup = 10;
    cfg.window = 32;
    cfg.lr = 1e-2;
    const Checkpoint ckpt = pretrain_backbone(c, corpus, cfg).checkpoint;
    const double ppl = perplexity(ckpt, TokenDataset::sequential(corpus, 32, 8));
    INFO("ppl " << ppl);
    CHECK(ppl < 1.05);
}

TEST_CASE("LLaMA-2-7B memory table, full model") {
    const ModelConfig c = preset("llama2-7b");
    const double expected_kv[] = {512.0, 1024.0, 2048.0, 4096.0};
    const std::int64_t seqs[] = {256, 512, 1024, 2048};
    for (int k = 0; k < 4; ++k) {
        const MemoryEstimate m = estimate_memory(c, std::nullopt, seqs[k], 4, 2);
        CHECK(m.kv_cache_mib == expected_kv[k]);
        CHECK(std::abs(m.weights_mib - 12852.5) <= 0.1);
    }
}

TEST_CASE("LLaMA-2-7B memory table, pruned rows from retained KV groups") {
    const ModelConfig c = preset("llama2-7b");
    const std::int64_t seqs[] = {256, 512, 1024, 2048};
    const double groups_837[] = {418.5, 837.0, 1674.0, 3348.0};
    const double groups_606[] = {303.0, 606.0, 1212.0, 2424.0};
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(kv_cache_mib(837, c.head_dim, seqs[k], 4, 2) - groups_837[k]) < 0.05);
        CHECK(std::abs(kv_cache_mib(606, c.head_dim, seqs[k], 4, 2) - groups_606[k]) < 0.05);
    }
    // The same numbers through a selection with 837 retained groups.
    Selection sel = full_selection(c);
    int to_drop = 32 * 32 - 837;
    for (auto& l : sel) {
        while (to_drop > 0 && l.kv.size() > 6) {
            l.kv.pop_back();
            --to_drop;
        }
    }
    const MemoryEstimate m = estimate_memory(c, sel, 256, 4, 2);
    CHECK(std::abs(m.kv_cache_mib - 418.5) < 0.05);
    CHECK(m.weights_mib < 12852.5);
}

TEST_CASE("KV cache is linear in sequence length and batch; weights are not") {
    const ModelConfig c = preset("qwen3-8b");
    const MemoryEstimate a = estimate_memory(c, std::nullopt, 300, 3, 2);
    const MemoryEstimate b = estimate_memory(c, std::nullopt, 600, 3, 2);
    const MemoryEstimate d = estimate_memory(c, std::nullopt, 300, 6, 2);
    CHECK(b.kv_cache_mib == 2.0 * a.kv_cache_mib);
    CHECK(d.kv_cache_mib == 2.0 * a.kv_cache_mib);
    CHECK(b.weights_mib == a.weights_mib);
    CHECK_THROWS(estimate_memory(c, std::nullopt, 0, 1, 2));
    CHECK_THROWS(estimate_memory(c, std::nullopt, 10, 0, 2));
}

TEST_CASE("presets") {
    const ModelConfig l3 = preset("llama3.1-8b");
    CHECK(l3.n_layers == 32);
    CHECK(l3.n_kv_heads == 8);
    CHECK(l3.group_size() == 4);
    CHECK(preset("toy") == ModelConfig::toy());
    for (const std::string& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
    CHECK_THROWS_AS(preset("gpt-2"), UsageError);
}

TEST_CASE("retention ratios") {
    const ModelConfig toy = ModelConfig::toy();
    const RetentionReport all = retention_report(toy, full_selection(toy));
    CHECK(all.ffn_ratio == 1.0);
    CHECK(all.kv_ratio == 1.0);
    for (const LayerRetention& l : all.layers) {
        CHECK(l.ffn_ratio == 1.0);
        CHECK(l.kv_ratio == 1.0);
    }

    ModelConfig small = toy;
    small.ffn_dim = 10;
    Selection sel = full_selection(small);
    sel[2].ffn = {0, 1, 2, 3, 4, 5, 6, 7};
    const RetentionReport r = retention_report(small, sel);
    CHECK(r.layers[2].ffn_ratio == doctest::Approx(0.8));
    CHECK(r.layers[1].ffn_ratio == 1.0);
    CHECK(r.ffn_kept == 38);
    CHECK(r.ffn_ratio == doctest::Approx(38.0 / 40.0));
    const std::string csv = r.csv();
    CHECK(csv.rfind("layer,kind,kept,total,ratio\n", 0) == 0);
    CHECK(csv.find("2,ffn,8,10,0.8") != std::string::npos);

    const PrunableRegistry reg = PrunableRegistry::from_config(small);
    const RetentionReport via_mask = retention_report(mask_from_selection(sel, reg), reg);
    CHECK(via_mask.ffn_kept == r.ffn_kept);
    CHECK(via_mask.layers[2].ffn_ratio == r.layers[2].ffn_ratio);
}

TEST_CASE("allocation table output") {
    const PrunableRegistry reg = PrunableRegistry::from_config(ModelConfig::toy());
    Rng rng(3);
    std::vector<double> p(reg.size());
    for (double& v : p) v = rng.uniform();
    const auto rows = selection_bias_report(p, reg, make_budget(reg, Rational(4, 5)));
    const std::string csv = allocation_csv(rows);
    CHECK(csv.rfind("rank,kind,kept,total,keep_ratio,budget_share,mean_p\n", 0) == 0);
    const nlohmann::json j = allocation_json(rows);
    CHECK(j.size() == 2);
    double share = 0.0;
    for (const KindAllocation& k : rows[0].kinds) share += k.budget_share;
    CHECK(share == doctest::Approx(1.0));
}
