// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bprune/calibration.h"
#include "bprune/checkpoint.h"
#include "bprune/dataset.h"
#include "bprune/eval.h"
#include "bprune/gates.h"
#include "bprune/materialize.h"
#include "bprune/model.h"
#include "bprune/pretrain.h"
#include "bprune/projection.h"
#include "bprune/registry.h"
#include "json.hpp"
#include "run_manifest.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bprune;
using bprune::cli::RunManifest;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kInvariant = 2, kNumerical = 3 };

struct GlobalFlags {
    std::uint64_t seed = 0;
    std::optional<std::string> ratio;
    std::string rank = "p";
    std::string scan = "skip";
    std::string target = "both";
    std::string cost_scale = "1";
    std::optional<int> epochs;
    std::optional<double> lr;
    double tau = 1.5;
    int snapshot_interval = 0;
    std::optional<std::string> preset;
    double gumbel_scale = 1.0;
    std::optional<std::string> manifest;
};

struct DataFlags {
    std::string corpus = "data/corpus.txt";
    DataConfig config;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
    cmd->add_option("--corpus", d.corpus, "Plain-bytes corpus")->capture_default_str();
    cmd->add_option("--window", d.config.window, "Tokens per window")->capture_default_str();
    cmd->add_option("--calib-windows", d.config.calib_windows, "Calibration windows sampled from the training split")
        ->capture_default_str();
    cmd->add_option("--heldout-windows", d.config.heldout_windows, "Held-out windows (0 = all)")->capture_default_str();
    cmd->add_option("--data-seed", d.config.data_seed, "Seed for calibration window offsets")->capture_default_str();
    cmd->add_option("--train-fraction", d.config.train_fraction, "Leading fraction of the corpus used for training")
        ->capture_default_str();
}

json data_json(const DataFlags& d) {
    return {{"corpus", d.corpus},
            {"window", d.config.window},
            {"calib_windows", d.config.calib_windows},
            {"heldout_windows", d.config.heldout_windows},
            {"data_seed", d.config.data_seed},
            {"train_fraction", d.config.train_fraction}};
}

json global_json(const GlobalFlags& g) {
    json j{{"seed", g.seed},   {"rank", g.rank}, {"scan", g.scan},
           {"target", g.target}, {"cost_scale", g.cost_scale}, {"tau", g.tau},
           {"snapshot_interval", g.snapshot_interval}, {"gumbel_scale", g.gumbel_scale}};
    j["ratio"] = g.ratio ? json(*g.ratio) : json(nullptr);
    j["epochs"] = g.epochs ? json(*g.epochs) : json(nullptr);
    j["lr"] = g.lr ? json(*g.lr) : json(nullptr);
    j["config_preset"] = g.preset ? json(*g.preset) : json(nullptr);
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open '" + path.string() + "'");
    return json::parse(is);
}

Rational require_ratio(const GlobalFlags& g) {
    if (!g.ratio) throw UsageError("--ratio is required for this command");
    return Rational::parse(*g.ratio);
}

GateConfig gate_config(const GlobalFlags& g) {
    GateConfig gc;
    gc.tau = g.tau;
    gc.adam.lr = g.lr.value_or(1e-2);
    gc.epochs = g.epochs.value_or(4);
    gc.snapshot_interval = g.snapshot_interval;
    gc.rule.variant = parse_ranking(g.rank);
    gc.rule.gumbel_scale = g.gumbel_scale;
    gc.scan = parse_scan(g.scan);
    gc.seed = g.seed;
    return gc;
}

Checkpoint load_unpruned(const fs::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.pruning) throw UsageError("'" + path.string() + "' already carries pruning metadata; pass the backbone");
    return ckpt;
}

struct PruneOutcome {
    Mask mask;
    Selection retained;
    RegistryBuild build;
    std::optional<GateResult> gates;
};

PruneOutcome run_prune(const Checkpoint& backbone, const GlobalFlags& g, const TokenDataset& calib,
                       const GateConfig& gc) {
    BudgetSpec spec;
    spec.keep_ratio = require_ratio(g);
    spec.cost_scale = Rational::parse(g.cost_scale);
    spec.target_filter = parse_target(g.target);
    PruneOutcome out{{}, {}, build_registry(backbone.config, spec), std::nullopt};
    if (out.build.budget.keep_ratio == Rational(1)) {
        // The full budget keeps every unit; nothing to learn.
        out.mask.assign(out.build.registry.size(), 1);
    } else {
        const Weights<float> w = Weights<float>::from_checkpoint(backbone);
        out.gates = train_gates(w, out.build.registry, out.build.budget, calib, gc, [](const GateStep& s) {
            if (s.step % 256 == 0) std::fprintf(stderr, "step %d loss %.4f\n", s.step, s.loss);
        });
        out.mask = out.gates->final_mask.keep;
    }
    out.retained = selection_from_mask(out.mask, out.build.registry);
    return out;
}

int cmd_pretrain(const GlobalFlags& g, const DataFlags& d, int steps, const std::string& out, const std::string& log,
                 RunManifest& manifest) {
    const ModelConfig cfg = preset(g.preset.value_or("toy"));
    if (cfg.vocab_size != 256) throw UsageError("pretraining on a byte corpus needs a 256-token vocabulary");
    const std::vector<int> tokens = load_corpus(d.corpus);
    const CorpusSplit split = split_corpus(tokens, d.config.train_fraction);
    PretrainConfig pc;
    pc.steps = steps;
    pc.lr = g.lr.value_or(pc.lr);
    pc.seed = g.seed;
    pc.window = d.config.window;
    PretrainResult r = pretrain_backbone(cfg, split.train, pc, [](int step, double loss) {
        if (step % 200 == 0) std::fprintf(stderr, "step %d loss %.4f\n", step, loss);
    });
    const TokenDataset held = TokenDataset::sequential(split.heldout, d.config.window, d.config.heldout_windows);
    const double held_loss = mean_loss(Weights<float>::from_checkpoint(r.checkpoint), nullptr, held);
    save_checkpoint(r.checkpoint, out);
    json j{{"config", cfg}, {"pretrain", pc}, {"loss", r.losses}, {"heldout_loss", held_loss}};
    write_json(log, j);
    manifest.add_input(d.corpus);
    manifest.add_output(out);
    manifest.add_output(log);
    manifest.set_result({{"heldout_loss", held_loss}, {"final_train_loss", r.losses.empty() ? 0.0 : r.losses.back()}});
    std::printf("held-out loss %.4f\n", held_loss);
    return kOk;
}

int cmd_prune(const GlobalFlags& g, const DataFlags& d, const std::string& ckpt_path, const std::string& out,
              const std::string& log, RunManifest& manifest) {
    const Checkpoint backbone = load_unpruned(ckpt_path);
    const DataSplits data = make_splits(load_corpus(d.corpus), d.config);
    const GateConfig gc = gate_config(g);
    const PruneOutcome r = run_prune(backbone, g, data.calibration, gc);

    Checkpoint pruned = backbone;
    PruningMetadata meta;
    meta.keep_ratio = r.build.budget.keep_ratio.str();
    meta.retained = r.retained;
    meta.folded = false;
    meta.run = {{"stage", "prune"}, {"flags", global_json(g)}, {"gates", gc}, {"data", data_json(d)}};
    pruned.pruning = std::move(meta);
    save_checkpoint(pruned, out);

    const RegistryBuild& b = r.build;
    json j;
    j["budget"] = {{"keep_ratio", b.budget.keep_ratio.str()},
                   {"total_cost", b.budget.total_cost.str()},
                   {"budget", b.budget.budget.str()},
                   {"alpha", alpha(backbone.config).str()}};
    j["consumed_cost"] = mask_cost(r.mask, b.registry).str();
    j["retention"] = retention_report(r.mask, b.registry);
    j["final_mask"] = r.mask;
    if (r.gates) {
        j["training"] = r.gates->log(b.registry, b.budget);
        j["final_p"] = r.gates->state.probabilities();
    } else {
        j["training"] = {{"steps", 0}, {"note", "keep ratio 1 keeps every unit"}};
    }
    write_json(log, j);
    manifest.add_input(ckpt_path);
    manifest.add_input(d.corpus);
    manifest.add_output(out);
    manifest.add_output(log);
    manifest.set_result({{"consumed_cost", j["consumed_cost"]}, {"budget", b.budget.budget.str()}});
    const RetentionReport rep = retention_report(r.mask, b.registry);
    std::printf("kept cost %s of budget %s; ffn %.4f kv %.4f retained\n", mask_cost(r.mask, b.registry).str().c_str(),
                b.budget.budget.str().c_str(), rep.ffn_ratio, rep.kv_ratio);
    return kOk;
}

int cmd_calibrate(const GlobalFlags& g, const DataFlags& d, const std::string& ckpt_path, const std::string& out,
                  const std::string& log, RunManifest& manifest) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::optional<Selection> pending = ckpt.pending_selection();
    if (!pending) throw UsageError("calibrate needs a pruned, unfolded checkpoint (run prune first)");
    const DataSplits data = make_splits(load_corpus(d.corpus), d.config);
    const Weights<float> w = Weights<float>::from_checkpoint(ckpt);
    CalibrationConfig cc;
    cc.adam.lr = g.lr.value_or(1e-2);
    cc.epochs = g.epochs.value_or(1);
    cc.seed = g.seed;
    const ScaleState s = calibrate_scales(w, *pending, data.calibration, cc);
    const GateHooks<float> pre = GateHooks<float>::from_selection(w.config, *pending);
    const GateHooks<float> post = s.hooks(w.config);
    const double held_pre = mean_loss(w, &pre, data.heldout);
    const double held_post = mean_loss(w, &post, data.heldout);

    ckpt.pruning->gamma_ffn = s.ffn_f32();
    ckpt.pruning->gamma_kv = s.kv_f32();
    ckpt.pruning->run["calibration"] = {{"config", cc}, {"flags", global_json(g)}, {"data", data_json(d)}};
    save_checkpoint(ckpt, out);

    json anomalies = json::array();
    for (const auto& a : s.anomalies) {
        anomalies.push_back({{"layer", a.layer}, {"kind", a.kv ? "kv" : "ffn"}, {"index", a.local_index}, {"gamma", a.gamma}});
    }
    json j{{"trainable", s.trainable()},        {"steps", s.steps},           {"loss", s.losses},
           {"calibration_loss_before", s.initial_loss}, {"calibration_loss_after", s.final_loss},
           {"reverted", s.reverted},            {"heldout_loss_before", held_pre}, {"heldout_loss_after", held_post},
           {"anomalies", anomalies}};
    write_json(log, j);
    manifest.add_input(ckpt_path);
    manifest.add_input(d.corpus);
    manifest.add_output(out);
    manifest.add_output(log);
    manifest.set_result({{"heldout_loss_before", held_pre}, {"heldout_loss_after", held_post}, {"reverted", s.reverted}});
    std::printf("held-out loss %.4f -> %.4f (%zu scales, %zu anomalies%s)\n", held_pre, held_post, s.trainable(),
                s.anomalies.size(), s.reverted ? ", reverted" : "");
    return kOk;
}

int cmd_materialize(const std::string& ckpt_path, const std::string& out, int probes, double tolerance,
                    std::uint64_t seed, RunManifest& manifest) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::optional<Selection> pending = ckpt.pending_selection();
    if (!pending) throw UsageError("materialize needs a pruned, unfolded checkpoint");
    const SlicePlan plan = SlicePlan::from_selection(ckpt.config, *pending);
    const auto& meta = *ckpt.pruning;
    const LayerScales* gf = meta.gamma_ffn ? &*meta.gamma_ffn : nullptr;
    const LayerScales* gk = meta.gamma_kv ? &*meta.gamma_kv : nullptr;
    json run = meta.run;
    run["materialize"] = {{"probes", probes}, {"tolerance", tolerance}, {"seed", seed}};
    Checkpoint base = ckpt;
    base.pruning.reset();
    const Checkpoint small = materialize(base, plan, gf, gk, meta.keep_ratio, run);
    const EquivalenceReport rep = verify_equivalence(base, plan, gf, gk, small, probes, tolerance, seed);
    manifest.add_input(ckpt_path);
    manifest.set_result({{"equivalence", rep},
                         {"params_before", param_count(ckpt.config)},
                         {"params_after", small.tensor_param_count()}});
    std::printf("params %lld -> %lld; max abs logit deviation over %d probes: f32 %.3g (rel %.3g) %s, f64 %.3g %s\n",
                static_cast<long long>(param_count(ckpt.config)), static_cast<long long>(small.tensor_param_count()),
                rep.probes, rep.max_abs, rep.max_rel, rep.pass ? "pass" : "over tolerance", rep.max_abs_f64,
                rep.pass_f64 ? "pass" : "FAIL");
    if (!rep.pass_f64) throw InvariantError("materialized checkpoint deviates from the masked model beyond tolerance");
    if (!rep.pass) {
        std::fprintf(stderr,
                     "warning: f32 deviation %.3g exceeds %.3g; the f64 check isolates folding and passed, so the "
                     "excess is f32 rounding in the two forwards\n",
                     rep.max_abs, tolerance);
    }
    save_checkpoint(small, out);
    manifest.add_output(out);
    return kOk;
}

int cmd_eval(const DataFlags& d, const std::string& ckpt_path, RunManifest& manifest) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const DataSplits data = make_splits(load_corpus(d.corpus), d.config);
    const LoadedModel<float> m = LoadedModel<float>::from_checkpoint(ckpt);
    const double loss = mean_loss(m.weights, m.hooks_ptr(), data.heldout);
    const json j{{"heldout_loss", loss}, {"perplexity", std::exp(loss)}, {"windows", data.heldout.size()},
                 {"params", ckpt.tensor_param_count()}};
    manifest.add_input(ckpt_path);
    manifest.add_input(d.corpus);
    manifest.set_result(j);
    std::printf("%s\n", j.dump(2).c_str());
    return kOk;
}

int cmd_estimate_memory(const GlobalFlags& g, const std::string& ckpt_path, const std::vector<std::int64_t>& seqs,
                        std::int64_t batch, std::int64_t bytes, bool as_json, RunManifest& manifest) {
    if (g.preset && !ckpt_path.empty()) throw UsageError("pass either --config-preset or --ckpt, not both");
    if (!g.preset && ckpt_path.empty()) throw UsageError("estimate-memory needs --config-preset or --ckpt");
    ModelConfig cfg;
    std::optional<Selection> retained;
    if (g.preset) {
        cfg = preset(*g.preset);
    } else {
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        cfg = ckpt.config;
        retained = ckpt.pruning ? std::optional<Selection>(ckpt.pruning->retained) : std::nullopt;
        manifest.add_input(ckpt_path);
    }
    json rows = json::array();
    for (const std::int64_t t : seqs) {
        const MemoryEstimate m = estimate_memory(cfg, retained, t, batch, bytes);
        rows.push_back(m);
        if (!as_json) {
            std::printf("T=%lld batch=%lld bytes=%lld: weights %.1f MiB, KV cache %.1f MiB\n", static_cast<long long>(t),
                        static_cast<long long>(batch), static_cast<long long>(bytes), m.weights_mib, m.kv_cache_mib);
        }
    }
    if (as_json) std::printf("%s\n", rows.dump(2).c_str());
    manifest.set_result(rows);
    return kOk;
}

int cmd_report(const std::string& ckpt_path, const std::string& log_path, const fs::path& out_dir,
               RunManifest& manifest) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (!ckpt.pruning) throw UsageError("report needs a pruned checkpoint");
    fs::create_directories(out_dir);
    const RetentionReport rep = retention_report(ckpt.config, ckpt.pruning->retained);
    write_json(out_dir / "retention.json", rep);
    write_text(out_dir / "retention.csv", rep.csv());
    manifest.add_input(ckpt_path);
    manifest.add_output(out_dir / "retention.json");
    manifest.add_output(out_dir / "retention.csv");

    json summary{{"retention", rep}};
    std::vector<std::int64_t> seqs{256, 512, 1024, 2048};
    json mem = json::array();
    for (const auto t : seqs) mem.push_back(estimate_memory(ckpt.config, ckpt.pruning->retained, t, 1, 2));
    summary["memory_bf16_batch1"] = mem;

    if (!log_path.empty()) {
        const json log = read_json(log_path);
        manifest.add_input(log_path);
        if (log.contains("final_p")) {
            const auto p = log.at("final_p").get<std::vector<double>>();
            const auto& run = ckpt.pruning->run;
            const json flags = run.value("flags", json::object());
            BudgetSpec spec;
            spec.keep_ratio = Rational::parse(ckpt.pruning->keep_ratio);
            spec.cost_scale = Rational::parse(flags.value("cost_scale", std::string("1")));
            spec.target_filter = parse_target(flags.value("target", std::string("both")));
            const RegistryBuild b = build_registry(ckpt.config, spec);
            const auto rows = selection_bias_report(p, b.registry, b.budget);
            summary["selection_bias"] = allocation_json(rows);
            write_text(out_dir / "selection_bias.csv", allocation_csv(rows));
            manifest.add_output(out_dir / "selection_bias.csv");
        }
        if (log.contains("training") && log["training"].contains("stability")) {
            const json& st = log["training"]["stability"];
            const json& steps = log["training"]["snapshot_steps"];
            std::ostringstream os;
            os << "step,kind,stability\n";
            for (const auto& [kind, series] : st.items()) {
                for (std::size_t i = 0; i < series.size(); ++i) {
                    os << steps.at(i + 1).get<int>() << ',' << kind << ',' << series[i].get<double>() << '\n';
                }
            }
            write_text(out_dir / "stability.csv", os.str());
            manifest.add_output(out_dir / "stability.csv");
        }
        if (log.contains("training") && log["training"].contains("loss")) {
            std::ostringstream os;
            os << "step,loss\n";
            const json& loss = log["training"]["loss"];
            for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << loss[i].get<double>() << '\n';
            write_text(out_dir / "loss.csv", os.str());
            manifest.add_output(out_dir / "loss.csv");
        }
    }
    write_json(out_dir / "report.json", summary);
    manifest.add_output(out_dir / "report.json");
    std::printf("ffn retained %.4f, kv retained %.4f; report in %s\n", rep.ffn_ratio, rep.kv_ratio,
                out_dir.string().c_str());
    return kOk;
}

int cmd_ablate(const GlobalFlags& g, const DataFlags& d, const std::string& ckpt_path, const std::string& sweep,
               std::vector<std::string> values, const fs::path& out_dir, RunManifest& manifest) {
    const Checkpoint backbone = load_unpruned(ckpt_path);
    const DataSplits data = make_splits(load_corpus(d.corpus), d.config);
    const Weights<float> w = Weights<float>::from_checkpoint(backbone);

    std::string axis = sweep;
    if (axis.empty()) {
        // Baseline against the variant named by the global flags.
        if (g.rank != "p") {
            axis = "rank", values = {"p", g.rank};
        } else if (g.target != "both") {
            axis = "target", values = {"both", g.target};
        } else if (g.cost_scale != "1") {
            axis = "cost-scale", values = {"1", g.cost_scale};
        } else {
            throw UsageError("ablate needs --sweep or a non-default --rank, --target or --cost-scale");
        }
    }
    if (axis != "rank" && axis != "target" && axis != "cost-scale") {
        throw UsageError("--sweep must be rank, target or cost-scale");
    }
    if (values.empty()) throw UsageError("--values is required with --sweep");

    json rows = json::array();
    std::ostringstream csv;
    csv << axis << ",heldout_loss,ffn_ratio,kv_ratio,consumed_cost,budget\n";
    for (const auto& v : values) {
        GlobalFlags run = g;
        if (axis == "rank") run.rank = v;
        if (axis == "target") run.target = v;
        if (axis == "cost-scale") run.cost_scale = v;
        std::fprintf(stderr, "ablate %s=%s\n", axis.c_str(), v.c_str());
        const PruneOutcome r = run_prune(backbone, run, data.calibration, gate_config(run));
        const GateHooks<float> hooks = hooks_from_mask(w, r.mask, r.build.registry);
        const double loss = mean_loss(w, &hooks, data.heldout);
        const RetentionReport rep = retention_report(r.mask, r.build.registry);
        const std::string cost = mask_cost(r.mask, r.build.registry).str();
        rows.push_back({{axis, v},
                        {"heldout_loss", loss},
                        {"ffn_ratio", rep.ffn_ratio},
                        {"kv_ratio", rep.kv_ratio},
                        {"consumed_cost", cost},
                        {"budget", r.build.budget.budget.str()}});
        csv << v << ',' << loss << ',' << rep.ffn_ratio << ',' << rep.kv_ratio << ',' << cost << ','
            << r.build.budget.budget.str() << '\n';
        std::printf("%s=%s: held-out loss %.4f (ffn %.4f, kv %.4f)\n", axis.c_str(), v.c_str(), loss, rep.ffn_ratio,
                    rep.kv_ratio);
    }
    fs::create_directories(out_dir);
    write_json(out_dir / "ablation.json", rows);
    write_text(out_dir / "ablation.csv", csv.str());
    manifest.add_input(ckpt_path);
    manifest.add_input(d.corpus);
    manifest.add_output(out_dir / "ablation.json");
    manifest.add_output(out_dir / "ablation.csv");
    manifest.set_result(rows);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Budgeted structured pruning for small LLaMA-style models"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalFlags g;
    app.add_option("--seed", g.seed, "Run seed")->capture_default_str();
    app.add_option("--ratio", g.ratio, "Keep ratio rho in (0, 1], exact decimal or fraction");
    app.add_option("--rank", g.rank, "Ranking rule")->check(CLI::IsMember({"p", "p-over-c", "gumbel"}))->capture_default_str();
    app.add_option("--scan", g.scan, "Scan rule")->check(CLI::IsMember({"skip", "halt"}))->capture_default_str();
    app.add_option("--target", g.target, "Prunable unit kinds")->check(CLI::IsMember({"both", "ffn", "kv"}))->capture_default_str();
    app.add_option("--cost-scale", g.cost_scale, "Multiplier on the KV-group cost")->capture_default_str();
    app.add_option("--epochs", g.epochs, "Epochs (gate learning default 4, calibration 1)");
    app.add_option("--lr", g.lr, "Learning rate (pretrain 3e-3, gates and scales 1e-2)");
    app.add_option("--tau", g.tau, "Gate temperature")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--snapshot-interval", g.snapshot_interval, "Mask snapshot interval (0 = automatic)")
        ->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--config-preset", g.preset, "Model config preset: " + [] {
        std::string s;
        for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
        return s;
    }());
    app.add_option("--gumbel-scale", g.gumbel_scale, "Gumbel noise scale")->capture_default_str();
    app.add_option("--manifest", g.manifest, "Run manifest path");

    DataFlags d;
    std::string ckpt, out, log;

    auto* pretrain = app.add_subcommand("pretrain", "Train a byte-level backbone");
    int steps = 2000;
    add_data_flags(pretrain, d);
    pretrain->add_option("--steps", steps, "Optimizer steps")->check(CLI::NonNegativeNumber)->capture_default_str();
    pretrain->add_option("--out", out, "Output checkpoint")->required();
    pretrain->add_option("--log", log, "Training log (default: <out>.log.json)");

    auto* prune = app.add_subcommand("prune", "Learn a budget-feasible mask");
    add_data_flags(prune, d);
    prune->add_option("--ckpt", ckpt, "Backbone checkpoint")->required()->check(CLI::ExistingFile);
    prune->add_option("--out", out, "Output checkpoint with pruning metadata")->required();
    prune->add_option("--log", log, "Training log (default: <out>.log.json)");

    auto* calibrate = app.add_subcommand("calibrate", "Learn per-unit scales for a pruned checkpoint");
    add_data_flags(calibrate, d);
    calibrate->add_option("--ckpt", ckpt, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--out", out, "Output checkpoint")->required();
    calibrate->add_option("--log", log, "Calibration log (default: <out>.log.json)");

    auto* materialize_cmd = app.add_subcommand("materialize", "Slice and fold into a smaller dense checkpoint");
    int probes = 16;
    double tolerance = 1e-5;
    materialize_cmd->add_option("--ckpt", ckpt, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
    materialize_cmd->add_option("--out", out, "Output checkpoint")->required();
    materialize_cmd->add_option("--probes", probes, "Random probe sequences")->check(CLI::PositiveNumber)->capture_default_str();
    materialize_cmd->add_option("--tolerance", tolerance, "Max abs logit deviation")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Held-out loss and perplexity");
    add_data_flags(eval, d);
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

    auto* memory = app.add_subcommand("estimate-memory", "Weights and KV-cache memory");
    std::vector<std::int64_t> seqs{256};
    std::int64_t batch = 1, bytes = 2;
    bool as_json = false;
    memory->add_option("--ckpt", ckpt, "Checkpoint (pruned structure is honoured)")->check(CLI::ExistingFile);
    memory->add_option("--seq", seqs, "Sequence length(s)")->check(CLI::PositiveNumber)->capture_default_str();
    memory->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    memory->add_option("--bytes", bytes, "Bytes per scalar")->check(CLI::PositiveNumber)->capture_default_str();
    memory->add_flag("--json", as_json, "Print JSON");

    auto* report = app.add_subcommand("report", "Retention, allocation and stability reports");
    std::string out_dir = "report";
    report->add_option("--ckpt", ckpt, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
    report->add_option("--log", log, "Prune log for allocation and stability tables")->check(CLI::ExistingFile);
    report->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate", "Compare ranking rules, targets or cost scales");
    std::string sweep;
    std::vector<std::string> values;
    add_data_flags(ablate, d);
    ablate->add_option("--ckpt", ckpt, "Backbone checkpoint")->required()->check(CLI::ExistingFile);
    ablate->add_option("--sweep", sweep, "Axis: rank, target or cost-scale");
    ablate->add_option("--values", values, "Values along the axis");
    ablate->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    const CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (log.empty() && !out.empty() && (cmd == pretrain || cmd == prune || cmd == calibrate)) log = out + ".log.json";
    std::string manifest_path;
    if (g.manifest) {
        manifest_path = *g.manifest;
    } else if (cmd == report || cmd == ablate) {
        manifest_path = (fs::path(out_dir) / "manifest.json").string();
    } else if (!out.empty()) {
        manifest_path = out + ".manifest.json";
    } else {
        manifest_path = "bprune-" + name + ".manifest.json";
    }
    RunManifest manifest(name, std::vector<std::string>(argv, argv + argc));
    manifest.set_seed(g.seed);
    json flags = global_json(g);
    flags["command"] = name;
    flags["data"] = data_json(d);
    manifest.set_flags(flags);

    try {
        int rc = kOk;
        if (cmd == pretrain) rc = cmd_pretrain(g, d, steps, out, log, manifest);
        if (cmd == prune) rc = cmd_prune(g, d, ckpt, out, log, manifest);
        if (cmd == calibrate) rc = cmd_calibrate(g, d, ckpt, out, log, manifest);
        if (cmd == materialize_cmd) rc = cmd_materialize(ckpt, out, probes, tolerance, g.seed, manifest);
        if (cmd == eval) rc = cmd_eval(d, ckpt, manifest);
        if (cmd == memory) rc = cmd_estimate_memory(g, ckpt, seqs, batch, bytes, as_json, manifest);
        if (cmd == report) rc = cmd_report(ckpt, log, out_dir, manifest);
        if (cmd == ablate) rc = cmd_ablate(g, d, ckpt, sweep, values, out_dir, manifest);
        manifest.write(manifest_path);
        return rc;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n\n" << cmd->help();
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
}
