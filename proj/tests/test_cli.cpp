// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bprune/checkpoint.h"
#include "doctest.h"
#include "json.hpp"
#include "support.h"

using namespace bprune;
using namespace bprune::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::path(backbone_path()).parent_path() / "cli";
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct RunResult {
    int code = -1;
    std::string out;
};

// Runs the CLI with `args` in the work directory, capturing stdout and stderr.
RunResult cli(const std::string& args) {
    const fs::path log = work_dir() / "last_run.txt";
    const std::string cmd =
        "cd '" + work_dir().string() + "' && '" + std::string(BPRUNE_CLI) + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(log);
    std::ostringstream ss;
    ss << is.rdbuf();
    r.out = ss.str();
    return r;
}

std::string data_flags() { return " --corpus '" + corpus_path() + "'"; }

json read_json(const fs::path& p) {
    std::ifstream is(p);
    return json::parse(is);
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("estimate-memory reproduces the LLaMA-2-7B table") {
    const RunResult r = cli("--config-preset llama2-7b estimate-memory --bytes 2 --batch 4 --seq 256 512 1024 2048");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("T=256 batch=4 bytes=2: weights 12852.5 MiB, KV cache 512.0 MiB") != std::string::npos);
    CHECK(r.out.find("KV cache 1024.0 MiB") != std::string::npos);
    CHECK(r.out.find("KV cache 2048.0 MiB") != std::string::npos);
    CHECK(r.out.find("KV cache 4096.0 MiB") != std::string::npos);
    const RunResult j = cli("--config-preset llama2-7b estimate-memory --bytes 2 --batch 4 --seq 256 --json");
    REQUIRE(j.code == 0);
    CHECK(j.out.find("512") != std::string::npos);
}

TEST_CASE("exit codes") {
    CHECK(cli("--no-such-flag estimate-memory").code == 1);
    CHECK(cli("--config-preset nope estimate-memory").code == 1);
    CHECK(cli("--ratio 1.5 prune --ckpt '" + backbone_path() + "' --out bad.ckpt" + data_flags()).code == 1);
    const RunResult infeasible = cli("--ratio 0.05 prune --ckpt '" + backbone_path() + "' --out bad.ckpt" + data_flags());
    CHECK(infeasible.code == 2);
    CHECK(infeasible.out.find("invariant violation") != std::string::npos);
    const RunResult diverged = cli("--lr 1e9 pretrain --steps 30 --window 16 --out diverged.ckpt" + data_flags());
    CHECK(diverged.code == 3);
    CHECK(diverged.out.find("numerical failure") != std::string::npos);
}

TEST_CASE("prune at keep ratio 1 keeps everything and leaves the model untouched") {
    const RunResult r = cli("--ratio 1.0 prune --ckpt '" + backbone_path() + "' --out full.ckpt" + data_flags());
    REQUIRE(r.code == 0);
    const Checkpoint backbone = load_checkpoint(backbone_path());
    const Checkpoint out = load_checkpoint(work_dir() / "full.ckpt");
    CHECK(out.tensors == backbone.tensors);
    REQUIRE(out.pending_selection().has_value());
    CHECK(*out.pending_selection() == full_selection(backbone.config));
}

TEST_CASE("pipeline: prune, calibrate, materialize, eval, report") {
    const std::string common = "--seed 3 --ratio 0.5 --epochs 1";
    const std::string data = data_flags() + " --calib-windows 64 --heldout-windows 24";
    const std::string bb = " --ckpt '" + backbone_path() + "'";
    REQUIRE(cli(common + " prune" + bb + " --out a.ckpt" + data).code == 0);
    REQUIRE(cli(common + " prune" + bb + " --out b.ckpt" + data).code == 0);

    CHECK(file_bytes(work_dir() / "a.ckpt") == file_bytes(work_dir() / "b.ckpt"));
    const json ma = read_json(work_dir() / "a.ckpt.manifest.json");
    const json mb = read_json(work_dir() / "b.ckpt.manifest.json");
    CHECK(ma["seed"] == 3);
    CHECK(ma["flags"]["ratio"] == "0.5");
    CHECK(ma["flags"]["data"]["calib_windows"] == 64);
    bool saw_backbone = false;
    for (const json& in : ma["inputs"]) {
        CHECK(in["sha256"].get<std::string>().size() == 64);
        saw_backbone = saw_backbone || in["path"].get<std::string>().find("backbone.ckpt") != std::string::npos;
    }
    CHECK(saw_backbone);
    const auto digest_of = [](const json& m, const std::string& suffix) {
        for (const json& o : m["outputs"]) {
            const std::string p = o["path"];
            if (p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
                return o["sha256"].get<std::string>();
            }
        }
        return std::string();
    };
    CHECK_FALSE(digest_of(ma, "a.ckpt").empty());
    CHECK(digest_of(ma, "a.ckpt") == digest_of(mb, "b.ckpt"));
    const Checkpoint pruned = load_checkpoint(work_dir() / "a.ckpt");
    REQUIRE(pruned.pruning.has_value());
    CHECK_FALSE(pruned.pruning->folded);
    const json log = read_json(work_dir() / "a.ckpt.log.json");
    const json& training = log["training"];
    CHECK(training["steps"].get<int>() > 0);
    CHECK(training["loss"].size() == training["steps"].get<std::size_t>());
    CHECK(log["budget"]["keep_ratio"] == "1/2");

    REQUIRE(cli("--seed 3 calibrate --ckpt a.ckpt --out a.cal.ckpt" + data).code == 0);
    const Checkpoint cal = load_checkpoint(work_dir() / "a.cal.ckpt");
    REQUIRE(cal.pruning.has_value());
    CHECK(cal.pruning->gamma_ffn.has_value());
    CHECK(cal.pruning->retained == pruned.pruning->retained);

    const RunResult mat = cli("materialize --ckpt a.cal.ckpt --out a.small.ckpt");
    REQUIRE(mat.code == 0);
    CHECK(mat.out.find("f64") != std::string::npos);
    const Checkpoint small = load_checkpoint(work_dir() / "a.small.ckpt");
    REQUIRE(small.pruning.has_value());
    CHECK(small.pruning->folded);
    CHECK(small.tensor_param_count() == param_count(small.config, pruned.pruning->retained));
    CHECK(small.tensor_param_count() < pruned.tensor_param_count());

    const RunResult e_cal = cli("eval --ckpt a.cal.ckpt" + data);
    const RunResult e_small = cli("eval --ckpt a.small.ckpt" + data);
    REQUIRE(e_cal.code == 0);
    REQUIRE(e_small.code == 0);
    CHECK(e_small.out.find("perplexity") != std::string::npos);

    const RunResult mem = cli("estimate-memory --ckpt a.small.ckpt --seq 128");
    CHECK(mem.code == 0);

    REQUIRE(cli("report --ckpt a.ckpt --log a.ckpt.log.json --out-dir report").code == 0);
    for (const char* f : {"retention.json", "retention.csv", "selection_bias.csv", "stability.csv", "loss.csv",
                          "report.json", "manifest.json"}) {
        CHECK_MESSAGE(fs::exists(work_dir() / "report" / f), f);
    }
    const std::string csv = file_bytes(work_dir() / "report" / "retention.csv");
    CHECK(csv.rfind("layer,kind,kept,total,ratio\n", 0) == 0);

    CHECK(cli("materialize --ckpt a.small.ckpt --out twice.ckpt").code != 0);
}

TEST_CASE("ablate: value-per-cost ranking at keep ratio 0.8 is no better than score ranking") {
    const RunResult r = cli("--rank p-over-c --ratio 0.8 ablate --ckpt '" + backbone_path() + "' --out-dir ablate" +
                            data_flags());
    REQUIRE(r.code == 0);
    const json rows = read_json(work_dir() / "ablate" / "ablation.json");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["rank"] == "p");
    CHECK(rows[1]["rank"] == "p-over-c");
    const double by_p = rows[0]["heldout_loss"], by_pc = rows[1]["heldout_loss"];
    INFO("p " << by_p << " p-over-c " << by_pc);
    CHECK(by_pc >= by_p);
}
