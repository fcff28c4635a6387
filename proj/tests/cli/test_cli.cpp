#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "scp/binio.hpp"
#include "scp/checkpoint.hpp"
#include "scp/data_io.hpp"
#include "scp/snnl.hpp"
#include "scp/tensor.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("scp_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string read_or_empty(const fs::path& p) {
    std::ifstream in(p);
    if (!in) return {};
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RunResult run_cli(const std::string& args, const std::string& env = "") {
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + SCP_CLI_PATH + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_or_empty(out);
    r.err = read_or_empty(err);
    return r;
}

nlohmann::json read_json(const fs::path& p) {
    return nlohmann::json::parse(scp::binio::read_file(p.string()));
}

// tiny dataset + model fixture shared across cases
struct Fixture {
    fs::path data_dir;
    fs::path model;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture fx;
        fx.data_dir = work_dir() / "fixture_data";
        fx.model = work_dir() / "fixture_model.scp";
        RunResult r = run_cli("gen-data --n 96 --classes 2 --height 8 --width 8 --rho 0.9 "
                              "--noise 0.3 --seed 5 --out " +
                              fx.data_dir.string());
        REQUIRE(r.exit_code == 0);
        r = run_cli("train --data " + fx.data_dir.string() + " --epochs 2 --lr 0.1 --batch 16 "
                    "--seed 5 --out " + fx.model.string());
        REQUIRE(r.exit_code == 0);
        return fx;
    }();
    return f;
}

} // namespace

TEST_CASE("gen-data writes datasets and a manifest recording the config") {
    const fs::path dir = work_dir() / "gen1";
    const RunResult r = run_cli("gen-data --rho 1.0 --classes 2 --n 200 --seed 7 --out " +
                                dir.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "train.scd"));
    CHECK(fs::exists(dir / "eval.scd"));
    const auto manifest = read_json(dir / "manifest.json");
    CHECK(manifest.at("config").at("rho").get<double>() == 1.0);
    CHECK(manifest.at("seed").get<std::uint64_t>() == 7);
}

TEST_CASE("gen-data rejects an out-of-range rho with exit 2 naming the flag") {
    const RunResult r = run_cli("gen-data --rho 1.5 --out " + (work_dir() / "gen_bad").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("--rho") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical across reruns") {
    const fs::path a = work_dir() / "gen_a";
    const fs::path b = work_dir() / "gen_b";
    CHECK(run_cli("gen-data --rho 0.5 --n 64 --seed 3 --out " + a.string()).exit_code == 0);
    CHECK(run_cli("gen-data --rho 0.5 --n 64 --seed 3 --out " + b.string()).exit_code == 0);
    CHECK(scp::binio::read_file((a / "train.scd").string()) ==
          scp::binio::read_file((b / "train.scd").string()));
    CHECK(scp::binio::read_file((a / "eval.scd").string()) ==
          scp::binio::read_file((b / "eval.scd").string()));

    // rerunning into the same directory reproduces every output byte,
    // including the manifest
    const std::string train_bytes = scp::binio::read_file((a / "train.scd").string());
    const std::string manifest_bytes = scp::binio::read_file((a / "manifest.json").string());
    CHECK(run_cli("gen-data --rho 0.5 --n 64 --seed 3 --out " + a.string()).exit_code == 0);
    CHECK(scp::binio::read_file((a / "train.scd").string()) == train_bytes);
    CHECK(scp::binio::read_file((a / "manifest.json").string()) == manifest_bytes);
}

TEST_CASE("SCP_SEED env var overrides --seed") {
    const fs::path dir = work_dir() / "gen_env";
    const RunResult r =
        run_cli("gen-data --n 64 --seed 7 --out " + dir.string(), "SCP_SEED=9");
    CHECK(r.exit_code == 0);
    CHECK(read_json(dir / "manifest.json").at("seed").get<std::uint64_t>() == 9);
}

TEST_CASE("train records eval F1 in the manifest and reruns bit-identically") {
    const Fixture& fx = fixture();
    const auto manifest = read_json(fs::path(fx.model.string() + ".manifest.json"));
    CHECK(manifest.at("results").contains("eval_f1"));

    const fs::path model2 = work_dir() / "fixture_model_rerun.scp";
    const RunResult r = run_cli("train --data " + fx.data_dir.string() +
                                " --epochs 2 --lr 0.1 --batch 16 --seed 5 --out " +
                                model2.string());
    CHECK(r.exit_code == 0);
    CHECK(scp::binio::read_file(fx.model.string()) == scp::binio::read_file(model2.string()));
    const auto manifest2 = read_json(fs::path(model2.string() + ".manifest.json"));
    CHECK(manifest.at("results") == manifest2.at("results"));
}

TEST_CASE("train with a missing dataset path exits 2") {
    const RunResult r = run_cli("train --data " + (work_dir() / "nope").string() + " --out " +
                                (work_dir() / "m.scp").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("score-channels rejects --model together with --fmap") {
    const Fixture& fx = fixture();
    const fs::path fmap = work_dir() / "dummy.fmap";
    scp::save_feature_maps(fmap.string(), scp::Tensor({2, 1, 1, 1}, {0.0f, 1.0f}), {0, 1});
    const RunResult r = run_cli("score-channels --model " + fx.model.string() + " --fmap " +
                                fmap.string() + " --out " + (work_dir() / "s.csv").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("score-channels on the 2-sample scalar FMAP matches snnl_batch") {
    const fs::path fmap = work_dir() / "scalar.fmap";
    scp::save_feature_maps(fmap.string(), scp::Tensor({2, 1, 1, 1}, {0.0f, 1.0f}), {0, 1});
    const fs::path csv = work_dir() / "scalar_scores.csv";
    const RunResult r = run_cli("score-channels --fmap " + fmap.string() + " --temp 1 --batch 2 "
                                "--seed 1 --out " + csv.string());
    REQUIRE(r.exit_code == 0);
    const double want = scp::snnl_batch(scp::Tensor({2, 1, 1}, {0.0f, 1.0f}), {0, 1}, 1.0);
    const std::string got = scp::binio::read_file(csv.string());
    char buf[64];
    std::snprintf(buf, sizeof(buf), "channel,score\n0,%.9g\n", want);
    CHECK(got == buf);
}

TEST_CASE("score-channels on a single-group FMAP yields all-zero scores") {
    const fs::path fmap = work_dir() / "onegroup.fmap";
    scp::save_feature_maps(fmap.string(),
                           scp::Tensor({4, 2, 1, 1}, {0.f, 1.f, 2.f, 3.f, 4.f, 5.f, 6.f, 7.f}),
                           {1, 1, 1, 1});
    const fs::path csv = work_dir() / "onegroup_scores.csv";
    const RunResult r = run_cli("score-channels --fmap " + fmap.string() + " --batch 4 --out " +
                                csv.string());
    REQUIRE(r.exit_code == 0);
    CHECK(scp::binio::read_file(csv.string()) == "channel,score\n0,0\n1,0\n");
}

TEST_CASE("score-channels reports a corrupt FMAP as a format error (exit 3)") {
    const fs::path fmap = work_dir() / "corrupt.fmap";
    scp::binio::write_file(fmap.string(), "NOPE....");
    const RunResult r = run_cli("score-channels --fmap " + fmap.string() + " --out " +
                                (work_dir() / "x.csv").string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("prune removes the requested channels") {
    const Fixture& fx = fixture();
    const fs::path out = work_dir() / "pruned.scp";
    const RunResult r = run_cli("prune --model " + fx.model.string() + " --channels 2,5 --out " +
                                out.string());
    REQUIRE(r.exit_code == 0);
    const auto loaded = scp::load_model(out.string());
    CHECK(loaded.model.channels_at(2) == 14);
    CHECK(loaded.meta.at("pruned_channels") == nlohmann::json({2, 5}));
}

TEST_CASE("run-recipe writes a trace, ablation CSV, final model, and manifest") {
    const Fixture& fx = fixture();
    const fs::path out = work_dir() / "recipe1";
    const RunResult r = run_cli("run-recipe --model " + fx.model.string() + " --data " +
                                fx.data_dir.string() +
                                " --prc 10 --max-iters 2 --epochs 1 --batch 16 --seed 5 --out " +
                                out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out / "final.scp"));
    CHECK(fs::exists(out / "trace.jsonl"));
    CHECK(fs::exists(out / "ablation.csv"));
    const auto manifest = read_json(out / "manifest.json");
    const std::string reason = manifest.at("results").at("stop_reason").get<std::string>();
    CHECK((reason == "accuracy_drop" || reason == "fairness_plateau" || reason == "max_iters" ||
           reason == "channel_floor"));
    // last trace line is the summary record
    const std::string jsonl = scp::binio::read_file((out / "trace.jsonl").string());
    CHECK(jsonl.find("\"summary\":true") != std::string::npos);
}

TEST_CASE("run-recipe rejects --prc 0 with exit 2") {
    const Fixture& fx = fixture();
    const RunResult r = run_cli("run-recipe --model " + fx.model.string() + " --data " +
                                fx.data_dir.string() + " --prc 0 --out " +
                                (work_dir() / "recipe_bad").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("run-recipe sweep produces one trace per configuration") {
    const Fixture& fx = fixture();
    const fs::path out = work_dir() / "sweep";
    const RunResult r = run_cli("run-recipe --model " + fx.model.string() + " --data " +
                                fx.data_dir.string() +
                                " --sweep prc=5,10 --max-iters 1 --epochs 0 --batch 16 --out " +
                                out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out / "prc_5" / "ablation.csv"));
    CHECK(fs::exists(out / "prc_10" / "ablation.csv"));
    CHECK(fs::exists(out / "prc_5" / "manifest.json"));
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("eval-fairness: identical group behavior gives zero gaps and zero FATE vs itself") {
    const fs::path preds = work_dir() / "sym.csv";
    scp::binio::write_file(preds.string(),
                           "pred,label,group\n0,0,0\n1,1,0\n0,1,0\n0,0,1\n1,1,1\n0,1,1\n");
    const fs::path base = work_dir() / "sym_metrics";
    RunResult r = run_cli("eval-fairness --preds " + preds.string() + " --name sym --out " +
                          base.string());
    REQUIRE(r.exit_code == 0);
    auto metrics = read_json(fs::path(base.string() + ".json"));
    CHECK(metrics.at("eopp0").get<double>() == 0.0);
    CHECK(metrics.at("eopp1").get<double>() == 0.0);
    CHECK(metrics.at("eodd").get<double>() == 0.0);

    // FATE against itself: gaps are zero, so use the metrics-mode with itself
    // as its own baseline on a nonzero-gap file instead
    const fs::path m = work_dir() / "self.json";
    scp::binio::write_file(m.string(),
                           "{\"name\":\"self\",\"f1_avg\":0.51,\"eopp0\":0.0013,"
                           "\"eopp1\":0.361,\"eodd\":0.182}\n");
    const fs::path out2 = work_dir() / "self_metrics";
    r = run_cli("eval-fairness --metrics " + m.string() + " --baseline " + m.string() +
                " --out " + out2.string());
    REQUIRE(r.exit_code == 0);
    auto fate = read_json(fs::path(out2.string() + ".json"));
    CHECK(fate.at("fate_eopp0").get<double>() == 0.0);
    CHECK(fate.at("fate_eopp1").get<double>() == 0.0);
    CHECK(fate.at("fate_eodd").get<double>() == 0.0);
}

TEST_CASE("eval-fairness reproduces the published FATE from metric files") {
    const fs::path base = work_dir() / "baseline.json";
    scp::binio::write_file(base.string(),
                           "{\"name\":\"vanilla\",\"f1_avg\":0.510,\"eopp0\":0.0013,"
                           "\"eopp1\":0.361,\"eodd\":0.182}\n");
    const fs::path model = work_dir() / "mitigated.json";
    scp::binio::write_file(model.string(),
                           "{\"name\":\"pruned\",\"f1_avg\":0.520,\"eopp0\":0.0012,"
                           "\"eopp1\":0.278,\"eodd\":0.139}\n");
    const fs::path out = work_dir() / "fate_metrics";
    const RunResult r = run_cli("eval-fairness --metrics " + model.string() + " --baseline " +
                                base.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    const auto j = read_json(fs::path(out.string() + ".json"));
    CHECK(std::abs(j.at("fate_eodd").get<double>() - 0.2559) <= 0.005);
    CHECK(std::abs(j.at("fate_eopp1").get<double>() - 0.2495) <= 0.005);
}

TEST_CASE("eval-fairness computes the hand-example gaps from a predictions file") {
    // group0: class-1 TPR 0.8 / FPR 0.1; group1: TPR 0.6 / FPR 0.3 (10+10 per group)
    std::string csv = "pred,label,group\n";
    auto rows = [&csv](int pred, int label, int group, int count) {
        for (int i = 0; i < count; ++i) {
            csv += std::to_string(pred) + "," + std::to_string(label) + "," +
                   std::to_string(group) + "\n";
        }
    };
    rows(1, 1, 0, 8);
    rows(0, 1, 0, 2);
    rows(1, 0, 0, 1);
    rows(0, 0, 0, 9);
    rows(1, 1, 1, 6);
    rows(0, 1, 1, 4);
    rows(1, 0, 1, 3);
    rows(0, 0, 1, 7);
    const fs::path preds = work_dir() / "hand.csv";
    scp::binio::write_file(preds.string(), csv);
    const fs::path out = work_dir() / "hand_metrics";
    const RunResult r = run_cli("eval-fairness --preds " + preds.string() + " --out " +
                                out.string());
    REQUIRE(r.exit_code == 0);
    const auto j = read_json(fs::path(out.string() + ".json"));
    CHECK(j.at("eopp1").get<double>() == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(j.at("eodd").get<double>() == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("eval-fairness exits 3 on a malformed predictions file") {
    const fs::path preds = work_dir() / "malformed.csv";
    scp::binio::write_file(preds.string(), "wrong,header,here\n1,1,0\n");
    const RunResult r = run_cli("eval-fairness --preds " + preds.string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("report pretty-prints a metrics file with FATE columns") {
    const fs::path base = work_dir() / "rep_base.json";
    scp::binio::write_file(base.string(),
                           "{\"name\":\"vanilla\",\"f1_avg\":0.510,\"eopp0\":0.0013,"
                           "\"eopp1\":0.361,\"eodd\":0.182}\n");
    const fs::path model = work_dir() / "rep_model.json";
    scp::binio::write_file(model.string(),
                           "{\"name\":\"pruned\",\"f1_avg\":0.520,\"eopp0\":0.0012,"
                           "\"eopp1\":0.278,\"eodd\":0.139}\n");
    const RunResult r = run_cli("report --metrics " + model.string() + " --baseline " +
                                base.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("FATE") != std::string::npos);
    CHECK(r.out.find("Eodd") != std::string::npos);
}

TEST_CASE("unknown flags exit 2") {
    const RunResult r = run_cli("gen-data --definitely-not-a-flag 1 --out x");
    CHECK(r.exit_code == 2);
}
