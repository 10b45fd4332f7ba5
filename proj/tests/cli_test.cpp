#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "blockmerge/blockmerge.hpp"
#include "test_util.hpp"

using namespace blockmerge;
using testutil::read_file_bytes;
using testutil::TempDir;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(BLOCKMERGE_BIN) + " " + args + " 2>/dev/null";
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, got);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// One shared fixture directory for the whole binary run.
class CliEnv : public ::testing::Environment {
public:
    void SetUp() override {
        dir_ = new TempDir("bm-cli");
        const CliResult r = run_cli("fixture --seed 7 --samples 48 --out-dir " + dir_->root());
        ASSERT_EQ(r.exit_code, 0) << r.out;
    }
    void TearDown() override { delete dir_; }
    static std::string path(const std::string& name) { return dir_->path(name); }
    static std::string root() { return dir_->root(); }

private:
    static inline TempDir* dir_ = nullptr;
};

const auto* const kEnv = ::testing::AddGlobalTestEnvironment(new CliEnv);

std::string write_search_config(const std::string& path, int init, int iters, int pool,
                                std::uint64_t seed, const std::string& segment) {
    nlohmann::json cfg = {
        {"models",
         {{"a", CliEnv::path("a.bt")}, {"b", CliEnv::path("b.bt")}, {"base", CliEnv::path("base.bt")}}},
        {"trace", CliEnv::path("trace.json")},
        {"evaluators",
         {{"a", {{"kind", "builtin"}, {"spec", CliEnv::path("toy.json")}, {"dataset", CliEnv::path("va.bt")}}},
          {"b", {{"kind", "builtin"}, {"spec", CliEnv::path("toy.json")}, {"dataset", CliEnv::path("vb.bt")}}}}},
        {"budget", {{"init", init}, {"iters", iters}, {"pool", pool}}},
        {"seed", seed},
        {"segment", segment}};
    std::ofstream f(path);
    f << cfg.dump(2);
    return path;
}

}  // namespace

TEST(Cli, FixtureWritesAllArtifacts) {
    for (const char* name : {"base.bt", "a.bt", "b.bt", "va.bt", "vb.bt", "trace.json", "toy.json"})
        EXPECT_TRUE(std::filesystem::exists(CliEnv::path(name))) << name;
}

TEST(Cli, LinearWeightOneReproducesModelA) {
    TempDir tmp("bm-cli-merge");
    const CliResult r = run_cli("merge --technique linear --weight 1 --a " + CliEnv::path("a.bt") +
                                " --b " + CliEnv::path("b.bt") + " --out " + tmp.path("m.bt"));
    ASSERT_EQ(r.exit_code, 0);
    EXPECT_EQ(read_file_bytes(tmp.path("m.bt")), read_file_bytes(CliEnv::path("a.bt")));
    const nlohmann::json summary = nlohmann::json::parse(r.out);
    EXPECT_EQ(summary.at("technique"), "linear");
}

TEST(Cli, TiesWithoutBaseIsUsageError) {
    TempDir tmp("bm-cli-err");
    const CliResult r = run_cli("merge --technique ties --a " + CliEnv::path("a.bt") + " --b " +
                                CliEnv::path("b.bt") + " --out " + tmp.path("m.bt"));
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_FALSE(std::filesystem::exists(tmp.path("m.bt")));
}

TEST(Cli, PaperDefaultFlagsAcceptedForDensityTechniques) {
    TempDir tmp("bm-cli-defaults");
    for (const char* tech : {"ties", "dare-linear", "dare-ties"}) {
        const CliResult r = run_cli(std::string("merge --technique ") + tech +
                                    " --weight 0.5 --density 0.65 --a " + CliEnv::path("a.bt") +
                                    " --b " + CliEnv::path("b.bt") + " --base " +
                                    CliEnv::path("base.bt") + " --out " + tmp.path("m.bt"));
        EXPECT_EQ(r.exit_code, 0) << tech;
    }
}

TEST(Cli, MergeEmitsApReportWhenDatasetsGiven) {
    TempDir tmp("bm-cli-apreport");
    const CliResult r = run_cli(
        "merge --technique dare-ties --weight 0.5 --density 0.65 --seed 3 --a " +
        CliEnv::path("a.bt") + " --b " + CliEnv::path("b.bt") + " --base " + CliEnv::path("base.bt") +
        " --out " + tmp.path("m.bt") + " --spec " + CliEnv::path("toy.json") + " --data-a " +
        CliEnv::path("va.bt") + " --data-b " + CliEnv::path("vb.bt"));
    ASSERT_EQ(r.exit_code, 0);
    const nlohmann::json j = nlohmann::json::parse(r.out);
    for (const char* key : {"ap_a", "ap_b", "f", "pd_ap"}) ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_NEAR(j["f"].get<double>(),
                objective_f(j["ap_a"].get<double>(), j["ap_b"].get<double>()), 1e-12);
}

TEST(Cli, SegmentToStdoutIsSingleLineJson) {
    const CliResult r =
        run_cli("segment --model " + CliEnv::path("a.bt") + " --trace " + CliEnv::path("trace.json"));
    ASSERT_EQ(r.exit_code, 0);
    std::size_t newlines = 0;
    for (char c : r.out)
        if (c == '\n') ++newlines;
    EXPECT_EQ(newlines, 1u);
    EXPECT_NO_THROW(partition_from_json(nlohmann::json::parse(r.out)));
}

TEST(Cli, MergeRejectsOutOfRangeHyperparameters) {
    TempDir tmp("bm-cli-range");
    const std::string tail = " --a " + CliEnv::path("a.bt") + " --b " + CliEnv::path("b.bt") +
                             " --base " + CliEnv::path("base.bt") + " --out " + tmp.path("m.bt");
    EXPECT_EQ(run_cli("merge --technique linear --weight 1.5" + tail).exit_code, 1);
    EXPECT_EQ(run_cli("merge --technique ties --density 0" + tail).exit_code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
    TempDir tmp("bm-cli-data");
    {
        std::ofstream f(tmp.path("bad.bt"), std::ios::binary);
        f << "shrt";
    }
    const CliResult r = run_cli("merge --technique linear --a " + tmp.path("bad.bt") + " --b " +
                                CliEnv::path("b.bt") + " --out " + tmp.path("m.bt"));
    EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, EvalPrintsLossJson) {
    const CliResult flags = run_cli("eval --spec " + CliEnv::path("toy.json") + " --model " +
                                    CliEnv::path("a.bt") + " --data " + CliEnv::path("va.bt"));
    ASSERT_EQ(flags.exit_code, 0);
    const nlohmann::json j = nlohmann::json::parse(flags.out);
    ASSERT_TRUE(j.contains("loss"));
    EXPECT_TRUE(j["loss"].is_number());

    // external-evaluator calling convention: positional model + dataset
    const CliResult pos = run_cli("eval --spec " + CliEnv::path("toy.json") + " " +
                                  CliEnv::path("a.bt") + " " + CliEnv::path("va.bt"));
    ASSERT_EQ(pos.exit_code, 0);
    EXPECT_EQ(nlohmann::json::parse(pos.out)["loss"], j["loss"]);
}

TEST(Cli, EvalServesAsExternalEvaluator) {
    TempDir tmp("bm-cli-extself");
    Evaluator e;
    e.kind = Evaluator::Kind::External;
    e.command = std::string(BLOCKMERGE_BIN) + " eval --spec " + CliEnv::path("toy.json");
    e.dataset_path = CliEnv::path("va.bt");
    const double loss = evaluate_loss(e, CliEnv::path("a.bt"), CliEnv::path("va.bt"));
    const ToyModelSpec spec = read_toy_spec(CliEnv::path("toy.json"));
    const TensorMap a = read_checkpoint(CliEnv::path("a.bt"));
    const Dataset va = read_dataset(CliEnv::path("va.bt"));
    EXPECT_NEAR(loss, forward_loss(spec, a, va), 1e-12);
}

TEST(Cli, SegmentEmitsTwoBlockPartition) {
    TempDir tmp("bm-cli-seg");
    const CliResult r = run_cli("segment --model " + CliEnv::path("a.bt") + " --trace " +
                                CliEnv::path("trace.json") + " --out " + tmp.path("p.json"));
    ASSERT_EQ(r.exit_code, 0);
    std::ifstream f(tmp.path("p.json"));
    nlohmann::json j;
    f >> j;
    const BlockPartition p = partition_from_json(j);
    ASSERT_EQ(p.blocks.size(), 2u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Rank4Spatial);
    EXPECT_EQ(p.blocks[1].label, BlockLabel::Rank2Vector);
}

TEST(Cli, SearchWritesRunArtifactsAndReportReadsThem) {
    TempDir tmp("bm-cli-search");
    write_search_config(tmp.path("cfg.json"), 4, 3, 16, 123, "trace");
    const CliResult r =
        run_cli("search --config " + tmp.path("cfg.json") + " --out-dir " + tmp.path("run"));
    ASSERT_EQ(r.exit_code, 0) << r.out;
    for (const char* name : {"merged.bt", "report.json", "history.csv", "recipe.json"})
        EXPECT_TRUE(std::filesystem::exists(tmp.path("run/" + std::string(name)))) << name;
    const nlohmann::json summary = nlohmann::json::parse(r.out);
    EXPECT_EQ(summary.at("trials").get<int>(), 7);

    const CliResult rep = run_cli("report --history " + tmp.path("run/history.csv"));
    ASSERT_EQ(rep.exit_code, 0);
    const nlohmann::json j = nlohmann::json::parse(rep.out);
    EXPECT_EQ(j.at("trials").get<int>(), 7);
    EXPECT_NEAR(j.at("best_f").get<double>(), summary.at("best_f").get<double>(), 1e-12);

    const CliResult curve = run_cli("report --curve --history " + tmp.path("run/history.csv"));
    ASSERT_EQ(curve.exit_code, 0);
    EXPECT_EQ(curve.out.rfind("iteration,best_f", 0), 0u);
}

TEST(Cli, SearchIsByteReproducible) {
    TempDir tmp("bm-cli-repro");
    write_search_config(tmp.path("cfg.json"), 4, 2, 16, 77, "trace");
    const CliResult r1 =
        run_cli("search --config " + tmp.path("cfg.json") + " --out-dir " + tmp.path("r1"));
    const CliResult r2 =
        run_cli("search --config " + tmp.path("cfg.json") + " --out-dir " + tmp.path("r2"));
    ASSERT_EQ(r1.exit_code, 0);
    ASSERT_EQ(r2.exit_code, 0);
    EXPECT_EQ(read_file_bytes(tmp.path("r1/merged.bt")), read_file_bytes(tmp.path("r2/merged.bt")));
    EXPECT_EQ(read_file_bytes(tmp.path("r1/history.csv")),
              read_file_bytes(tmp.path("r2/history.csv")));
}

TEST(Cli, GridEmitsHeatmapCsv) {
    TempDir tmp("bm-cli-grid");
    write_search_config(tmp.path("cfg.json"), 4, 2, 16, 5, "trace");
    const CliResult r = run_cli("grid --technique ties --config " + tmp.path("cfg.json"));
    ASSERT_EQ(r.exit_code, 0);
    std::size_t lines = 0;
    for (char c : r.out)
        if (c == '\n') ++lines;
    EXPECT_EQ(lines, 37u);  // header + 6x6 cells
    EXPECT_EQ(r.out.rfind("weight,density,ap_a,ap_b,f", 0), 0u);
}

TEST(Cli, EvaluatorFailureExitsThree) {
    TempDir tmp("bm-cli-evalfail");
    nlohmann::json cfg = {
        {"models",
         {{"a", CliEnv::path("a.bt")}, {"b", CliEnv::path("b.bt")}, {"base", CliEnv::path("base.bt")}}},
        {"trace", CliEnv::path("trace.json")},
        {"evaluators",
         {{"a", {{"kind", "external"}, {"command", "false"}, {"dataset", CliEnv::path("va.bt")}}},
          {"b", {{"kind", "builtin"}, {"spec", CliEnv::path("toy.json")}, {"dataset", CliEnv::path("vb.bt")}}}}},
        {"budget", {{"init", 2}, {"iters", 1}, {"pool", 8}}},
        {"seed", 1},
        {"segment", "none"}};
    std::ofstream f(tmp.path("cfg.json"));
    f << cfg.dump();
    f.close();
    const CliResult r =
        run_cli("search --config " + tmp.path("cfg.json") + " --out-dir " + tmp.path("run"));
    EXPECT_EQ(r.exit_code, 3);
}

TEST(Cli, UnknownFlagRejected) {
    EXPECT_EQ(run_cli("merge --technique linear --frobnicate 1").exit_code, 1);
    EXPECT_EQ(run_cli("definitely-not-a-subcommand").exit_code, 1);
}

TEST(Cli, ThreadCapEnvIsValidated) {
    const std::string cmd = std::string("BLOCKMERGE_THREADS=abc ") + BLOCKMERGE_BIN + " eval --spec " +
                            CliEnv::path("toy.json") + " " + CliEnv::path("a.bt") + " " +
                            CliEnv::path("va.bt") + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    ASSERT_NE(pipe, nullptr);
    char buf[256];
    while (fread(buf, 1, sizeof(buf), pipe) > 0) {
    }
    const int status = pclose(pipe);
    EXPECT_EQ(WIFEXITED(status) ? WEXITSTATUS(status) : -1, 1);
}
