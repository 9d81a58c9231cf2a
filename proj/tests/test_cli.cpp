#include "ftb/barrier.hpp"
#include "ftb/io.hpp"

#include <gtest/gtest.h>

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace ftb;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ftb_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(FTB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

BarrierNetwork constant_net(double level) {
    BarrierNetwork net({3, 1, 1});
    net.params()[net.bias_offset(1)] = level;
    return net;
}

const char* kTinyDubins = R"({"id": "dubins",
  "training": {"epochs": 3, "warm_start_epochs": 5, "hidden": [8, 8], "batch_size": 32},
  "simulation": {"horizon": 0.3}})";

}  // namespace

TEST(Cli, NegativeGammaIsConfigError) {
    const auto dir = scratch("gamma");
    write_text(dir / "bad.json", R"({"id": "dubins", "training": {"gammas": [-1.0, 0.1]}})");
    EXPECT_EQ(run("train --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string(), dir / "log"), 1);
    EXPECT_NE(read_text(dir / "log").find("gammas"), std::string::npos);
}

TEST(Cli, CampaignWithoutModelFails) {
    const auto dir = scratch("nomodel");
    EXPECT_EQ(run("campaign --scenario dubins --model " + (dir / "missing.bin").string() + " --runs 1 --out " +
                      (dir / "o").string(),
                  dir / "log"),
              1);
}

TEST(Cli, CheckExitCodes) {
    const auto dir = scratch("check");
    constant_net(10.0).save_binary(dir / "hot.bin");
    constant_net(-1.0).save_binary(dir / "cold.bin");
    const std::string common = " --scenario dubins --grid-scale 2 --out ";
    EXPECT_EQ(run("check --model " + (dir / "hot.bin").string() + common + (dir / "hot").string(), dir / "log1"), 3);
    const auto report = nlohmann::json::parse(read_text(dir / "hot" / "check.json"));
    EXPECT_GT(report["correctness_violations"].get<int>(), 0);
    EXPECT_FALSE(report["counterexamples"].empty());
    EXPECT_EQ(run("check --model " + (dir / "cold.bin").string() + common + (dir / "cold").string(), dir / "log2"), 0);
    EXPECT_NE(read_text(dir / "log2").find("empty region"), std::string::npos);
}

TEST(Cli, TrainIsReproducibleAndWritesArtifacts) {
    const auto dir = scratch("train");
    write_text(dir / "tiny.json", kTinyDubins);
    const std::string base = "train --config " + (dir / "tiny.json").string() + " --reduced --quiet --out ";
    const int a = run(base + (dir / "a").string(), dir / "log_a");
    const int b = run(base + (dir / "b").string(), dir / "log_b");
    EXPECT_TRUE(a == 0 || a == 2) << read_text(dir / "log_a");
    EXPECT_EQ(a, b);
    for (const char* f : {"model.bin", "model_loss.csv", "model.json", "manifest.json"}) {
        ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
        if (std::string(f) != "manifest.json") {
            EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "b" / f)) << f;
        }
    }
    const auto ma = nlohmann::json::parse(read_text(dir / "a" / "manifest.json"));
    const auto mb = nlohmann::json::parse(read_text(dir / "b" / "manifest.json"));
    for (const char* key : {"command", "scenario", "config_path", "seed", "out_dir", "version", "wall_time_s", "hash",
                            "resolved_config"})
        EXPECT_TRUE(ma.contains(key)) << key;
    EXPECT_EQ(ma["resolved_config"], mb["resolved_config"]);

    const std::string header = read_text(dir / "a" / "model_loss.csv").substr(0, 40);
    EXPECT_EQ(header.rfind("epoch,vol,lf_1,lf_2,lc,total", 0), 0u);

    // a short campaign on the trained model is reproducible too
    const std::string camp = "campaign --config " + (dir / "tiny.json").string() + " --model " +
                             (dir / "a" / "model.bin").string() + " --runs 2 --trajectories 1 --out ";
    EXPECT_EQ(run(camp + (dir / "c1").string(), dir / "log_c1"), 0) << read_text(dir / "log_c1");
    EXPECT_EQ(run(camp + (dir / "c2").string() + " --jobs 2", dir / "log_c2"), 0);
    EXPECT_EQ(read_text(dir / "c1" / "aggregate.json"), read_text(dir / "c2" / "aggregate.json"));
    bool any_csv = false;
    for (const auto& e : fs::directory_iterator(dir / "c1"))
        if (e.path().extension() == ".csv") {
            any_csv = true;
            EXPECT_EQ(read_text(e.path()), read_text(dir / "c2" / e.path().filename()));
            const std::string head = read_text(e.path()).substr(0, 200);
            EXPECT_NE(head.find("z_t,h,b,degraded"), std::string::npos);
        }
    EXPECT_TRUE(any_csv);
}

TEST(Cli, SelftestPasses) {
    const auto dir = scratch("self");
    EXPECT_EQ(run("selftest", dir / "log"), 0) << read_text(dir / "log");
}

TEST(Cli, ConfigDumpRoundTrips) {
    const auto dir = scratch("dump");
    EXPECT_EQ(run("config --scenario cwh", dir / "cwh.json"), 0);
    EXPECT_EQ(nlohmann::json::parse(read_text(dir / "cwh.json"))["id"], "cwh");
}
