// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    std::string out_path =
        (fs::temp_directory_path() / ("ts_cli_out_" + std::to_string(counter++) + ".txt")).string();
    std::string cmd = std::string(TS_CLI_PATH) + " " + args + " > " + out_path + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(out_path);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    fs::remove(out_path);
    return r;
}

std::string temp_dir(const std::string& name) {
    std::string d = (fs::temp_directory_path() / name).string();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Cli, UsageErrorsExit2) {
    EXPECT_EQ(run_cli("").exit_code, 2);
    EXPECT_EQ(run_cli("--bogus-flag").exit_code, 2);
    EXPECT_EQ(run_cli("stats").exit_code, 2);  // missing required --manifest
    EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
}

TEST(Cli, HelpExitsZero) {
    auto r = run_cli("--help");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.output.find("train"), std::string::npos);
    EXPECT_NE(r.output.find("segment"), std::string::npos);
}

TEST(Cli, MissingManifestExit3) {
    EXPECT_EQ(run_cli("stats --manifest /nonexistent/m.csv").exit_code, 3);
}

TEST(Cli, BadManifestExit3) {
    std::string dir = temp_dir("ts_cli_badmanifest");
    {
        std::ofstream os(dir + "/m.csv");
        os << "clip_path,label,frame_count,fps,split\n"
           << "a.rvf,made_up_class,10,16,train\n";
    }
    auto r = run_cli("stats --manifest " + dir + "/m.csv");
    EXPECT_EQ(r.exit_code, 3);
    fs::remove_all(dir);
}

TEST(Cli, SynthgenThenStats) {
    std::string dir = temp_dir("ts_cli_synth");
    auto gen = run_cli("--seed 9 synthgen --out " + dir + " --per-class 2 --width 32 --height 32 --fps 4");
    ASSERT_EQ(gen.exit_code, 0) << gen.output;
    ASSERT_TRUE(fs::exists(dir + "/manifest.csv"));

    auto st = run_cli("stats --manifest " + dir + "/manifest.csv --bin-width 8");
    EXPECT_EQ(st.exit_code, 0) << st.output;
    EXPECT_NE(st.output.find("crane_out"), std::string::npos);
    EXPECT_NE(st.output.find("driving"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, StatsWritesJson) {
    std::string dir = temp_dir("ts_cli_statsjson");
    {
        std::ofstream os(dir + "/m.csv");
        os << "clip_path,label,frame_count,fps,split\n"
           << "a.rvf,driving,100,16,train\n"
           << "b.rvf,driving,2100,16,val\n";
    }
    auto r = run_cli("stats --manifest " + dir + "/m.csv --bin-width 1000 --out " + dir + "/stats.json");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    std::ifstream is(dir + "/stats.json");
    std::stringstream ss;
    ss << is.rdbuf();
    EXPECT_NE(ss.str().find("\"driving\""), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, EvalRejectsCorruptCheckpointExit3) {
    std::string dir = temp_dir("ts_cli_evalbad");
    {
        std::ofstream os(dir + "/bad.ckpt", std::ios::binary);
        os << "NOTACHECKPOINTFILE";
    }
    {
        std::ofstream os(dir + "/m.csv");
        os << "clip_path,label,frame_count,fps,split\n";
    }
    auto r = run_cli("eval --manifest " + dir + "/m.csv --checkpoint " + dir + "/bad.ckpt");
    EXPECT_EQ(r.exit_code, 3);
    fs::remove_all(dir);
}

TEST(Cli, SegmentRejectsMissingVideoExit3) {
    std::string dir = temp_dir("ts_cli_segbad");
    {
        std::ofstream os(dir + "/bad.ckpt", std::ios::binary);
        os << "NOTACHECKPOINTFILE";
    }
    auto r = run_cli("segment --video /nonexistent.rvf --checkpoint " + dir + "/bad.ckpt");
    EXPECT_EQ(r.exit_code, 3);
    fs::remove_all(dir);
}

TEST(Cli, SynthgenScriptMode) {
    std::string dir = temp_dir("ts_cli_script");
    {
        std::ofstream os(dir + "/script.json");
        os << R"([{"class": "driving", "seconds": 2}, {"class": "processing", "seconds": 2}])";
    }
    auto r = run_cli("--seed 4 synthgen --script " + dir + "/script.json --out " + dir +
                     "/long.rvf --width 32 --height 32 --fps 8");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir + "/long.rvf"));
    EXPECT_TRUE(fs::exists(dir + "/long.rvf.truth.json"));
    fs::remove_all(dir);
}

TEST(Cli, SynthgenBadScriptExit3) {
    std::string dir = temp_dir("ts_cli_badscript");
    {
        std::ofstream os(dir + "/script.json");
        os << "{broken";
    }
    auto r = run_cli("synthgen --script " + dir + "/script.json --out " + dir + "/x.rvf");
    EXPECT_EQ(r.exit_code, 3);
    fs::remove_all(dir);
}
