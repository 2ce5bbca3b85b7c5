#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        std::random_device rd;
        dir_ = fs::temp_directory_path() / ("mdirac_cli_" + std::to_string(rd()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // exit status of the CLI; stdout goes to dir_/stdout.txt
    int run(const std::string& args) {
        const std::string cmd = std::string("\"") + MDIRAC_CLI_PATH + "\" " + args + " > \"" +
                                (dir_ / "stdout.txt").string() + "\" 2> \"" + (dir_ / "stderr.txt").string() + "\"";
        const int st = std::system(cmd.c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    }
    std::string slurp(const fs::path& p) const {
        std::ifstream f(p, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    }
    fs::path write_config(const std::string& name, const std::string& body) const {
        fs::path p = dir_ / name;
        std::ofstream(p) << body;
        return p;
    }
    static std::string config(const std::string& name) { return std::string(MDIRAC_CONFIG_DIR) + "/" + name; }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ListNamesEveryExperiment) {
    ASSERT_EQ(run("list"), 0);
    const std::string out = slurp(dir_ / "stdout.txt");
    for (const char* n : {"dsp_case2", "dsp_case3", "dsp_case4", "dsp_static_negative", "neumann_flow",
                          "moser_separable", "ks_diagnostic", "oscillator_bnf"})
        EXPECT_NE(out.find(n), std::string::npos) << n;
    ASSERT_EQ(run("list --json"), 0);
    json j = json::parse(slurp(dir_ / "stdout.txt"));
    ASSERT_TRUE(j.is_array());
    EXPECT_EQ(j.size(), 8u);
    EXPECT_EQ(j[0]["name"], "dsp_case2");
}

TEST_F(CliTest, UsageAndConfigErrorsExitTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("run \"" + (dir_ / "missing.json").string() + "\""), 2);
    EXPECT_EQ(run("run \"" + write_config("bad.json", "{\"experiment\": ").string() + "\""), 2);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("malformed JSON"), std::string::npos);
    EXPECT_EQ(run("run \"" + write_config("key.json", R"({"experiment": "oscillator_bnf", "colour": 1})").string() + "\""),
              2);
    EXPECT_NE(slurp(dir_ / "stderr.txt").find("colour"), std::string::npos);
    EXPECT_EQ(run("run \"" +
                  write_config("nested.json", R"({"experiment": "oscillator_bnf", "numerics": {"K": 6, "k": 6}})")
                      .string() +
                  "\""),
              2);
    EXPECT_EQ(run("run \"" + write_config("exp.json", R"({"experiment": "pendulum"})").string() + "\""), 2);
    EXPECT_EQ(run("run \"" +
                  write_config("neg.json", R"({"experiment": "dsp_case2", "params": {"m1": -1}})").string() + "\""),
              2);
}

TEST_F(CliTest, KsDiagnosticReportsIrregularLevel) {
    const fs::path out = dir_ / "ks";
    ASSERT_EQ(run("run \"" + config("ks_diagnostic.json") + "\" --out \"" + out.string() + "\""), 0);
    json r = json::parse(slurp(out / "report.json"));
    EXPECT_EQ(r["experiment"], "ks_diagnostic");
    EXPECT_TRUE(r["pass"].get<bool>());
    bool found = false;
    for (const auto& f : r["flags"]) found = found || f == "not_regular_level";
    EXPECT_TRUE(found);
}

TEST_F(CliTest, ReportsAreByteIdenticalAcrossRuns) {
    const fs::path a = dir_ / "a", b = dir_ / "b";
    ASSERT_EQ(run("run \"" + config("oscillator_bnf.json") + "\" --out \"" + a.string() + "\""), 0);
    ASSERT_EQ(run("run \"" + config("oscillator_bnf.json") + "\" --out \"" + b.string() + "\""), 0);
    EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
    EXPECT_EQ(slurp(a / "nf_result.json"), slurp(b / "nf_result.json"));
    json r = json::parse(slurp(a / "report.json"));
    EXPECT_EQ(r["seed"], 1);
    EXPECT_NEAR(r["checks"]["quartic_coefficient"]["value"].get<double>(), 0.375, 1e-12);
}

TEST_F(CliTest, StaticNegativeControlRefusesTheSlice) {
    const fs::path out = dir_ / "st";
    ASSERT_EQ(run("run \"" + config("dsp_static_negative.json") + "\" --out \"" + out.string() + "\" --seed 7"), 0);
    json r = json::parse(slurp(out / "report.json"));
    EXPECT_EQ(r["seed"], 7);
    EXPECT_TRUE(r["checks"]["fixed_point_detected"]["pass"].get<bool>());
    EXPECT_TRUE(r["checks"]["not_second_class"]["pass"].get<bool>());
}
