#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "spherelab/config.hpp"
#include "spherelab/io.hpp"

using namespace spherelab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(SPHERELAB_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  Outcome out;
  if (!pipe) return out;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.output.append(buf.data(), n);
  const int status = pclose(pipe);
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("spherelab_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& contents) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << contents;
    return p;
  }

  fs::path dir_;
};

/// Small, fast overrides applied on top of a shipped config.
const std::string kSmall =
    "--set iterations=30 --set eval_interval=10 --set dataset.classes=4 --set dataset.per_class=6 "
    "--set batch.classes_per_batch=4 --set model.kind=\\\"free_table\\\"";

const std::string kConfigs = SPHERELAB_CONFIG_DIR;

}  // namespace

TEST_F(CliTest, RunWritesThreeOutputs) {
  const auto r = run_cli("run --config " + kConfigs + "/triplet.json " + kSmall + " --out " + dir_.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(dir_ / "runlog.csv");
  EXPECT_EQ(first_line(csv), kRunlogColumns);
  EXPECT_EQ(count_lines(csv), 31u);
  const Json j = Json::parse(slurp(dir_ / "runlog.json"));
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["records"].size(), 30u);
  EXPECT_EQ(j["metrics"].size(), 4u);
  const std::string hist = slurp(dir_ / "norms_hist.csv");
  EXPECT_EQ(first_line(hist), "bin_lo,bin_hi,count");
  EXPECT_EQ(count_lines(hist), 21u);
  EXPECT_FALSE(fs::exists(dir_ / "runlog.csv.tmp"));
}

TEST_F(CliTest, SetOverridesAreEchoed) {
  const auto r = run_cli("run --config " + kConfigs + "/triplet.json " + kSmall +
                         " --set regularizer.eta=0.25 --seed 7 --out " + dir_.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const Json cfg = Json::parse(slurp(dir_ / "runlog.json"))["config"];
  EXPECT_EQ(cfg["regularizer"]["eta"], 0.25);
  EXPECT_EQ(cfg["seed"], 7);
  EXPECT_EQ(cfg["iterations"], 30);
  EXPECT_EQ(cfg["output_dir"], dir_.string());
}

TEST_F(CliTest, UnknownKeyIsAConfigError) {
  const auto cfg = write("bad.json", R"({"model": {"kind": "mlp", "depth": 3}})");
  const auto r = run_cli("run --config " + cfg.string() + " --out " + dir_.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("unknown key 'model.depth'"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "runlog.csv"));

  const auto set = run_cli("run " + kSmall + " --set optimizer.learning_rat=0.1 --out " + dir_.string());
  EXPECT_EQ(set.code, 1);
  EXPECT_NE(set.output.find("unknown key 'optimizer.learning_rat'"), std::string::npos) << set.output;
}

TEST_F(CliTest, BadValuesAndMissingFiles) {
  EXPECT_EQ(run_cli("run --config " + (dir_ / "missing.json").string()).code, 1);
  const auto cfg = write("bad.json", R"({"regularizer": {"kind": "sec", "eta": -1}})");
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --out " + dir_.string()).code, 1);
  const auto bad_json = write("broken.json", "{\"seed\": ");
  EXPECT_EQ(run_cli("run --config " + bad_json.string()).code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("verify prop9").code, 1);
}

TEST_F(CliTest, DivergenceExitsWithTwoAndWritesPartialLog) {
  const auto r = run_cli("run " + kSmall +
                         " --set loss.kind=\\\"none\\\" --set regularizer.kind=\\\"l2reg\\\" --set regularizer.eta=1"
                         " --set optimizer.kind=\\\"sgd\\\" --set optimizer.learning_rate=1e6 --out " +
                         dir_.string());
  EXPECT_EQ(r.code, 2) << r.output;
  const Json j = Json::parse(slurp(dir_ / "runlog.json"));
  EXPECT_EQ(j["status"], "diverged");
  EXPECT_TRUE(j.contains("message"));
  EXPECT_LT(count_lines(slurp(dir_ / "runlog.csv")), 31u);
}

TEST_F(CliTest, RunlogConfigReproducesTheRun) {
  const fs::path first = dir_ / "first";
  const fs::path second = dir_ / "second";
  ASSERT_EQ(run_cli("run --config " + kConfigs + "/npair.json " + kSmall + " --out " + first.string()).code, 0);
  const Json echoed = Json::parse(slurp(first / "runlog.json"))["config"];
  const auto cfg = write("echo.json", echoed.dump());
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + second.string()).code, 0);
  EXPECT_EQ(slurp(first / "runlog.csv"), slurp(second / "runlog.csv"));
  EXPECT_EQ(slurp(first / "norms_hist.csv"), slurp(second / "norms_hist.csv"));
}

TEST_F(CliTest, VerifyIsDeterministic) {
  const auto a = run_cli("verify prop1 --seed 3");
  const auto b = run_cli("verify prop1 --seed 3");
  EXPECT_EQ(a.code, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  EXPECT_NE(a.output.find("all checks passed"), std::string::npos);
}

TEST_F(CliTest, VerifyEverySuitePasses) {
  for (const char* suite : {"prop1", "prop2", "prop3", "prop4", "prop5", "gradcheck"}) {
    const auto r = run_cli(std::string("verify ") + suite);
    EXPECT_EQ(r.code, 0) << suite << "\n" << r.output;
  }
}

TEST_F(CliTest, InjectedGradientFaultFailsVerification) {
  const auto r = run_cli("verify gradcheck --inject-fault");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("injected sign error"), std::string::npos);
  EXPECT_NE(r.output.find("some checks FAILED"), std::string::npos);
}

TEST_F(CliTest, CompareWritesSideBySideTables) {
  const auto r = run_cli("compare --config " + kConfigs + "/sec_eta_sweep.json " + kSmall + " --out " + dir_.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const Json spec = read_json_file(kConfigs + "/sec_eta_sweep.json");
  const std::size_t variants = spec["variants"].size();
  const std::string csv = slurp(dir_ / "compare.csv");
  const std::string header = first_line(csv);
  const auto cols = compare_columns({1, 2, 4, 8});
  EXPECT_EQ(split_csv(header).size(), 1 + variants * cols.size());
  EXPECT_EQ(count_lines(csv), 32u);  // header + iterations 0..30
  const Json summary = Json::parse(slurp(dir_ / "summary.json"));
  ASSERT_EQ(summary["variants"].size(), variants);
  for (const auto& v : summary["variants"]) {
    EXPECT_TRUE(v["final"]["norm_var"].is_number());
    EXPECT_TRUE(fs::exists(dir_ / v["name"].get<std::string>() / "runlog.csv"));
  }
  EXPECT_EQ(summary["variants"][0]["delta"]["norm_var"], 0.0);
}

TEST_F(CliTest, CompareRejectsEmptyVariantList) {
  const auto cfg = write("cmp.json", R"({"base": {}, "variants": []})");
  const auto r = run_cli("compare --config " + cfg.string() + " --out " + dir_.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("variants"), std::string::npos) << r.output;
  const auto dup = write("dup.json", R"({"variants": [{"name": "a"}, {"name": "a"}]})");
  EXPECT_EQ(run_cli("compare --config " + dup.string()).code, 1);
}

TEST(ShippedConfigs, AllParse) {
  int runs = 0, compares = 0;
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    if (entry.path().extension() != ".json") continue;
    const Json j = read_json_file(entry.path().string());
    if (j.contains("variants")) {
      EXPECT_NO_THROW(compare_config_from_json(j)) << entry.path();
      ++compares;
    } else {
      EXPECT_NO_THROW(config_from_json(j)) << entry.path();
      ++runs;
    }
  }
  EXPECT_EQ(runs, 10);
  EXPECT_EQ(compares, 3);
}

TEST(ConfigJson, RoundTripsThroughEcho) {
  const RunConfig cfg = load_config(kConfigs + "/cos_softmax_arcface.json");
  const Json echoed = config_to_json(cfg);
  EXPECT_EQ(config_to_json(config_from_json(echoed)), echoed);
  EXPECT_EQ(cfg.loss.margin, 0.45);
  EXPECT_EQ(cfg.loss.scale, 64.0);
}

TEST(ConfigJson, OverridesParseJsonValues) {
  Json j = Json::object();
  apply_override(j, "regularizer.eta=0.5");
  apply_override(j, "loss.kind=npair");
  apply_override(j, "recall_ks=[1,5]");
  EXPECT_EQ(j["regularizer"]["eta"], 0.5);
  EXPECT_EQ(j["loss"]["kind"], "npair");
  EXPECT_EQ(j["recall_ks"], Json::array({1, 5}));
  EXPECT_THROW(apply_override(j, "no_equals_sign"), Error);
}
