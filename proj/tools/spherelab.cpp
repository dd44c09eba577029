// spherelab command line: run, verify, compare.
//
// Exit codes: 0 success, 1 config/IO error, 2 divergence, 3 verification failure.

#include <cstdint>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spherelab/config.hpp"
#include "spherelab/io.hpp"
#include "spherelab/train.hpp"
#include "spherelab/verify.hpp"

namespace {

using namespace spherelab;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitVerifyFailed = 3;

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

/// --seed and --out are sugar for --set seed=... / --set output_dir=...,
/// applied after the explicit overrides.
std::vector<std::string> overrides(const CommonArgs& a) {
  std::vector<std::string> o = a.sets;
  if (a.seed) o.push_back("seed=" + std::to_string(*a.seed));
  if (!a.out.empty()) o.push_back("output_dir=" + Json(a.out).dump());
  return o;
}

int cmd_run(const CommonArgs& args) {
  const RunConfig cfg = load_config(args.config, overrides(args));
  RunLog log;
  int code = kExitOk;
  try {
    log = train(cfg);
  } catch (const DivergenceDetected& e) {
    log = e.partial();
    code = kExitDiverged;
    std::cerr << "diverged: " << e.what() << "\n";
  }
  write_run_outputs(cfg.output_dir, cfg, log);
  if (code == kExitOk) {
    std::cout << "wrote " << (std::filesystem::path(cfg.output_dir) / "runlog.csv").string() << ", runlog.json, norms_hist.csv\n";
    std::cout << "final norm mean " << format_double(log.final_norms.mean) << ", variance "
              << format_double(log.final_norms.variance) << "\n";
  }
  return code;
}

/// A deliberately wrong gradient (npair with the sign flipped) used to show
/// that the gradient check can fail.
GradCheckCase sign_error_case() {
  const LossConfig cfg = LossConfig::defaults(LossKind::npair);
  return {"npair with injected sign error", [cfg](std::mt19937_64& rng) {
            auto pt = verify_detail::sample_loss_point(cfg, rng);
            pt.analytic = -pt.analytic;
            return pt;
          }};
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool inject_fault) {
  VerifyOptions opt;
  opt.seed = seed;
  if (inject_fault) opt.extra_cases.push_back(sign_error_case());
  const auto results = run_suite(parse_suite(suite), opt);
  print_report(results, std::cout);
  return all_pass(results) ? kExitOk : kExitVerifyFailed;
}

int cmd_compare(const CommonArgs& args) {
  if (args.config.empty()) throw Error(ErrorCode::ConfigError, "compare needs --config");
  CompareConfig cc = compare_config_from_json(read_json_file(args.config), overrides(args));

  std::vector<std::future<RunLog>> futures;
  std::vector<char> diverged(cc.variants.size(), 0);  // not vector<bool>: written from several threads
  for (std::size_t v = 0; v < cc.variants.size(); ++v) {
    futures.push_back(std::async(std::launch::async, [&cc, &diverged, v] {
      try {
        return train(cc.variants[v]);
      } catch (const DivergenceDetected& e) {
        diverged[v] = 1;
        return e.partial();
      }
    }));
  }
  std::vector<RunLog> logs;
  for (auto& f : futures) logs.push_back(f.get());

  const std::filesystem::path dir = cc.base.output_dir;
  for (std::size_t v = 0; v < logs.size(); ++v) write_run_outputs(dir / cc.names[v], cc.variants[v], logs[v]);
  atomic_write(dir / "compare.csv", compare_csv(cc.names, logs));
  atomic_write(dir / "summary.json", compare_summary(cc.names, logs).dump(2) + "\n");
  std::cout << "wrote " << (dir / "compare.csv").string() << " and summary.json\n";
  for (std::size_t v = 0; v < logs.size(); ++v) {
    std::cout << cc.names[v] << ": "
              << (diverged[v] ? "diverged" : "final norm variance " + format_double(logs[v].final_norms.variance)) << "\n";
  }
  for (char d : diverged) {
    if (d) return kExitDiverged;
  }
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--set", args.sets, "override a config key, e.g. regularizer.eta=0.5 (repeatable)");
  cmd->add_option("--seed", args.seed, "run seed");
  cmd->add_option("--out", args.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spherelab: angular metric-learning losses, norm regularizers and optimizer checks"};
  app.require_subcommand(1);

  CommonArgs run_args;
  auto* run = app.add_subcommand("run", "train one configuration and write runlog.csv, runlog.json, norms_hist.csv");
  add_common(run, run_args);

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  bool inject_fault = false;
  auto* verify = app.add_subcommand("verify", "run numerical verification suites");
  verify->add_option("suite", suite, "prop1|prop2|prop3|prop4|prop5|gradcheck|all")
      ->check(CLI::IsMember({"prop1", "prop2", "prop3", "prop4", "prop5", "gradcheck", "all"}));
  verify->add_option("--seed", verify_seed, "sampling seed");
  verify->add_flag("--inject-fault", inject_fault, "add a gradient with a flipped sign (negative control)");

  CommonArgs cmp_args;
  auto* compare = app.add_subcommand("compare", "run matched-seed regularizer variants side by side");
  add_common(compare, cmp_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*verify) return cmd_verify(suite, verify_seed, inject_fault);
    if (*compare) return cmd_compare(cmp_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
