// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "spherelab/config.hpp"
#include "spherelab/io.hpp"
#include "spherelab/train.hpp"
#include "spherelab/verify.hpp"

using namespace spherelab;

namespace {

const std::string kConfigs = SPHERELAB_CONFIG_DIR;

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << title << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

/// Worst measured value of a suite and whether every check passed.
std::pair<double, bool> summarize(const std::vector<CheckResult>& rs) {
  double worst = 0;
  for (const auto& r : rs) worst = std::max(worst, r.measured);
  return {worst, all_pass(rs)};
}

Matrix random_rows(Index n, Index d, std::mt19937_64& rng) { return verify_detail::random_rows(n, d, rng); }

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rs = run_suite(Suite::gradcheck, VerifyOptions{});
  const double secs = seconds_since(t0);
  const auto [worst, pass] = summarize(rs);
  report(1, "gradient correctness", pass && secs < 60.0,
         std::to_string(rs.size()) + " cases x 100 points, worst rel err " + fmt(worst) + " (< 1e-6), " + fmt(secs) +
             " s (< 60 s)");
}

void proposition1() {
  const auto rs = run_suite(Suite::prop1, VerifyOptions{});
  double worst = 0;
  for (const auto& r : rs) {
    if (r.name.find("orthogonality") != std::string::npos) worst = std::max(worst, r.measured);
  }
  report(2, "gradient orthogonal to embedding", all_pass(rs),
         "max |<f, dL/df>| / (|f| |dL/df|) " + fmt(worst) + " (< 1e-10) over 100 batches per loss");
}

void proposition2() {
  const auto rs = run_suite(Suite::prop2, VerifyOptions{});
  const auto [worst, pass] = summarize(rs);
  report(3, "tan(dtheta) scales as 1/c^2", pass, "worst rel err " + fmt(worst) + " (< 1e-8), c in {0.5, 2, 10}");
}

void propositions3to5() {
  std::string detail;
  bool pass = true;
  for (Suite s : {Suite::prop3, Suite::prop4, Suite::prop5}) {
    for (const auto& r : run_suite(s, VerifyOptions{})) {
      pass = pass && r.pass;
      if (r.name.find("slope") != std::string::npos) detail += r.name.substr(6) + " " + fmt(r.measured, 6) + "; ";
    }
  }
  report(4, "first-order direction updates", pass, detail + "each 2 +- 0.15 over 50 configs");
}

void reductions() {
  std::mt19937_64 rng(5);
  double sec_l2 = 0;
  bool ema_exact = true, momentum_exact = true, softmax_exact = true;
  RegularizerConfig zero;
  zero.kind = RegularizerKind::sec;
  zero.mu_mode = MuMode::fixed;
  zero.mu_fixed = 0.0;
  RegularizerConfig ema = zero, bm = zero;
  ema.mu_mode = MuMode::ema;
  ema.rho = 1.0;
  bm.mu_mode = MuMode::batch_mean;
  RegularizerState s_ema, s_bm;
  for (int t = 0; t < 100; ++t) {
    EmbeddingBatch<double> b{random_rows(8, 5, rng), {0, 0, 1, 1, 2, 2, 3, 3}};
    const auto sec = sec_loss(b, zero, RegularizerState{}).first;
    const auto l2 = l2_reg_loss(b);
    sec_l2 = std::max({sec_l2, std::abs(sec.value - l2.value), (sec.grad_embeddings - l2.grad_embeddings).cwiseAbs().maxCoeff()});

    auto [o1, n1] = sec_loss(b, ema, s_ema);
    auto [o2, n2] = sec_loss(b, bm, s_bm);
    ema_exact = ema_exact && n1.mu == n2.mu && o1.value == o2.value && o1.grad_embeddings == o2.grad_embeddings;
    s_ema = n1;
    s_bm = n2;

    ClassTemplates<double> w{random_rows(4, 5, rng)};
    const auto plain = cos_softmax_loss(b, w, LossConfig::defaults(LossKind::cos_softmax, SoftmaxVariant::plain));
    for (auto v : {SoftmaxVariant::cosface, SoftmaxVariant::arcface, SoftmaxVariant::sphereface}) {
      auto cfg = LossConfig::defaults(LossKind::cos_softmax, v);
      cfg.margin = v == SoftmaxVariant::sphereface ? 1.0 : 0.0;
      const auto o = cos_softmax_loss(b, w, cfg);
      softmax_exact = softmax_exact && o.value == plain.value && o.grad_embeddings == plain.grad_embeddings &&
                      *o.grad_templates == *plain.grad_templates;
    }
  }
  OptimizerConfig sgd{OptimizerKind::sgd, 0.05};
  OptimizerConfig mom{OptimizerKind::momentum, 0.05};
  mom.momentum = 0.0;
  Matrix a = random_rows(6, 4, rng), b = a;
  OptimizerState sa, sb;
  for (int t = 0; t < 100; ++t) {
    const Matrix g = random_rows(6, 4, rng);
    std::tie(a, sa) = optimizer_step(a, g, sgd, std::move(sa));
    std::tie(b, sb) = optimizer_step(b, g, mom, std::move(sb));
    momentum_exact = momentum_exact && a == b;
  }
  report(5, "reductions", sec_l2 <= 1e-12 && ema_exact && momentum_exact && softmax_exact,
         "SEC(mu=0) vs L2 max diff " + fmt(sec_l2) + " (<= 1e-12); EMA(rho=1) == batch mean " +
             (ema_exact ? "exact" : "DIFFERS") + "; momentum(beta=0) == SGD " + (momentum_exact ? "bitwise" : "DIFFERS") +
             "; m=0 softmax == plain " + (softmax_exact ? "exact" : "DIFFERS"));
}

double recall1_at(const RunLog& log, long iter) {
  for (const auto& m : log.metrics) {
    if (m.iter == iter) return m.recall.at(0);
  }
  return std::nan("");
}

void golden_experiments() {
  RunConfig sec_cfg = load_config(kConfigs + "/triplet.json");
  RunConfig base_cfg = sec_cfg;
  base_cfg.regularizer = RegularizerConfig{};
  const auto t0 = std::chrono::steady_clock::now();
  const RunLog base = train(base_cfg);
  const RunLog sec = train(sec_cfg);
  const double secs = seconds_since(t0);

  const bool setup_ok = sec_cfg.regularizer.kind == RegularizerKind::sec && sec_cfg.regularizer.eta == 0.5 &&
                        sec_cfg.dataset.classes == 10 && sec_cfg.dataset.classes * sec_cfg.dataset.per_class == 300 &&
                        sec_cfg.loss.kind == LossKind::triplet && sec_cfg.optimizer.kind == OptimizerKind::adam &&
                        sec_cfg.optimizer.lr == 1e-3 && sec_cfg.iterations == 2000;
  const double ratio = sec.final_norms.variance / base.final_norms.variance;
  report(6, "norm compaction (golden A)", setup_ok && ratio <= 0.5 && secs < 120.0,
         "final norm variance SEC " + fmt(sec.final_norms.variance) + " vs baseline " + fmt(base.final_norms.variance) +
             ", ratio " + fmt(ratio) + " (<= 0.5), both runs " + fmt(secs) + " s (< 120 s)");

  const double r_sec = recall1_at(sec, 1000);
  const double r_base = recall1_at(base, 1000);
  report(7, "convergence trend (golden B)", setup_ok && r_sec >= r_base - 0.02,
         "Recall@1 at iteration 1000: SEC " + fmt(r_sec) + " vs baseline " + fmt(r_base) + " (SEC >= baseline - 0.02)");
}

void pure_sec_collapse() {
  const RunConfig cfg = load_config(kConfigs + "/pure_sec.json");
  const RunLog log = train(cfg);
  const bool setup_ok = cfg.model.kind == ModelKind::free_table && !cfg.metric_loss &&
                        cfg.regularizer.kind == RegularizerKind::sec && cfg.iterations == 1000 && cfg.optimizer.lr == 1e-2;
  report(8, "pure-SEC sphere collapse", setup_ok && log.final_norms.variance < 1e-6,
         "norm variance " + fmt(log.records.front().norm_var) + " -> " + fmt(log.final_norms.variance) +
             " after 1000 steps at lr 1e-2 (< 1e-6)");
}

void identity_and_determinism() {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> log_scale(-3, 3);
  double worst = 0;
  for (int t = 0; t < 10000; ++t) {
    Vector a(6), b(6);
    for (Index i = 0; i < 6; ++i) a(i) = n(rng), b(i) = n(rng);
    a *= std::pow(10.0, log_scale(rng));
    b *= std::pow(10.0, log_scale(rng));
    worst = std::max(worst, std::abs(normalized_euclidean(a, b) - (2 - 2 * cosine_distance(a, b))));
  }
  RunConfig cfg = load_config(kConfigs + "/semihard_triplet.json");
  cfg.iterations = 300;
  const RunLog x = train(cfg);
  const RunLog y = train(cfg);
  const bool same = runlog_csv(x) == runlog_csv(y) && runlog_json(cfg, x).dump() == runlog_json(cfg, y).dump() &&
                    norms_hist_csv(x.final_norms) == norms_hist_csv(y.final_norms);
  report(9, "2 - 2cos identity and determinism", worst <= 1e-12 && same,
         "max |d - (2 - 2cos)| " + fmt(worst) + " (<= 1e-12) over 1e4 pairs; repeated run " +
             (same ? "byte-identical" : "DIFFERS"));
}

void shipped_defaults() {
  std::vector<std::string> wrong;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) wrong.push_back(what);
  };
  const auto semihard = load_config(kConfigs + "/semihard_triplet.json").loss;
  expect(semihard.kind == LossKind::semihard_triplet && semihard.margin == 0.2, "semihard m");
  const auto npair = load_config(kConfigs + "/npair.json").loss;
  expect(npair.kind == LossKind::npair && npair.scale == 25.0, "npair s");
  const auto ms = load_config(kConfigs + "/multi_similarity.json").loss;
  expect(ms.kind == LossKind::multi_similarity && ms.ms.epsilon == 0.1 && ms.ms.lambda == 0.5 && ms.ms.alpha == 2.0 &&
             ms.ms.beta == 40.0,
         "multi-similarity");
  const auto cosface = load_config(kConfigs + "/cos_softmax_cosface.json").loss;
  expect(cosface.softmax_variant == SoftmaxVariant::cosface && cosface.scale == 64.0 && cosface.margin == 0.35, "cosface");
  const auto arcface = load_config(kConfigs + "/cos_softmax_arcface.json").loss;
  expect(arcface.softmax_variant == SoftmaxVariant::arcface && arcface.scale == 64.0 && arcface.margin == 0.45, "arcface");
  const auto sphere = load_config(kConfigs + "/cos_softmax_sphereface.json").loss;
  expect(sphere.softmax_variant == SoftmaxVariant::sphereface && sphere.scale == 64.0 && sphere.margin == 3.0, "sphereface");
  const auto ntxent = load_config(kConfigs + "/ntxent.json").loss;
  expect(ntxent.kind == LossKind::ntxent && ntxent.temperature == 0.5, "ntxent tau");

  const auto eta = compare_config_from_json(read_json_file(kConfigs + "/sec_eta_sweep.json"));
  std::set<double> etas;
  for (const auto& v : eta.variants) {
    if (v.regularizer.kind == RegularizerKind::sec) etas.insert(v.regularizer.eta);
  }
  expect(etas == std::set<double>{0.25, 0.5, 1.0}, "SEC eta sweep");
  const auto rho = compare_config_from_json(read_json_file(kConfigs + "/ema_rho_sweep.json"));
  std::set<double> rhos;
  for (const auto& v : rho.variants) {
    if (v.regularizer.kind == RegularizerKind::sec && v.regularizer.mu_mode == MuMode::ema) rhos.insert(v.regularizer.rho);
  }
  expect(rhos == std::set<double>{0.01, 0.1, 0.5, 0.9}, "EMA rho sweep");

  std::string detail = "semihard m=0.2, npair s=25, MS (0.1, 0.5, 2, 40), cosface (64, 0.35), arcface 0.45, "
                       "sphereface 3, NT-Xent tau=0.5, eta {0.25, 0.5, 1}, rho {0.01, 0.1, 0.5, 0.9}";
  for (const auto& w : wrong) detail += "; MISMATCH " + w;
  report(10, "shipped config defaults", wrong.empty(), detail);
}

}  // namespace

int main() {
  try {
    gradient_correctness();
    proposition1();
    proposition2();
    propositions3to5();
    reductions();
    golden_experiments();
    pure_sec_collapse();
    identity_and_determinism();
    shipped_defaults();
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
