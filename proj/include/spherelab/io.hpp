#pragma once

// Run outputs: runlog.csv, runlog.json, norms_hist.csv, and the side-by-side
// files written by a comparison of regularizer variants.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spherelab/config.hpp"
#include "spherelab/format.hpp"
#include "spherelab/train.hpp"

namespace spherelab {

inline constexpr const char* kRunlogColumns = "iter,loss,sec_loss,norm_mean,norm_var,dtheta_mean,dtheta_var";

/// Writes `contents` to a temporary sibling file and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory '" + path.parent_path().string() + "'");
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename '" + tmp.string() + "' to '" + path.string() + "'");
}

inline std::string runlog_csv(const RunLog& log) {
  std::ostringstream os;
  os << kRunlogColumns << '\n';
  for (const auto& r : log.records) {
    os << r.iter << ',' << format_double(r.loss) << ',' << format_double(r.sec_loss) << ',' << format_double(r.norm_mean)
       << ',' << format_double(r.norm_var) << ',' << format_double(r.dtheta_mean) << ',' << format_double(r.dtheta_var)
       << '\n';
  }
  return os.str();
}

inline std::string norms_hist_csv(const NormStats& stats) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < stats.counts.size(); ++b) {
    os << format_double(stats.edges[b]) << ',' << format_double(stats.edges[b + 1]) << ',' << stats.counts[b] << '\n';
  }
  return os.str();
}

namespace io_detail {

/// JSON has no NaN/inf; those become null.
inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json metric_json(const MetricRecord& m, const std::vector<int>& ks) {
  Json recall = Json::object();
  for (std::size_t k = 0; k < ks.size() && k < m.recall.size(); ++k) recall[std::to_string(ks[k])] = number(m.recall[k]);
  return {{"iter", m.iter}, {"recall", recall}, {"nmi", number(m.nmi)}, {"f1", number(m.f1)}, {"clustering_ok", m.clustering_ok}};
}

}  // namespace io_detail

/// Config echo, status, per-iteration records, metrics and final norm stats.
inline Json runlog_json(const RunConfig& cfg, const RunLog& log) {
  using io_detail::number;
  Json records = Json::array();
  for (const auto& r : log.records) {
    records.push_back({{"iter", r.iter},
                       {"loss", number(r.loss)},
                       {"sec_loss", number(r.sec_loss)},
                       {"norm_mean", number(r.norm_mean)},
                       {"norm_var", number(r.norm_var)},
                       {"dtheta_mean", number(r.dtheta_mean)},
                       {"dtheta_var", number(r.dtheta_var)}});
  }
  Json metrics = Json::array();
  for (const auto& m : log.metrics) metrics.push_back(io_detail::metric_json(m, log.recall_ks));
  Json j = {{"config", config_to_json(cfg)},
            {"status", log.diverged ? "diverged" : "ok"},
            {"records", records},
            {"metrics", metrics}};
  if (!log.message.empty()) j["message"] = log.message;
  if (!log.diverged) {
    j["final_norms"] = {{"mean", number(log.final_norms.mean)}, {"variance", number(log.final_norms.variance)}};
  }
  return j;
}

/// runlog.csv, runlog.json and norms_hist.csv in `dir`. A diverged run has no
/// final histogram; its norms_hist.csv holds the header only.
inline void write_run_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const RunLog& log) {
  atomic_write(dir / "runlog.csv", runlog_csv(log));
  atomic_write(dir / "runlog.json", runlog_json(cfg, log).dump(2) + "\n");
  atomic_write(dir / "norms_hist.csv", norms_hist_csv(log.final_norms));
}

/// A base run and the regularizer variants compared against it.
struct CompareConfig {
  RunConfig base;
  std::vector<std::string> names;
  std::vector<RunConfig> variants;
};

/// {"base": {...run config...}, "variants": [{"name": ..., "regularizer": {...}}]}.
/// Each variant replaces the base regularizer fields it names.
inline CompareConfig compare_config_from_json(const Json& j, const std::vector<std::string>& overrides = {}) {
  config_detail::reject_unknown(j, "", {"base", "variants"});
  Json base = j.contains("base") ? j.at("base") : Json::object();
  for (const auto& o : overrides) apply_override(base, o);
  CompareConfig out;
  out.base = config_from_json(base);
  if (!j.contains("variants") || !j.at("variants").is_array() || j.at("variants").empty()) {
    throw Error(ErrorCode::ConfigError, "'variants' must be a non-empty array");
  }
  std::size_t idx = 0;
  for (const auto& v : j.at("variants")) {
    const std::string path = "variants[" + std::to_string(idx++) + "]";
    config_detail::reject_unknown(v, path, {"name", "regularizer"});
    if (!v.contains("name") || !v.at("name").is_string() || v.at("name").get<std::string>().empty()) {
      throw Error(ErrorCode::ConfigError, "'" + path + ".name' must be a non-empty string");
    }
    const std::string name = v.at("name").get<std::string>();
    for (const auto& n : out.names) {
      if (n == name) throw Error(ErrorCode::ConfigError, "duplicate variant name '" + name + "'");
    }
    RunConfig cfg = out.base;
    if (v.contains("regularizer")) {
      cfg.regularizer = parse_regularizer(v.at("regularizer"), out.base.regularizer, path + ".regularizer");
    }
    try {
      cfg.regularizer.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    out.names.push_back(name);
    out.variants.push_back(std::move(cfg));
  }
  return out;
}

/// Per-variant columns of compare.csv, after the shared `iter` column.
inline std::vector<std::string> compare_columns(const std::vector<int>& ks) {
  std::vector<std::string> cols = {"loss", "sec_loss", "norm_mean", "norm_var", "dtheta_var"};
  for (int k : ks) cols.push_back("recall_at_" + std::to_string(k));
  cols.push_back("nmi");
  cols.push_back("f1");
  return cols;
}

/// One row per logged iteration (iteration 0 carries only metrics); metric
/// cells are empty between evaluations.
inline std::string compare_csv(const std::vector<std::string>& names, const std::vector<RunLog>& logs) {
  const auto& ks = logs.front().recall_ks;
  const auto cols = compare_columns(ks);
  std::ostringstream os;
  os << "iter";
  for (const auto& n : names) {
    for (const auto& c : cols) os << ',' << n << '_' << c;
  }
  os << '\n';
  long last = 0;
  for (const auto& l : logs) {
    if (!l.records.empty()) last = std::max(last, l.records.back().iter);
  }
  for (long it = 0; it <= last; ++it) {
    os << it;
    for (const auto& l : logs) {
      const IterRecord* rec = nullptr;
      if (it >= 1 && static_cast<std::size_t>(it) <= l.records.size()) rec = &l.records[static_cast<std::size_t>(it - 1)];
      const MetricRecord* met = nullptr;
      for (const auto& m : l.metrics) {
        if (m.iter == it) met = &m;
      }
      auto cell = [&](bool present, double v) { os << ',' << (present ? format_double(v) : std::string()); };
      cell(rec, rec ? rec->loss : 0);
      cell(rec, rec ? rec->sec_loss : 0);
      cell(rec, rec ? rec->norm_mean : 0);
      cell(rec, rec ? rec->norm_var : 0);
      cell(rec, rec ? rec->dtheta_var : 0);
      for (std::size_t k = 0; k < ks.size(); ++k) cell(met && k < met->recall.size(), met && k < met->recall.size() ? met->recall[k] : 0);
      cell(met && met->clustering_ok, met ? met->nmi : 0);
      cell(met && met->clustering_ok, met ? met->f1 : 0);
    }
    os << '\n';
  }
  return os.str();
}

/// Final norm statistics and metrics per variant, with deltas against the
/// first variant.
inline Json compare_summary(const std::vector<std::string>& names, const std::vector<RunLog>& logs) {
  using io_detail::number;
  auto finals = [](const RunLog& l) {
    Json f = {{"status", l.diverged ? "diverged" : "ok"}};
    if (!l.diverged) {
      f["norm_mean"] = number(l.final_norms.mean);
      f["norm_var"] = number(l.final_norms.variance);
    }
    if (!l.metrics.empty()) {
      const auto m = io_detail::metric_json(l.metrics.back(), l.recall_ks);
      f["iter"] = m["iter"];
      f["recall"] = m["recall"];
      f["nmi"] = m["nmi"];
      f["f1"] = m["f1"];
    }
    return f;
  };
  const Json ref = finals(logs.front());
  Json variants = Json::array();
  for (std::size_t v = 0; v < logs.size(); ++v) {
    Json f = finals(logs[v]);
    Json delta = Json::object();
    for (const char* key : {"norm_mean", "norm_var", "nmi", "f1"}) {
      if (f.contains(key) && ref.contains(key) && f[key].is_number() && ref[key].is_number()) {
        delta[key] = f[key].get<double>() - ref[key].get<double>();
      }
    }
    if (f.contains("recall") && ref.contains("recall")) {
      Json r = Json::object();
      for (const auto& [k, val] : f["recall"].items()) {
        if (val.is_number() && ref["recall"].contains(k) && ref["recall"][k].is_number()) {
          r[k] = val.get<double>() - ref["recall"][k].get<double>();
        }
      }
      delta["recall"] = r;
    }
    variants.push_back({{"name", names[v]}, {"final", f}, {"delta", delta}});
  }
  return {{"reference", names.front()}, {"variants", variants}};
}

}  // namespace spherelab
