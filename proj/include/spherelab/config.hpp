#pragma once

// JSON run configuration: parsing with unknown-key rejection, dotted-path
// overrides, and a serializer whose output parses back to the same config.

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spherelab/train.hpp"

namespace spherelab {

using Json = nlohmann::json;

namespace config_detail {

inline std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigError, "'" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  }
}

inline void reject_unknown(const Json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  require_object(j, path);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw Error(ErrorCode::ConfigError, "unknown key '" + join(path, key) + "'");
  }
}

template <class T>
void read(const Json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    const Json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
          throw std::invalid_argument("expected a non-negative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    out = v.get<T>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ConfigError, "bad value for '" + join(path, key) + "': " + e.what());
  }
}

template <class Enum, std::size_t N>
Enum parse_enum(const Json& j, const std::string& path, const char* key, const Enum (&values)[N], Enum fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (v.is_string()) {
    for (Enum e : values) {
      if (to_string(e) == v.get<std::string>()) return e;
    }
  }
  std::string options;
  for (Enum e : values) options += (options.empty() ? "" : ", ") + std::string(to_string(e));
  throw Error(ErrorCode::ConfigError, "bad value for '" + join(path, key) + "': expected one of " + options);
}

inline constexpr LossKind kLossKinds[] = {LossKind::triplet,          LossKind::semihard_triplet, LossKind::npair,
                                          LossKind::multi_similarity, LossKind::cos_softmax,      LossKind::ntxent};
inline constexpr Distance kDistances[] = {Distance::normalized_euclidean, Distance::cosine};
inline constexpr SoftmaxVariant kVariants[] = {SoftmaxVariant::plain, SoftmaxVariant::sphereface, SoftmaxVariant::cosface,
                                               SoftmaxVariant::arcface};
inline constexpr RegularizerKind kRegularizers[] = {RegularizerKind::none, RegularizerKind::sec, RegularizerKind::l2reg};
inline constexpr MuMode kMuModes[] = {MuMode::batch_mean, MuMode::fixed, MuMode::ema};
inline constexpr MuInit kMuInits[] = {MuInit::first_batch, MuInit::full_pass};
inline constexpr EtaSchedule kSchedules[] = {EtaSchedule::constant, EtaSchedule::linear_ramp, EtaSchedule::capped_ramp,
                                             EtaSchedule::warmup_epochs};
inline constexpr OptimizerKind kOptimizers[] = {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adam};
inline constexpr AdamMoment kMoments[] = {AdamMoment::per_coordinate, AdamMoment::per_row};
inline constexpr ModelKind kModels[] = {ModelKind::free_table, ModelKind::mlp};

/// loss.kind additionally accepts "none": train on the regularizer alone.
inline void parse_loss(const Json& j, RunConfig& cfg) {
  const std::string path = "loss";
  reject_unknown(j, path, {"kind", "margin", "scale", "temperature", "distance", "softmax_variant", "ms"});
  if (j.contains("kind") && j.at("kind") == "none") {
    cfg.metric_loss = false;
  } else {
    cfg.metric_loss = true;
    const LossKind kind = parse_enum(j, path, "kind", kLossKinds, cfg.loss.kind);
    const SoftmaxVariant variant = parse_enum(j, path, "softmax_variant", kVariants, SoftmaxVariant::cosface);
    // Defaults follow the kind (and softmax variant); explicit keys override.
    cfg.loss = LossConfig::defaults(kind, variant);
  }
  read(j, path, "margin", cfg.loss.margin);
  read(j, path, "scale", cfg.loss.scale);
  read(j, path, "temperature", cfg.loss.temperature);
  cfg.loss.distance = parse_enum(j, path, "distance", kDistances, cfg.loss.distance);
  if (j.contains("ms")) {
    const Json& ms = j.at("ms");
    reject_unknown(ms, "loss.ms", {"epsilon", "lambda", "alpha", "beta"});
    read(ms, "loss.ms", "epsilon", cfg.loss.ms.epsilon);
    read(ms, "loss.ms", "lambda", cfg.loss.ms.lambda);
    read(ms, "loss.ms", "alpha", cfg.loss.ms.alpha);
    read(ms, "loss.ms", "beta", cfg.loss.ms.beta);
  }
}

}  // namespace config_detail

/// Parses the regularizer object on top of `base`.
inline RegularizerConfig parse_regularizer(const Json& j, RegularizerConfig base, const std::string& path = "regularizer") {
  using namespace config_detail;
  reject_unknown(j, path, {"kind", "mu_mode", "mu", "rho", "mu_init", "eta", "schedule", "start_epoch", "epoch_length"});
  base.kind = parse_enum(j, path, "kind", kRegularizers, base.kind);
  base.mu_mode = parse_enum(j, path, "mu_mode", kMuModes, base.mu_mode);
  read(j, path, "mu", base.mu_fixed);
  read(j, path, "rho", base.rho);
  base.mu_init = parse_enum(j, path, "mu_init", kMuInits, base.mu_init);
  read(j, path, "eta", base.eta);
  base.schedule = parse_enum(j, path, "schedule", kSchedules, base.schedule);
  read(j, path, "start_epoch", base.start_epoch);
  read(j, path, "epoch_length", base.epoch_length);
  return base;
}

/// Builds a RunConfig from JSON. Missing keys keep their defaults; unknown
/// keys and ill-typed values raise ConfigError naming the dotted key.
inline RunConfig config_from_json(const Json& j) {
  using namespace config_detail;
  reject_unknown(j, "",
                 {"seed", "iterations", "eval_interval", "recall_ks", "cluster_metrics", "hist_bins", "output_dir",
                  "dataset", "model", "batch", "loss", "regularizer", "optimizer"});
  RunConfig cfg;
  read(j, "", "seed", cfg.seed);
  read(j, "", "iterations", cfg.iterations);
  read(j, "", "eval_interval", cfg.eval_interval);
  read(j, "", "cluster_metrics", cfg.cluster_metrics);
  read(j, "", "hist_bins", cfg.hist_bins);
  read(j, "", "output_dir", cfg.output_dir);
  if (j.contains("recall_ks")) {
    const Json& ks = j.at("recall_ks");
    if (!ks.is_array()) throw Error(ErrorCode::ConfigError, "bad value for 'recall_ks': expected an array of integers");
    cfg.recall_ks.clear();
    for (const auto& k : ks) {
      if (!k.is_number_integer() || k.get<long long>() < 1) {
        throw Error(ErrorCode::ConfigError, "bad value for 'recall_ks': expected positive integers");
      }
      cfg.recall_ks.push_back(k.get<int>());
    }
    if (!std::is_sorted(cfg.recall_ks.begin(), cfg.recall_ks.end())) {
      throw Error(ErrorCode::ConfigError, "bad value for 'recall_ks': must be sorted ascending");
    }
  }
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    reject_unknown(d, "dataset", {"classes", "per_class", "dim_in", "spread", "sigma", "seed"});
    read(d, "dataset", "classes", cfg.dataset.classes);
    read(d, "dataset", "per_class", cfg.dataset.per_class);
    read(d, "dataset", "dim_in", cfg.dataset.dim_in);
    read(d, "dataset", "spread", cfg.dataset.spread);
    read(d, "dataset", "sigma", cfg.dataset.sigma);
    read(d, "dataset", "seed", cfg.dataset.seed);
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    reject_unknown(m, "model", {"kind", "dim", "hidden", "init_scale"});
    cfg.model.kind = parse_enum(m, "model", "kind", kModels, cfg.model.kind);
    read(m, "model", "dim", cfg.model.dim);
    read(m, "model", "hidden", cfg.model.hidden);
    read(m, "model", "init_scale", cfg.model.init_scale);
  }
  if (j.contains("batch")) {
    const Json& b = j.at("batch");
    reject_unknown(b, "batch", {"classes_per_batch", "samples_per_class"});
    read(b, "batch", "classes_per_batch", cfg.batch.classes_per_batch);
    read(b, "batch", "samples_per_class", cfg.batch.samples_per_class);
  }
  if (j.contains("loss")) parse_loss(j.at("loss"), cfg);
  if (j.contains("regularizer")) cfg.regularizer = parse_regularizer(j.at("regularizer"), cfg.regularizer);
  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    reject_unknown(o, "optimizer", {"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon", "adam_moment"});
    cfg.optimizer.kind = parse_enum(o, "optimizer", "kind", kOptimizers, cfg.optimizer.kind);
    read(o, "optimizer", "learning_rate", cfg.optimizer.lr);
    read(o, "optimizer", "momentum", cfg.optimizer.momentum);
    read(o, "optimizer", "beta1", cfg.optimizer.beta1);
    read(o, "optimizer", "beta2", cfg.optimizer.beta2);
    read(o, "optimizer", "epsilon", cfg.optimizer.epsilon);
    cfg.optimizer.adam_moment = parse_enum(o, "optimizer", "adam_moment", kMoments, cfg.optimizer.adam_moment);
  }
  try {
    validate(cfg);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return cfg;
}

inline Json regularizer_to_json(const RegularizerConfig& r) {
  return {{"kind", to_string(r.kind)},
          {"mu_mode", to_string(r.mu_mode)},
          {"mu", r.mu_fixed},
          {"rho", r.rho},
          {"mu_init", to_string(r.mu_init)},
          {"eta", r.eta},
          {"schedule", to_string(r.schedule)},
          {"start_epoch", r.start_epoch},
          {"epoch_length", r.epoch_length}};
}

/// Every field, so the echo alone reproduces the run.
inline Json config_to_json(const RunConfig& c) {
  Json loss = {{"kind", c.metric_loss ? std::string(to_string(c.loss.kind)) : std::string("none")},
               {"margin", c.loss.margin},
               {"scale", c.loss.scale},
               {"temperature", c.loss.temperature},
               {"distance", to_string(c.loss.distance)},
               {"softmax_variant", to_string(c.loss.softmax_variant)},
               {"ms",
                {{"epsilon", c.loss.ms.epsilon},
                 {"lambda", c.loss.ms.lambda},
                 {"alpha", c.loss.ms.alpha},
                 {"beta", c.loss.ms.beta}}}};
  return {{"seed", c.seed},
          {"iterations", c.iterations},
          {"eval_interval", c.eval_interval},
          {"recall_ks", c.recall_ks},
          {"cluster_metrics", c.cluster_metrics},
          {"hist_bins", c.hist_bins},
          {"output_dir", c.output_dir},
          {"dataset",
           {{"classes", c.dataset.classes},
            {"per_class", c.dataset.per_class},
            {"dim_in", c.dataset.dim_in},
            {"spread", c.dataset.spread},
            {"sigma", c.dataset.sigma},
            {"seed", c.dataset.seed}}},
          {"model",
           {{"kind", to_string(c.model.kind)},
            {"dim", c.model.dim},
            {"hidden", c.model.hidden},
            {"init_scale", c.model.init_scale}}},
          {"batch",
           {{"classes_per_batch", c.batch.classes_per_batch}, {"samples_per_class", c.batch.samples_per_class}}},
          {"loss", loss},
          {"regularizer", regularizer_to_json(c.regularizer)},
          {"optimizer",
           {{"kind", to_string(c.optimizer.kind)},
            {"learning_rate", c.optimizer.lr},
            {"momentum", c.optimizer.momentum},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon},
            {"adam_moment", to_string(c.optimizer.adam_moment)}}}};
}

/// Applies `a.b.c=value` to the JSON tree, creating intermediate objects.
/// The value is parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(Json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::ConfigError, "override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorCode::ConfigError, "override key '" + path + "' has an empty segment");
    if (!node->is_object()) throw Error(ErrorCode::ConfigError, "override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Json j = Json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigError, "'" + path + "' is not valid JSON");
  return j;
}

/// Reads a config file (or starts from defaults when `path` is empty) and
/// applies overrides in order.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  Json j = path.empty() ? Json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

}  // namespace spherelab
