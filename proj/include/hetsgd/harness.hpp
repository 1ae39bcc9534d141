#pragma once

// Experiment driver: flat key=value run configs, suite execution and CSV
// output of loss series, batch-size traces and per-worker summaries.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hetsgd/dataset.hpp"
#include "hetsgd/engine.hpp"
#include "hetsgd/errors.hpp"
#include "hetsgd/nn_model.hpp"
#include "hetsgd/policies.hpp"

namespace hetsgd {

class UndefinedRatioError : public std::domain_error {
 public:
  UndefinedRatioError() : std::domain_error("update ratio is undefined: no updates were applied") {}
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; later duplicates win.
inline KeyValues parseKeyValues(std::string_view text) {
  KeyValues kv;
  std::size_t lineNo = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    const std::string line = detail::trim(text.substr(pos, nl - pos));
    ++lineNo;
    pos = nl + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", lineNo);
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError("empty key", lineNo);
    kv[key] = detail::trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

inline KeyValues loadKeyValues(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parseKeyValues(ss.str());
}

/// Applies `--key=value` arguments on top of `kv`.
inline void applyOverrides(KeyValues& kv, const std::vector<std::string>& args) {
  for (const auto& a : args) {
    if (a.rfind("--", 0) != 0) throw ConfigError("override '" + a + "' must look like --key=value");
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 2) throw ConfigError("override '" + a + "' must look like --key=value");
    kv[a.substr(2, eq - 2)] = a.substr(eq + 1);
  }
}

struct DataSpec {
  std::string path;  // empty: synthetic
  std::size_t dim = 0;
  LabelMapping mapping = LabelMapping::ZeroOne;
  std::size_t rows = 20000;
  std::size_t classes = 2;
  double separation = 2.0;
  std::size_t subsample = 0;  // 0: keep everything
  bool scale = false;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DataSpec data;
  Architecture arch;
  InitScheme init = InitScheme::ScaledGaussian;
  PolicyConfig policy;
  std::optional<double> referenceBatch;  // unset: smallest per-gradient minimum batch
  std::vector<WorkerConfig> workers;
  TrainingOptions training;

  LearningRateRule learningRule() const {
    LearningRateRule lr = policy.lr;
    lr.referenceBatch = referenceBatch.value_or(smallestGradientBatch(workers));
    return lr;
  }
};

namespace detail {

class KeyReader {
 public:
  explicit KeyReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    const std::string* v = lookup(key);
    return v ? *v : fallback;
  }

  std::string required(const std::string& key) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key, double fallback) {
    const std::string* v = lookup(key);
    if (!v) return fallback;
    double out = 0;
    if (!parseDouble(*v, out)) throw ConfigError("key '" + key + "': '" + *v + "' is not a number");
    return out;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const std::string* v = lookup(key);
    return v ? parseCount(key, *v) : fallback;
  }

  std::uint64_t parseCount(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
      throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
    return out;
  }

  bool flag(const std::string& key, bool fallback) {
    const std::string* p = lookup(key);
    if (!p) return fallback;
    const std::string& v = *p;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
  }

  template <class E>
  E choice(const std::string& key, E fallback, std::initializer_list<std::pair<const char*, E>> options) {
    const std::string* p = lookup(key);
    if (!p) return fallback;
    const std::string& v = *p;
    std::string names;
    for (const auto& [name, value] : options) {
      if (v == name) return value;
      names += names.empty() ? name : std::string("|") + name;
    }
    throw ConfigError("key '" + key + "': '" + v + "' is not one of " + names);
  }

  void rejectUnknown() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  const std::string* lookup(const std::string& key) {
    used_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? nullptr : &it->second;
  }

  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Builds a validated RunConfig. Unknown keys are rejected so typos do not
/// silently fall back to defaults.
inline RunConfig parseRunConfig(const KeyValues& kv) {
  detail::KeyReader r(kv);
  RunConfig c;
  c.name = r.str("name", "run");
  c.seed = r.parseCount("seed", r.required("seed"));

  c.data.path = r.str("data.path", "");
  c.data.mapping = r.choice<LabelMapping>("data.labels", LabelMapping::ZeroOne,
                                          {{"zero_one", LabelMapping::ZeroOne},
                                           {"plus_minus_one", LabelMapping::PlusMinusOne},
                                           {"one_based", LabelMapping::OneBased}});
  c.data.dim = r.count("data.dim", 0);
  c.data.rows = r.count("data.rows", c.data.rows);
  c.data.classes = r.count("data.classes", c.data.classes);
  c.data.separation = r.real("data.separation", c.data.separation);
  c.data.subsample = r.count("data.subsample", 0);
  c.data.scale = r.flag("data.scale", false);
  if (!c.data.path.empty() && c.data.dim == 0) throw ConfigError("data.dim is required with data.path");
  if (c.data.path.empty() && c.data.dim == 0) c.data.dim = 54;

  c.arch = Architecture::parse(r.required("model.arch"));
  c.init = r.choice<InitScheme>("model.init", InitScheme::ScaledGaussian,
                                {{"scaled_gaussian", InitScheme::ScaledGaussian},
                                 {"sigmoid_gain", InitScheme::SigmoidGain},
                                 {"fan_in_std", InitScheme::FanInStd}});
  if (c.arch.inputDim() != c.data.dim)
    throw ConfigError("model.arch input width " + std::to_string(c.arch.inputDim()) + " != data.dim " +
                      std::to_string(c.data.dim));

  PolicyConfig& p = c.policy;
  p.kind = r.choice<PolicyKind>("policy", PolicyKind::Adaptive,
                                {{"uniform", PolicyKind::Uniform},
                                 {"fixed", PolicyKind::FixedHeterogeneous},
                                 {"adaptive", PolicyKind::Adaptive}});
  p.alpha = r.real("policy.alpha", p.alpha);
  p.beta = r.real("policy.beta", p.beta);
  p.thresholds = r.choice<ThresholdMode>("policy.thresholds", p.thresholds,
                                         {{"recompute", ThresholdMode::RecomputeOthers},
                                          {"literal", ThresholdMode::Literal}});
  p.uniformBatch = r.count("policy.uniform_batch", p.uniformBatch);
  p.cpuBatchPerThread = r.count("policy.cpu_batch_per_thread", p.cpuBatchPerThread);
  p.gpuBatch = r.count("policy.gpu_batch", p.gpuBatch);
  p.lr.baseEta = r.real("lr.base", p.lr.baseEta);
  p.lr.proportional = r.flag("lr.proportional", p.kind != PolicyKind::Uniform);
  if (r.has("lr.reference")) c.referenceBatch = r.real("lr.reference", 1.0);

  const std::size_t n = r.count("workers", 0);
  if (n == 0) throw ConfigError("workers must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string k = "worker." + std::to_string(i) + ".";
    WorkerConfig w;
    w.workerId = i;
    w.mode = r.choice<WorkerMode>(k + "mode", WorkerMode::HogwildSharded,
                                  {{"hogwild_sharded", WorkerMode::HogwildSharded},
                                   {"batch_replica", WorkerMode::BatchReplica}});
    w.replicaMode = w.mode == WorkerMode::BatchReplica ? ReplicaMode::DeepCopy : ReplicaMode::Reference;
    w.threads = r.count(k + "threads", 1);
    w.speedFactor = r.real(k + "speed", 0.0);
    if (w.mode == WorkerMode::HogwildSharded) {
      w.minBatch = r.count(k + "min_batch", w.threads);
      w.maxBatch = r.count(k + "max_batch", 64 * w.threads);
    } else {
      w.minBatch = r.count(k + "min_batch", 128);
      w.maxBatch = r.count(k + "max_batch", 8192);
    }
    w.validate();
    c.workers.push_back(w);
  }

  TrainingOptions& t = c.training;
  t.seed = c.seed;
  t.epochs = r.count("train.epochs", 1);
  t.wallClockBudgetSec = r.real("train.budget_sec", 0.0);
  t.reshuffle = r.flag("train.reshuffle", true);
  t.strictBatchGuard = r.flag("train.strict_guard", false);
  t.lossEveryEpochs = r.count("train.loss_every_epochs", 1);
  t.lossEveryBatches = r.count("train.loss_every_batches", 0);

  r.rejectUnknown();
  Scheduler(p, c.workers);  // validates the policy against the roster
  return c;
}

inline Dataset loadDataset(const DataSpec& spec, std::uint64_t seed) {
  Dataset ds = spec.path.empty()
                   ? syntheticBlobs(spec.rows, spec.dim, spec.classes, spec.separation, detail::splitmix64(seed ^ 0xda7a))
                   : loadLibsvm(spec.path, spec.dim, spec.mapping);
  if (spec.subsample > 0 && spec.subsample < ds.size()) ds = subsample(ds, spec.subsample, detail::splitmix64(seed ^ 0x5b5));
  if (spec.scale) minMaxScale(ds);
  return ds;
}

/// Model, data and policy wiring for one config; the dataset is supplied so
/// a suite can share it between runs.
inline TrainingResult runConfigured(const RunConfig& cfg, const Dataset& data) {
  PolicyConfig policy = cfg.policy;
  policy.lr = cfg.learningRule();
  return runTraining(data, initModel(cfg.arch, cfg.seed, cfg.init), cfg.workers, policy, cfg.training);
}

/// Busy time over training wall time per worker, clamped into [0, 1].
inline std::vector<double> utilizationProxy(const RunMetrics& m) {
  std::vector<double> out;
  for (double busy : m.perWorkerBusyMs)
    out.push_back(m.trainingWallMs > 0 ? std::clamp(busy / m.trainingWallMs, 0.0, 1.0) : 0.0);
  return out;
}

inline std::vector<double> updateRatio(const RunMetrics& m) {
  double total = 0;
  for (double u : m.perWorkerUpdates) total += u;
  if (!(total > 0)) throw UndefinedRatioError();
  std::vector<double> out;
  for (double u : m.perWorkerUpdates) out.push_back(u / total);
  return out;
}

inline double minimumLoss(const RunMetrics& m) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : m.samples) best = std::min(best, s.loss);
  return best;
}

namespace detail {

inline std::ofstream openCsv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.precision(17);
  return out;
}

}  // namespace detail

inline void writeLossCsv(const RunMetrics& m, double normalizer, const std::filesystem::path& path) {
  auto out = detail::openCsv(path);
  out << "wall_ms,epoch,loss,loss_normalized\n";
  for (const auto& s : m.samples)
    out << s.wallClockMs << ',' << s.epochFraction << ',' << s.loss << ',' << s.loss / normalizer << '\n';
}

inline void writeTraceCsv(const RunMetrics& m, const std::filesystem::path& path) {
  auto out = detail::openCsv(path);
  out << "wall_ms,worker,batch_size\n";
  for (const auto& p : m.batchSizeTrace) out << p.timeMs << ',' << p.workerId << ',' << p.batchSize << '\n';
}

inline void writeWorkerCsv(const RunMetrics& m, const std::filesystem::path& path) {
  auto out = detail::openCsv(path);
  out << "worker,updates,update_share,busy_ms,utilization,batches,examples\n";
  std::vector<double> shares(m.perWorkerUpdates.size(), 0.0);
  try {
    shares = updateRatio(m);
  } catch (const UndefinedRatioError&) {
  }
  const auto util = utilizationProxy(m);
  for (std::size_t w = 0; w < m.perWorkerUpdates.size(); ++w)
    out << w << ',' << m.perWorkerUpdates[w] << ',' << shares[w] << ',' << m.perWorkerBusyMs[w] << ',' << util[w]
        << ',' << m.perWorkerBatches[w] << ',' << m.perWorkerExamples[w] << '\n';
}

struct SuiteEntry {
  std::string name;
  bool ok = false;
  std::string error;
  RunMetrics metrics;
};

struct SuiteResult {
  std::vector<SuiteEntry> runs;
  double minimumLoss = std::numeric_limits<double>::infinity();
  std::size_t failures() const {
    return static_cast<std::size_t>(std::ranges::count_if(runs, [](const SuiteEntry& e) { return !e.ok; }));
  }
};

using SuiteProgress = std::function<void(const std::string& name, std::size_t index, std::size_t total)>;

/// Runs every config, then writes `<name>_loss.csv`, `<name>_trace.csv`,
/// `<name>_workers.csv` and `summary.csv` into outDir. Losses are
/// normalized by the smallest loss seen across the whole suite. A failing
/// run is recorded and the suite carries on.
inline SuiteResult runExperimentSuite(const std::vector<RunConfig>& configs, const std::filesystem::path& outDir,
                                      const SuiteProgress& progress = {}) {
  if (configs.empty()) throw ConfigError("experiment suite needs at least one config");
  std::filesystem::create_directories(outDir);
  SuiteResult result;
  std::map<std::string, std::shared_ptr<const Dataset>> cache;

  for (std::size_t i = 0; i < configs.size(); ++i) {
    const RunConfig& cfg = configs[i];
    if (progress) progress(cfg.name, i, configs.size());
    SuiteEntry entry{cfg.name, false, {}, {}};
    try {
      const DataSpec& d = cfg.data;
      std::ostringstream key;
      key << d.path << '|' << d.dim << '|' << static_cast<int>(d.mapping) << '|' << d.rows << '|' << d.classes << '|'
          << d.separation << '|' << d.subsample << '|' << d.scale << '|' << cfg.seed;
      auto& ds = cache[key.str()];
      if (!ds) ds = std::make_shared<const Dataset>(loadDataset(d, cfg.seed));
      entry.metrics = runConfigured(cfg, *ds).metrics;
      entry.ok = true;
      result.minimumLoss = std::min(result.minimumLoss, minimumLoss(entry.metrics));
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    result.runs.push_back(std::move(entry));
  }

  const double norm = std::isfinite(result.minimumLoss) && result.minimumLoss > 0 ? result.minimumLoss : 1.0;
  auto summary = detail::openCsv(outDir / "summary.csv");
  summary << "name,status,initial_loss,final_loss,min_loss,final_normalized,min_normalized,wall_ms,epochs,error\n";
  for (const auto& e : result.runs) {
    if (!e.ok) {
      std::string err = e.error;
      std::ranges::replace(err, ',', ';');
      std::ranges::replace(err, '\n', ' ');
      summary << e.name << ",failed,,,,,,,," << err << '\n';
      continue;
    }
    writeLossCsv(e.metrics, norm, outDir / (e.name + "_loss.csv"));
    writeTraceCsv(e.metrics, outDir / (e.name + "_trace.csv"));
    writeWorkerCsv(e.metrics, outDir / (e.name + "_workers.csv"));
    const auto& s = e.metrics.samples;
    const double lo = minimumLoss(e.metrics);
    summary << e.name << ",ok," << s.front().loss << ',' << s.back().loss << ',' << lo << ',' << s.back().loss / norm
            << ',' << lo / norm << ',' << e.metrics.trainingWallMs << ',' << e.metrics.epochsCompleted << ",\n";
  }
  return result;
}

}  // namespace hetsgd
