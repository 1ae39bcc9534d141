#pragma once

// Batch-size policies consulted by the coordinator on every ScheduleWork
// message: uniform Hogbatch, fixed CPU+GPU Hogbatch, and Adaptive Hogbatch.
// Everything here is single-threaded decision logic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "hetsgd/errors.hpp"

namespace hetsgd {

enum class WorkerMode {
  HogwildSharded,  // t threads update the shared model by reference (CPU path)
  BatchReplica,    // gradient on a deep copy, stale merge into the global model (GPU path)
};

enum class ReplicaMode { Reference, DeepCopy };

struct WorkerConfig {
  std::size_t workerId = 0;
  WorkerMode mode = WorkerMode::HogwildSharded;
  std::size_t threads = 1;
  ReplicaMode replicaMode = ReplicaMode::Reference;
  double speedFactor = 0.0;  // sleep speedFactor x compute time after each batch
  std::size_t minBatch = 1;
  std::size_t maxBatch = 1;

  /// Size of the batch each gradient is averaged over: the per-thread
  /// sub-batch for sharded workers, the whole batch for replicas.
  double gradientBatch(std::size_t batchSize) const {
    return mode == WorkerMode::HogwildSharded ? static_cast<double>(batchSize) / static_cast<double>(threads)
                                              : static_cast<double>(batchSize);
  }

  void validate() const {
    const std::string who = "worker " + std::to_string(workerId) + ": ";
    if (threads < 1) throw ConfigError(who + "threads must be >= 1");
    if (minBatch < 1) throw ConfigError(who + "min batch must be >= 1");
    if (minBatch > maxBatch) throw ConfigError(who + "min batch exceeds max batch");
    if (!(speedFactor >= 0.0)) throw ConfigError(who + "speed factor must be >= 0");
    if (mode == WorkerMode::BatchReplica && replicaMode != ReplicaMode::DeepCopy)
      throw ConfigError(who + "batch replica workers require deep-copy replicas");
    if (mode == WorkerMode::HogwildSharded && replicaMode != ReplicaMode::Reference)
      throw ConfigError(who + "sharded workers operate on the model by reference");
  }
};

/// Sharded CPU worker with thresholds [t, 64t].
inline WorkerConfig shardedWorker(std::size_t id, std::size_t threads, double speedFactor = 0.0,
                                  std::size_t minPerThread = 1, std::size_t maxPerThread = 64) {
  return {id, WorkerMode::HogwildSharded, threads, ReplicaMode::Reference, speedFactor,
          threads * minPerThread, threads * maxPerThread};
}

inline WorkerConfig replicaWorker(std::size_t id, std::size_t minBatch, std::size_t maxBatch,
                                  double speedFactor = 0.0, std::size_t threads = 1) {
  return {id, WorkerMode::BatchReplica, threads, ReplicaMode::DeepCopy, speedFactor, minBatch, maxBatch};
}

/// eta_E = baseEta * gradientBatch / referenceBatch when proportional,
/// baseEta otherwise.
struct LearningRateRule {
  double baseEta = 0.01;
  double referenceBatch = 1.0;
  bool proportional = true;

  double rateFor(double gradientBatch) const {
    return proportional ? baseEta * gradientBatch / referenceBatch : baseEta;
  }
};

/// Smallest configured per-gradient minimum batch across the roster.
inline double smallestGradientBatch(const std::vector<WorkerConfig>& workers) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : workers) best = std::min(best, w.gradientBatch(w.minBatch));
  return best;
}

struct PolicyDecision {
  std::size_t batchSize = 1;
  double learningRate = 0.0;
};

enum class PolicyKind { Uniform, FixedHeterogeneous, Adaptive };

enum class ThresholdMode {
  RecomputeOthers,  // min_u / max_u over every worker except the reporter
  Literal,          // running scalars, reassigned only by the worker crossing them
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Adaptive;
  std::size_t uniformBatch = 1;
  std::size_t cpuBatchPerThread = 1;
  std::size_t gpuBatch = 8192;
  double alpha = 2.0;
  double beta = 1.0;
  ThresholdMode thresholds = ThresholdMode::RecomputeOthers;
  LearningRateRule lr;
};

/// Same batch for everyone, constant rate.
inline PolicyDecision uniformHogbatch(std::size_t /*workerId*/, std::size_t fixedB, double eta) {
  if (fixedB < 1) throw ConfigError("uniform batch size must be >= 1");
  return {fixedB, eta};
}

/// t x cpuBatchPerThread for sharded workers, gpuBatch for replicas.
inline PolicyDecision fixedHeterogeneous(const WorkerConfig& worker, std::size_t cpuBatchPerThread,
                                         std::size_t gpuBatch, const LearningRateRule& lr) {
  const std::size_t b =
      worker.mode == WorkerMode::HogwildSharded ? worker.threads * cpuBatchPerThread : gpuBatch;
  if (b < 1) throw ConfigError("fixed heterogeneous batch size must be >= 1");
  return {b, lr.rateFor(worker.gradientBatch(b))};
}

struct AdaptiveWorker {
  WorkerConfig config;
  std::size_t batch = 1;  // b^E
  double updates = 0.0;   // u^E, fractional because of beta
  bool reported = false;
};

struct AdaptiveState {
  std::vector<AdaptiveWorker> workers;
  double minU = 0.0;
  double maxU = 0.0;
  double alpha = 2.0;
  ThresholdMode thresholds = ThresholdMode::RecomputeOthers;
  LearningRateRule lr;

  AdaptiveWorker& at(std::size_t workerId) {
    if (workerId >= workers.size()) throw ConfigError("unknown worker " + std::to_string(workerId));
    return workers[workerId];
  }

  PolicyDecision decisionFor(std::size_t workerId) {
    const AdaptiveWorker& w = at(workerId);
    return {w.batch, lr.rateFor(w.config.gradientBatch(w.batch))};
  }
};

/// Replicas start at their upper threshold; sharded workers start at one
/// example per thread. Both clamped into [min_b, max_b].
inline std::vector<std::size_t> initialSizes(const std::vector<WorkerConfig>& workers) {
  std::vector<std::size_t> out;
  out.reserve(workers.size());
  for (const auto& w : workers) {
    w.validate();
    const std::size_t b = w.mode == WorkerMode::BatchReplica ? w.maxBatch : w.threads;
    out.push_back(std::clamp(b, w.minBatch, w.maxBatch));
  }
  return out;
}

inline AdaptiveState makeAdaptiveState(const std::vector<WorkerConfig>& workers, double alpha,
                                       ThresholdMode thresholds, const LearningRateRule& lr) {
  if (!(alpha > 1.0)) throw ConfigError("alpha must be > 1");
  AdaptiveState s;
  s.alpha = alpha;
  s.thresholds = thresholds;
  s.lr = lr;
  const auto sizes = initialSizes(workers);
  for (std::size_t i = 0; i < workers.size(); ++i) {
    if (workers[i].workerId != i) throw ConfigError("worker ids must be 0..n-1 in order");
    s.workers.push_back({workers[i], sizes[i], 0.0, false});
  }
  return s;
}

/// The coordinator's ScheduleWork handler of Adaptive Hogbatch: the
/// reporter shrinks by alpha when it trails min_u and grows by alpha when it
/// leads max_u, clamped to its thresholds. A worker's first report only
/// records its count.
inline PolicyDecision adaptiveUpdate(AdaptiveState& state, std::size_t workerId, double reportedU) {
  AdaptiveWorker& w = state.at(workerId);
  if (reportedU < w.updates) throw PreconditionError("update count went backwards");
  w.updates = reportedU;
  if (!w.reported) {
    w.reported = true;
    return state.decisionFor(workerId);
  }

  if (state.thresholds == ThresholdMode::RecomputeOthers) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < state.workers.size(); ++i) {
      if (i == workerId) continue;
      lo = std::min(lo, state.workers[i].updates);
      hi = std::max(hi, state.workers[i].updates);
    }
    if (state.workers.size() == 1) lo = hi = reportedU;
    state.minU = lo;
    state.maxU = hi;
  }

  const double b = static_cast<double>(w.batch);
  if (reportedU < state.minU) {
    const auto shrunk = static_cast<std::size_t>(std::floor(b / state.alpha));
    w.batch = std::max(std::max<std::size_t>(shrunk, 1), w.config.minBatch);
    state.minU = reportedU;
  } else if (reportedU > state.maxU) {
    const auto grown = static_cast<std::size_t>(std::floor(b * state.alpha));
    w.batch = std::min(grown, w.config.maxBatch);
    state.maxU = reportedU;
  }
  return state.decisionFor(workerId);
}

/// Policy dispatcher owned by the coordinator.
class Scheduler {
 public:
  Scheduler(PolicyConfig config, std::vector<WorkerConfig> workers)
      : config_(std::move(config)), workers_(std::move(workers)) {
    if (workers_.empty()) throw ConfigError("at least one worker is required");
    for (std::size_t i = 0; i < workers_.size(); ++i) {
      workers_[i].validate();
      if (workers_[i].workerId != i) throw ConfigError("worker ids must be 0..n-1 in order");
    }
    if (!(config_.beta > 0.0)) throw ConfigError("beta must be > 0");
    if (config_.kind == PolicyKind::Adaptive)
      adaptive_ = makeAdaptiveState(workers_, config_.alpha, config_.thresholds, config_.lr);
  }

  PolicyDecision initial(std::size_t workerId) {
    const WorkerConfig& w = worker(workerId);
    switch (config_.kind) {
      case PolicyKind::Uniform:
        return uniformHogbatch(workerId, config_.uniformBatch, config_.lr.baseEta);
      case PolicyKind::FixedHeterogeneous:
        return fixedHeterogeneous(w, config_.cpuBatchPerThread, config_.gpuBatch, config_.lr);
      case PolicyKind::Adaptive:
        return adaptive_.decisionFor(workerId);
    }
    return {};
  }

  PolicyDecision onScheduleWork(std::size_t workerId, double reportedU) {
    if (config_.kind == PolicyKind::Adaptive) return adaptiveUpdate(adaptive_, workerId, reportedU);
    return initial(workerId);
  }

  const WorkerConfig& worker(std::size_t workerId) const {
    if (workerId >= workers_.size()) throw ConfigError("unknown worker " + std::to_string(workerId));
    return workers_[workerId];
  }

  const PolicyConfig& config() const { return config_; }
  const AdaptiveState& adaptiveState() const { return adaptive_; }

 private:
  PolicyConfig config_;
  std::vector<WorkerConfig> workers_;
  AdaptiveState adaptive_;
};

}  // namespace hetsgd
