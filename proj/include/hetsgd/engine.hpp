#pragma once

// Coordinator/worker runtime. One coordinator thread owns the global model,
// the epoch's shuffled data and the scheduler; it answers every ScheduleWork
// message sequentially. Each worker is a thread with its own inbox and, for
// multi-threaded workers, a ThreadTeam. The global model is the only shared
// mutable object; all writes to it are word-atomic relaxed stores.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hetsgd/dataset.hpp"
#include "hetsgd/errors.hpp"
#include "hetsgd/message_queue.hpp"
#include "hetsgd/nn_model.hpp"
#include "hetsgd/policies.hpp"
#include "hetsgd/thread_team.hpp"

namespace hetsgd {

using Clock = std::chrono::steady_clock;

struct MessageToCoordinator {
  enum class Kind { ScheduleWork, PartialLoss, Halt };
  Kind kind = Kind::ScheduleWork;
  std::size_t workerId = 0;
  double updateCount = 0.0;  // cumulative u^E
  double partialLossSum = 0.0;
  std::size_t exampleCount = 0;
  std::string error;  // Halt only
};

struct MessageToWorker {
  enum class Kind { ExecuteWork, EvaluateLoss, Stop };
  Kind kind = Kind::Stop;
  BatchRef batch;
  double learningRate = 0.0;
  std::size_t epochId = 0;
  std::shared_ptr<const Model> snapshot;  // EvaluateLoss only
};

/// Splits `length` into min(parts, length) contiguous pieces, the first
/// (length % parts) of them one longer.
inline std::vector<std::pair<std::size_t, std::size_t>> splitEvenly(std::size_t length, std::size_t parts) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = std::min(parts, length);
  if (n == 0) return out;
  const std::size_t base = length / n;
  const std::size_t extra = length % n;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.emplace_back(offset, len);
    offset += len;
  }
  return out;
}

/// Hogwild inside a batch: every sub-batch computes its gradient on the
/// shared model and applies it without any locking. Returns t' * beta where
/// t' is the number of sub-batches actually run.
inline double workerExecuteHogwildSharded(Model& global, const BatchRef& batch, ThreadTeam& team, double eta,
                                          double beta) {
  if (batch.length == 0) throw PreconditionError("empty batch");
  const auto pieces = splitEvenly(batch.length, team.size());
  team.run(pieces.size(), [&](std::size_t i) {
    const BatchRef sub = batch.sub(pieces[i].first, pieces[i].second);
    const Gradient g = computeGradient<SharedAccess>(global, sub.features(), sub.labels());
    applyUpdate(global, g, eta);
  });
  return static_cast<double>(pieces.size()) * beta;
}

/// Gradient of the whole batch on a private model, split over the team and
/// recombined as a length-weighted mean. A team of one is a plain
/// computeGradient call.
inline Gradient replicaGradient(const Model& replica, const BatchRef& batch, ThreadTeam& team) {
  if (team.size() == 1) return computeGradient(replica, batch.features(), batch.labels());
  const auto pieces = splitEvenly(batch.length, team.size());
  std::vector<Gradient> parts(pieces.size());
  team.run(pieces.size(), [&](std::size_t i) {
    const BatchRef sub = batch.sub(pieces[i].first, pieces[i].second);
    parts[i] = computeGradient(replica, sub.features(), sub.labels());
  });
  Gradient total = std::move(parts[0]);
  const double w0 = static_cast<double>(pieces[0].second) / static_cast<double>(batch.length);
  for (auto& m : total.perLayer)
    for (double& x : m.values()) x *= w0;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const double w = static_cast<double>(pieces[p].second) / static_cast<double>(batch.length);
    for (std::size_t l = 0; l < total.perLayer.size(); ++l) axpyInPlace(total.perLayer[l], parts[p].perLayer[l], w);
  }
  return total;
}

/// Emulated accelerator step: gradient on a deep copy, then a stale merge
/// into whatever the global model is now. Returns 1 update.
inline double workerExecuteBatchReplica(Model& global, const BatchRef& batch, ThreadTeam& team, double eta) {
  if (batch.length == 0) throw PreconditionError("empty batch");
  const Model replica = deepCopy(global);
  const Gradient g = replicaGradient(replica, batch, team);
  applyUpdate(global, g, eta);
  return 1.0;
}

/// Sum of per-example losses over `range`, forward passes in row blocks.
inline double partialLossSum(const Model& model, const BatchRef& range, std::size_t blockRows = 4096) {
  double acc = 0.0;
  for (std::size_t off = 0; off < range.length; off += blockRows) {
    const BatchRef block = range.sub(off, std::min(blockRows, range.length - off));
    accumulateCrossEntropy(forward(model, block.features()), block.labels(), acc);
  }
  return acc;
}

struct TrainingOptions {
  std::size_t epochs = 1;
  double wallClockBudgetSec = 0.0;  // <= 0: unlimited
  std::uint64_t seed = 0;
  bool reshuffle = true;           // fresh permutation each epoch, else one fixed permutation
  bool strictBatchGuard = false;   // idle a worker whose batch exceeds the remaining data
  std::size_t lossEveryEpochs = 1; // 0: only initial and final loss
  std::size_t lossEveryBatches = 0;
  bool recordAssignments = false;
};

struct LossSample {
  double wallClockMs = 0.0;
  double epochFraction = 0.0;
  double loss = 0.0;
};

struct BatchTracePoint {
  double timeMs = 0.0;
  std::size_t workerId = 0;
  std::size_t batchSize = 0;
};

struct Assignment {
  std::size_t epoch = 0;
  std::size_t workerId = 0;
  std::size_t startRow = 0;
  std::size_t length = 0;
};

struct RunMetrics {
  std::vector<LossSample> samples;
  std::vector<double> perWorkerUpdates;      // coordinator's last reported u^E
  std::vector<double> perWorkerUpdateTally;  // worker-side sum of update deltas
  std::vector<double> perWorkerBusyMs;
  std::vector<std::size_t> perWorkerBatches;
  std::vector<std::size_t> perWorkerExamples;
  std::vector<BatchTracePoint> batchSizeTrace;
  std::vector<Assignment> assignments;
  double trainingWallMs = 0.0;
  std::size_t epochsCompleted = 0;
  bool budgetExpired = false;
  std::size_t messagesSent = 0;
  std::size_t messagesReceived = 0;
};

namespace detail {

class WorkerRuntime {
 public:
  WorkerRuntime(WorkerConfig config, Model& global, MessageQueue<MessageToCoordinator>& outbox, double beta)
      : config_(std::move(config)), global_(global), outbox_(outbox), beta_(beta), team_(config_.threads) {
    thread_ = std::thread([this] { loop(); });
  }

  WorkerRuntime(const WorkerRuntime&) = delete;
  WorkerRuntime& operator=(const WorkerRuntime&) = delete;

  ~WorkerRuntime() {
    inbox_.close();
    if (thread_.joinable()) thread_.join();
  }

  void post(MessageToWorker msg) { inbox_.send(std::move(msg)); }

  void stop() {
    try {
      inbox_.send(MessageToWorker{});  // default kind is Stop
    } catch (const QueueClosedError&) {
    }
    if (thread_.joinable()) thread_.join();
  }

  const WorkerConfig& config() const { return config_; }
  double updateTally() const { return tally_.load(); }
  double busyMs() const { return busyMs_.load(); }
  std::size_t batches() const { return batches_.load(); }
  std::size_t examples() const { return examples_.load(); }

 private:
  void loop() {
    while (auto msg = inbox_.receive()) {
      try {
        switch (msg->kind) {
          case MessageToWorker::Kind::Stop:
            return;
          case MessageToWorker::Kind::ExecuteWork:
            execute(*msg);
            break;
          case MessageToWorker::Kind::EvaluateLoss:
            outbox_.send({MessageToCoordinator::Kind::PartialLoss, config_.workerId, updates_,
                          partialLossSum(*msg->snapshot, msg->batch), msg->batch.length, {}});
            break;
        }
      } catch (const QueueClosedError&) {
        return;
      } catch (const std::exception& e) {
        try {
          outbox_.send({MessageToCoordinator::Kind::Halt, config_.workerId, updates_, 0.0, 0, e.what()});
        } catch (const QueueClosedError&) {
        }
        return;
      }
    }
  }

  void execute(const MessageToWorker& msg) {
    const auto t0 = Clock::now();
    const double delta = config_.mode == WorkerMode::HogwildSharded
                             ? workerExecuteHogwildSharded(global_, msg.batch, team_, msg.learningRate, beta_)
                             : workerExecuteBatchReplica(global_, msg.batch, team_, msg.learningRate);
    const auto compute = Clock::now() - t0;
    if (config_.speedFactor > 0.0)
      std::this_thread::sleep_for(std::chrono::duration_cast<Clock::duration>(compute * config_.speedFactor));
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

    updates_ += delta;
    tally_.store(tally_.load() + delta);
    busyMs_.store(busyMs_.load() + ms);
    batches_.fetch_add(1);
    examples_.fetch_add(msg.batch.length);
    outbox_.send({MessageToCoordinator::Kind::ScheduleWork, config_.workerId, updates_, 0.0, 0, {}});
  }

  WorkerConfig config_;
  Model& global_;
  MessageQueue<MessageToCoordinator>& outbox_;
  MessageQueue<MessageToWorker> inbox_;
  double beta_;
  ThreadTeam team_;
  double updates_ = 0.0;
  std::atomic<double> tally_{0.0};
  std::atomic<double> busyMs_{0.0};
  std::atomic<std::size_t> batches_{0};
  std::atomic<std::size_t> examples_{0};
  std::thread thread_;
};

}  // namespace detail

/// Owns the global model and the worker threads for one training run.
class Coordinator {
 public:
  Coordinator(const Dataset& data, Model initial, std::vector<WorkerConfig> workers, PolicyConfig policy,
              TrainingOptions options)
      : data_(data), global_(std::move(initial)), scheduler_(policy, workers), options_(options) {
    data_.validate();
    if (data_.dim() != global_.arch.inputDim()) throw InputError("dataset width does not match the model input");
    if (data_.classCount > global_.arch.classCount()) throw InputError("dataset has more classes than the model");
    for (const auto& w : workers)
      workers_.push_back(std::make_unique<detail::WorkerRuntime>(w, global_, inbox_, policy.beta));
  }

  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  ~Coordinator() { shutdown(); }

  const Model& model() const { return global_; }
  const Scheduler& scheduler() const { return scheduler_; }
  std::size_t workerCount() const { return workers_.size(); }

  /// Global mean loss over the original training data. Rows are split
  /// across workers in proportion to 1 / (1 + speedFactor), every worker
  /// evaluates a frozen copy of the model. Workers must be idle.
  double evaluateLoss() {
    auto frozen = std::make_shared<const Model>(deepCopy(global_));
    std::vector<double> weights;
    double totalWeight = 0.0;
    for (const auto& w : workers_) {
      weights.push_back(1.0 / (1.0 + w->config().speedFactor));
      totalWeight += weights.back();
    }
    const std::size_t n = data_.size();
    std::size_t start = 0;
    std::size_t expected = 0;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < workers_.size(); ++i) {
      cumulative += weights[i];
      const std::size_t end =
          i + 1 == workers_.size() ? n : static_cast<std::size_t>(std::floor(n * (cumulative / totalWeight)));
      if (end > start) {
        sendTo(i, {MessageToWorker::Kind::EvaluateLoss, BatchRef{&data_, start, end - start}, 0.0, 0, frozen});
        ++expected;
      }
      start = std::max(start, end);
    }
    double sum = 0.0;
    std::size_t count = 0;
    while (expected > 0) {
      const MessageToCoordinator msg = receive();
      if (msg.kind != MessageToCoordinator::Kind::PartialLoss)
        throw RunError("unexpected message during loss evaluation");
      sum += msg.partialLossSum;
      count += msg.exampleCount;
      --expected;
    }
    return sum / static_cast<double>(count);
  }

  RunMetrics run() {
    if (ran_) throw PreconditionError("Coordinator::run may only be called once");
    ran_ = true;
    const std::size_t nw = workers_.size();
    metrics_ = RunMetrics{};
    metrics_.perWorkerUpdates.assign(nw, 0.0);
    decisions_.resize(nw);
    for (std::size_t w = 0; w < nw; ++w) {
      decisions_[w] = scheduler_.initial(w);
      trace(w);
    }

    record(0.0, evaluateLoss());
    const std::size_t n = data_.size();
    std::size_t sinceEval = 0;

    for (std::size_t epoch = 0; epoch < options_.epochs && !metrics_.budgetExpired; ++epoch) {
      if (options_.reshuffle || !epochData_)
        epochData_ = std::make_unique<Dataset>(
            reorder(data_, shuffleEpoch(data_, epochSeed(options_.seed, options_.reshuffle ? epoch : 0))));
      cursor_ = 0;
      epoch_ = epoch;
      resumeClock();

      std::vector<bool> idle(nw, true);
      std::size_t inflight = 0;
      bool pausedForEval = false;
      auto dispatchAll = [&] {
        for (std::size_t w = 0; w < nw; ++w)
          if (idle[w] && dispatch(w)) {
            idle[w] = false;
            ++inflight;
          }
      };
      dispatchAll();

      while (inflight > 0) {
        const MessageToCoordinator msg = receive();
        if (msg.kind != MessageToCoordinator::Kind::ScheduleWork) throw RunError("unexpected message during training");
        --inflight;
        idle[msg.workerId] = true;
        metrics_.perWorkerUpdates[msg.workerId] = msg.updateCount;
        decisions_[msg.workerId] = scheduler_.onScheduleWork(msg.workerId, msg.updateCount);
        trace(msg.workerId);
        ++sinceEval;

        if (options_.wallClockBudgetSec > 0 && elapsedMs() >= options_.wallClockBudgetSec * 1000.0)
          metrics_.budgetExpired = true;
        if (options_.lossEveryBatches > 0 && sinceEval >= options_.lossEveryBatches) pausedForEval = true;

        if (!metrics_.budgetExpired && !pausedForEval && dispatch(msg.workerId)) {
          idle[msg.workerId] = false;
          ++inflight;
        }
        if (inflight == 0 && pausedForEval && !metrics_.budgetExpired && cursor_ < n) {
          pauseClock();
          record(epochFraction(), evaluateLoss());
          resumeClock();
          sinceEval = 0;
          pausedForEval = false;
          dispatchAll();
        }
      }
      pauseClock();

      const bool complete = cursor_ == n || (options_.strictBatchGuard && !metrics_.budgetExpired);
      if (complete) ++metrics_.epochsCompleted;
      const bool last = epoch + 1 == options_.epochs || metrics_.budgetExpired;
      const bool cadence = options_.lossEveryEpochs > 0 && (epoch + 1) % options_.lossEveryEpochs == 0;
      if (last || cadence) {
        record(epochFraction(), evaluateLoss());
        sinceEval = 0;
      }
    }

    metrics_.trainingWallMs = elapsedMs();
    for (const auto& w : workers_) {
      metrics_.perWorkerUpdateTally.push_back(w->updateTally());
      metrics_.perWorkerBusyMs.push_back(w->busyMs());
      metrics_.perWorkerBatches.push_back(w->batches());
      metrics_.perWorkerExamples.push_back(w->examples());
    }
    shutdown();
    return metrics_;
  }

 private:
  bool dispatch(std::size_t w) {
    const std::size_t n = epochData_->size();
    const std::size_t remaining = n - cursor_;
    const std::size_t b = decisions_[w].batchSize;
    if (remaining == 0) return false;
    if (options_.strictBatchGuard && b > remaining) return false;
    const std::size_t len = std::min(b, remaining);
    sendTo(w, {MessageToWorker::Kind::ExecuteWork, BatchRef{epochData_.get(), cursor_, len},
               decisions_[w].learningRate, epoch_, nullptr});
    if (options_.recordAssignments) metrics_.assignments.push_back({epoch_, w, cursor_, len});
    cursor_ += len;
    return true;
  }

  void sendTo(std::size_t w, MessageToWorker msg) {
    workers_[w]->post(std::move(msg));
    ++metrics_.messagesSent;
  }

  MessageToCoordinator receive() {
    auto msg = inbox_.receive();
    if (!msg) throw RunError("coordinator inbox closed unexpectedly");
    ++metrics_.messagesReceived;
    if (msg->kind == MessageToCoordinator::Kind::Halt)
      throw RunError("worker " + std::to_string(msg->workerId) + " failed: " + msg->error);
    return std::move(*msg);
  }

  void trace(std::size_t w) { metrics_.batchSizeTrace.push_back({elapsedMs(), w, decisions_[w].batchSize}); }

  double epochFraction() const {
    return static_cast<double>(epoch_) + static_cast<double>(cursor_) / static_cast<double>(data_.size());
  }

  void record(double epochFraction, double loss) {
    double t = elapsedMs();
    if (!metrics_.samples.empty() && t <= metrics_.samples.back().wallClockMs)
      t = std::nextafter(metrics_.samples.back().wallClockMs, INFINITY);
    metrics_.samples.push_back({t, epochFraction, loss});
  }

  // Training clock: runs only while batches are being scheduled, so loss
  // evaluation and data reshuffling are excluded.
  void resumeClock() {
    if (!running_) {
      running_ = true;
      resumedAt_ = Clock::now();
    }
  }
  void pauseClock() {
    if (running_) {
      accumulated_ += Clock::now() - resumedAt_;
      running_ = false;
    }
  }
  double elapsedMs() const {
    auto total = accumulated_;
    if (running_) total += Clock::now() - resumedAt_;
    return std::chrono::duration<double, std::milli>(total).count();
  }

  void shutdown() {
    for (auto& w : workers_) w->stop();
    workers_.clear();
  }

  const Dataset& data_;
  Model global_;
  Scheduler scheduler_;
  TrainingOptions options_;
  MessageQueue<MessageToCoordinator> inbox_;
  std::vector<std::unique_ptr<detail::WorkerRuntime>> workers_;
  std::vector<PolicyDecision> decisions_;
  std::unique_ptr<Dataset> epochData_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  RunMetrics metrics_;
  bool ran_ = false;
  bool running_ = false;
  Clock::time_point resumedAt_{};
  Clock::duration accumulated_{};
};

struct TrainingResult {
  RunMetrics metrics;
  Model model;
};

inline TrainingResult runTraining(const Dataset& data, Model initial, std::vector<WorkerConfig> workers,
                                  PolicyConfig policy, TrainingOptions options) {
  Coordinator c(data, std::move(initial), std::move(workers), std::move(policy), options);
  RunMetrics m = c.run();
  return {std::move(m), c.model()};
}

}  // namespace hetsgd
