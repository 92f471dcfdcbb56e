#pragma once

#include <atomic>
#include <cstring>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "modc/barrier.hpp"
#include "modc/clock.hpp"
#include "modc/deque.hpp"
#include "modc/fault.hpp"
#include "modc/heartbeat.hpp"
#include "modc/namestore.hpp"
#include "modc/pool.hpp"

namespace modc {

using JobId = std::uint64_t;
using TaskId = std::uint64_t;
using FnId = std::uint64_t;

enum class TaskStatus : std::uint8_t { created = 0, waiting = 1, ready = 2, running = 3, done = 4 };
enum class JobState : std::uint64_t { unused = 0, gated = 1, enabled = 2, complete = 3 };
enum class WorkerRole : std::uint64_t { spare = 0, active = 1 };

/// Task status word: low byte is the status, the rest an attempt epoch that
/// recovery bumps when it hands a RUNNING task back to READY. A halted
/// attempt can therefore never complete a task someone else re-ran.
struct StatusWord {
  std::uint64_t epoch = 0;
  TaskStatus status = TaskStatus::created;

  std::uint64_t raw() const noexcept { return (epoch << 8) | static_cast<std::uint64_t>(status); }
  static StatusWord from(std::uint64_t raw) noexcept {
    return {raw >> 8, static_cast<TaskStatus>(raw & 0xff)};
  }
};

class TaskContext;
using TaskFn = std::function<void(TaskContext&)>;

struct RuntimeConfig {
  std::uint32_t workers = 8;
  std::uint32_t spares = 1;
  /// In clock ticks (virtual milliseconds for the virtual clock).
  std::uint64_t beat_period = 1;
  std::uint64_t suspicion_timeout = 50;
  std::optional<std::uint32_t> quorum;
  std::uint64_t deque_capacity = WorkQueue::default_capacity;
  std::uint64_t name_slots = NameStore::default_slots;
  std::uint32_t max_jobs = 4096;
  std::uint64_t seed = 1;
  bool compare_republish = false;
  std::optional<CrashPlan> crash;  // epoch = job id
  /// Further halts for multi-failure runs; they do not touch the crash stats.
  std::vector<CrashPlan> extra_crashes;
};

/// Instrumentation only; nothing here is needed for recovery.
struct RuntimeStats {
  std::atomic<std::uint64_t> tasks_spawned{0};
  std::atomic<std::uint64_t> tasks_started{0};  // successful READY->RUNNING
  std::atomic<std::uint64_t> tasks_done{0};
  std::atomic<std::uint64_t> tasks_reexecuted{0};  // RUNNING->READY by recovery
  std::atomic<std::uint64_t> steals_ok{0};
  std::atomic<std::uint64_t> steals_failed{0};
  std::atomic<std::uint64_t> concurrent_runs{0};  // two live attempts of one task at once
  std::atomic<std::uint64_t> pronouncements{0};
  std::atomic<std::uint64_t> spare_activations{0};
  std::atomic<std::uint64_t> zombie_halts{0};
  std::atomic<bool> crash_fired{false};
  std::atomic<std::uint64_t> crash_epoch{0};
  std::atomic<std::uint64_t> crash_queue_len{0};
  std::atomic<std::uint64_t> crash_tick{0};
  std::atomic<std::uint64_t> detect_tick{0};
  std::atomic<std::uint64_t> crash_wall_us{0};
  std::atomic<std::uint64_t> detect_wall_us{0};
};

/// Resilient task runtime over the pool. Workers are threads of this
/// process; every piece of scheduler state they share (job and task
/// descriptors, queues, running slots, barrier, heartbeats, named data)
/// lives in the pool, so a halted worker leaves behind exactly what a
/// survivor needs to finish its work. There is no coordinator: job
/// completion goes through the group barrier, failover through work
/// stealing and the running slots.
class Runtime {
 public:
  Runtime(Pool& pool, RuntimeConfig config, std::shared_ptr<Clock> clock);
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  void register_function(FnId id, TaskFn fn);

  /// Setup-time entry points, used by the workload manager before run().
  JobId spawn_job(std::optional<JobId> predecessor);
  TaskId submit(JobId job, FnId fn, std::span<const std::byte> args, std::vector<std::string> inputs,
                std::vector<std::string> outputs);

  /// Runs every job to completion. Throws Error(task_fault) if a task
  /// function raised or the job graph stalled.
  void run();

  NameStore& names() noexcept { return names_; }
  const NameStore& names() const noexcept { return names_; }
  Pool& pool() noexcept { return pool_; }
  const RuntimeStats& stats() const noexcept { return stats_; }
  const RuntimeConfig& config() const noexcept { return config_; }
  JobState job_state(JobId job) const;
  std::uint64_t job_count() const;
  /// Microseconds after construction at which the job completed, 0 if open.
  std::uint64_t job_completed_us(JobId job) const;
  std::uint32_t total_workers() const noexcept { return config_.workers + config_.spares; }
  WorkerRole role(WorkerId w) const;
  std::uint32_t active_workers() const;
  const HeartbeatTable& heartbeats() const noexcept { return heartbeats_; }
  const GroupBarrier& barrier() const noexcept { return barrier_; }

  /// All task descriptors ever created, in creation order (for audits).
  std::vector<TaskRef> all_tasks() const;
  StatusWord task_status(TaskRef t) const;

 private:
  friend class TaskContext;
  struct WorkerState;

  // Pool layout helpers.
  PoolAddress job_addr(JobId j) const;
  PoolAddress worker_addr(WorkerId w) const;
  PoolAddress running_slot(WorkerId w) const { return worker_addr(w) + 8; }
  WorkQueue queue(WorkerId w) const;

  TaskRef create_task(JobId job, FnId fn, std::span<const std::byte> args, const std::vector<std::string>& inputs,
                      const std::vector<std::string>& outputs);
  void make_runnable(TaskRef t, WorkerId owner);
  void schedule(WorkerState& ws, TaskRef t);
  void enqueue(WorkerId owner, TaskRef t);
  void schedule_released(WorkerState& ws, const std::vector<TaskRef>& released);

  void thread_main(WorkerId w);
  void worker_loop(WorkerState& ws);
  TaskRef next_local(WorkerState& ws);
  TaskRef steal_round(WorkerState& ws, bool& saw_work);
  TaskRef pop_orphan();
  bool any_work_visible(const WorkerState& ws) const;
  bool peers_running(const WorkerState& ws) const;
  void execute(WorkerState& ws, TaskRef t);
  void duty(WorkerState& ws);
  void recover(WorkerState& ws, WorkerId dead);
  std::optional<WorkerId> activate_spare();
  void phase_boundary(WorkerState& ws);
  std::uint64_t current_job() const;
  void maybe_crash(WorkerState& ws, CrashPoint point, std::uint64_t job);
  void fail(const std::string& message);

  std::vector<std::string> decode_names(PoolAddress blob, std::uint64_t count) const;

  Pool& pool_;
  RuntimeConfig config_;
  std::shared_ptr<Clock> clock_;
  PoolAddress header_;
  NameStore names_;
  HeartbeatTable heartbeats_;
  GroupBarrier barrier_;
  RuntimeStats stats_;
  SteadyClock wall_;
  std::unordered_map<FnId, TaskFn> registry_;
  bool running_ = false;

  std::atomic<std::uint64_t> extra_fired_{0};  // bit i: extra_crashes[i] fired
  std::mutex fault_mutex_;
  std::string fault_message_;
};

/// What a task function sees: its arguments, its named inputs, slots for
/// its named outputs, and the ability to spawn work. Spawns are logged in
/// the task's descriptor, so a re-run after a crash gets back the children
/// the first attempt already created instead of creating them twice.
class TaskContext {
 public:
  WorkerId worker() const noexcept { return worker_; }
  JobId job() const noexcept { return job_; }
  TaskId task_id() const noexcept { return task_id_; }
  std::span<const std::byte> args() const noexcept { return args_; }

  std::size_t input_count() const noexcept { return inputs_.size(); }
  const std::string& input_name(std::size_t i) const { return inputs_.at(i); }
  std::span<const std::byte> input(std::size_t i) const;
  std::span<const std::byte> input(std::string_view name) const;

  std::size_t output_count() const noexcept { return outputs_.size(); }
  const std::string& output_name(std::size_t i) const { return outputs_.at(i); }
  void set_output(std::size_t i, std::vector<std::byte> payload);

  JobId spawn_job(std::optional<JobId> predecessor);
  TaskId spawn_task(JobId job, FnId fn, std::span<const std::byte> args, std::vector<std::string> inputs,
                    std::vector<std::string> outputs);

 private:
  friend class Runtime;
  TaskContext(Runtime& rt, Runtime::WorkerState& ws, TaskRef self);
  PoolAddress next_log_entry(std::uint64_t kind, const std::function<std::uint64_t()>& create);

  Runtime& rt_;
  Runtime::WorkerState& ws_;
  TaskRef self_;
  WorkerId worker_;
  JobId job_;
  TaskId task_id_;
  std::span<const std::byte> args_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::optional<std::vector<std::byte>>> produced_;
  PoolAddress log_cursor_;
};

/// Plain-data argument helpers for the length-prefixed closure format.
template <typename T>
std::vector<std::byte> pack_args(const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::vector<std::byte> out(sizeof(T));
  std::memcpy(out.data(), &value, sizeof(T));
  return out;
}

template <typename T>
T unpack_args(std::span<const std::byte> bytes) {
  static_assert(std::is_trivially_copyable_v<T>);
  if (bytes.size() != sizeof(T)) throw Error(Errc::task_fault, "argument size mismatch");
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace modc
