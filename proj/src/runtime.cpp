#include "modc/runtime.hpp"

#include <algorithm>
#include <random>
#include <thread>

namespace modc {

namespace {

// Runtime header.
constexpr std::uint64_t h_done = 0;
constexpr std::uint64_t h_fatal = 8;
constexpr std::uint64_t h_job_count = 16;
constexpr std::uint64_t h_orphans = 24;
constexpr std::uint64_t h_jobs = 32;
constexpr std::uint64_t h_workers = 40;
constexpr std::uint64_t h_audit = 48;
constexpr std::uint64_t h_progress = 56;

// Job descriptor (64 bytes).
constexpr std::uint64_t j_state = 0;
constexpr std::uint64_t j_pred = 8;  // predecessor id + 1, 0 = none
constexpr std::uint64_t j_outstanding = 16;
constexpr std::uint64_t j_deferred = 24;
constexpr std::uint64_t j_task_counter = 32;
constexpr std::uint64_t j_completed_us = 40;  // wall time of completion, 0 = open

// Worker record (64 bytes).
constexpr std::uint64_t w_role = 0;
constexpr std::uint64_t w_queue = 16;
constexpr std::uint64_t role_claimed = 2;  // spare being activated

// Task descriptor (128 bytes).
constexpr std::uint64_t d_status = 0;
constexpr std::uint64_t d_job = 8;
constexpr std::uint64_t d_task_id = 16;
constexpr std::uint64_t d_fn = 24;
constexpr std::uint64_t d_remaining = 32;
constexpr std::uint64_t d_exec = 40;
constexpr std::uint64_t d_args = 48;
constexpr std::uint64_t d_args_len = 56;
constexpr std::uint64_t d_inputs = 64;
constexpr std::uint64_t d_inputs_n = 72;
constexpr std::uint64_t d_outputs = 80;
constexpr std::uint64_t d_outputs_n = 88;
constexpr std::uint64_t d_deferred_next = 96;
constexpr std::uint64_t d_spawn_log = 104;
constexpr std::uint64_t d_audit_next = 112;
constexpr std::uint64_t descriptor_size = 128;

// Spawn log record: kind @0, value @8, next @16.
constexpr std::uint64_t log_task = 1;
constexpr std::uint64_t log_job = 2;

std::vector<std::byte> encode_names(const std::vector<std::string>& names) {
  std::vector<std::byte> out;
  for (const auto& n : names) {
    const std::uint64_t len = n.size();
    const auto* lp = reinterpret_cast<const std::byte*>(&len);
    out.insert(out.end(), lp, lp + sizeof(len));
    const auto* np = reinterpret_cast<const std::byte*>(n.data());
    out.insert(out.end(), np, np + n.size());
  }
  return out;
}

void push_list(Pool& pool, PoolAddress head, PoolAddress node, std::uint64_t next_off) {
  std::uint64_t cur = pool.load64(head);
  for (;;) {
    pool.store64(node + next_off, cur);
    auto r = pool.cas64(head, cur, node.offset);
    if (r.success) return;
    cur = r.observed;
  }
}

}  // namespace

std::string_view to_string(CrashPoint p) noexcept {
  switch (p) {
    case CrashPoint::pre_running_cas: return "pre_running_cas";
    case CrashPoint::mid_task: return "mid_task";
    case CrashPoint::post_publish_pre_done: return "post_publish_pre_done";
    case CrashPoint::in_barrier_wait: return "in_barrier_wait";
    case CrashPoint::idle: return "idle";
  }
  return "unknown";
}

std::optional<CrashPoint> parse_crash_point(std::string_view text) noexcept {
  for (const CrashPoint p : all_crash_points)
    if (to_string(p) == text) return p;
  return std::nullopt;
}

struct Runtime::WorkerState {
  WorkerState(WorkerId self, std::uint32_t total, std::uint64_t seed)
      : id(self), detector(self, total), rng(seed ^ (0x9e3779b97f4a7c15ull * (self + 1))) {
    for (WorkerId v = 0; v < total; ++v)
      if (v != self) victims.push_back(v);
  }

  WorkerId id;
  FailureDetector detector;
  std::mt19937_64 rng;
  std::vector<WorkerId> victims;
  std::vector<WorkerId> adopted;  // cache; the owner fields in the pool are authoritative
  std::uint64_t last_beat = 0;
  std::uint64_t last_scan = 0;
  std::uint64_t current_job = 0;
  std::uint64_t last_signature = ~std::uint64_t{0};
  int stalled_boundaries = 0;
};

Runtime::Runtime(Pool& pool, RuntimeConfig config, std::shared_ptr<Clock> clock)
    : pool_(pool),
      config_(config),
      clock_(std::move(clock)),
      header_(pool.alloc(128, 64)),
      names_(NameStore::create(pool, config.name_slots)),
      heartbeats_(HeartbeatTable::create(pool, config.workers + config.spares)),
      barrier_(GroupBarrier::create(pool, config.workers + config.spares)) {
  if (config_.workers == 0) throw Error(Errc::config_error, "at least one worker is required");
  const PoolAddress jobs = pool_.alloc(64 * std::uint64_t{config_.max_jobs}, 64);
  const PoolAddress workers = pool_.alloc(64 * std::uint64_t{total_workers()}, 64);
  pool_.store64(header_ + h_jobs, jobs.offset);
  pool_.store64(header_ + h_workers, workers.offset);
  for (WorkerId w = 0; w < total_workers(); ++w) {
    const WorkQueue q = WorkQueue::create(pool_, w, config_.deque_capacity);
    pool_.store64(worker_addr(w) + w_queue, q.address().offset);
  }
}

Runtime::~Runtime() = default;

PoolAddress Runtime::job_addr(JobId j) const {
  return PoolAddress{pool_.load64(header_ + h_jobs)} + 64 * j;
}
PoolAddress Runtime::worker_addr(WorkerId w) const {
  return PoolAddress{pool_.load64(header_ + h_workers)} + 64 * std::uint64_t{w};
}
WorkQueue Runtime::queue(WorkerId w) const {
  return WorkQueue::attach(pool_, PoolAddress{pool_.load64(worker_addr(w) + w_queue)});
}

JobState Runtime::job_state(JobId job) const {
  if (job >= job_count()) return JobState::unused;
  return static_cast<JobState>(pool_.load64(job_addr(job) + j_state));
}
std::uint64_t Runtime::job_count() const {
  return std::min<std::uint64_t>(pool_.load64(header_ + h_job_count), config_.max_jobs);
}
WorkerRole Runtime::role(WorkerId w) const {
  return pool_.load64(worker_addr(w) + w_role) == static_cast<std::uint64_t>(WorkerRole::active) ? WorkerRole::active
                                                                                                 : WorkerRole::spare;
}
std::uint32_t Runtime::active_workers() const {
  std::uint32_t n = 0;
  for (WorkerId w = 0; w < total_workers(); ++w)
    if (role(w) == WorkerRole::active && !heartbeats_.is_dead(w)) ++n;
  return n;
}

std::uint64_t Runtime::job_completed_us(JobId job) const {
  return job < job_count() ? pool_.load64(job_addr(job) + j_completed_us) : 0;
}

StatusWord Runtime::task_status(TaskRef t) const { return StatusWord::from(pool_.load64(t.addr + d_status)); }

std::vector<TaskRef> Runtime::all_tasks() const {
  std::vector<TaskRef> out;
  for (std::uint64_t a = pool_.load64(header_ + h_audit); a != 0; a = pool_.load64(PoolAddress{a} + d_audit_next))
    out.push_back(TaskRef{PoolAddress{a}});
  std::reverse(out.begin(), out.end());
  return out;
}

void Runtime::register_function(FnId id, TaskFn fn) {
  if (running_) throw Error(Errc::config_error, "functions must be registered before run()");
  if (!registry_.emplace(id, std::move(fn)).second) {
    throw Error(Errc::duplicate_fn_id, "function id " + std::to_string(id) + " already registered");
  }
}

std::vector<std::string> Runtime::decode_names(PoolAddress blob, std::uint64_t count) const {
  std::vector<std::string> names;
  names.reserve(count);
  std::uint64_t off = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t len;
    std::memcpy(&len, pool_.bytes(blob + off, 8).data(), 8);
    off += 8;
    const auto text = pool_.bytes(blob + off, len);
    names.emplace_back(reinterpret_cast<const char*>(text.data()), len);
    off += len;
  }
  return names;
}

JobId Runtime::spawn_job(std::optional<JobId> predecessor) {
  const JobId j = pool_.faa64(header_ + h_job_count, 1);
  if (j >= config_.max_jobs) throw Error(Errc::out_of_pool_memory, "job table full");
  const PoolAddress e = job_addr(j);
  JobState state = JobState::enabled;
  if (predecessor) {
    if (*predecessor >= j) throw Error(Errc::unknown_job, "predecessor " + std::to_string(*predecessor));
    pool_.store64(e + j_pred, *predecessor + 1);
    if (job_state(*predecessor) != JobState::complete) state = JobState::gated;
  }
  pool_.store64(e + j_state, static_cast<std::uint64_t>(state));
  return j;
}

TaskRef Runtime::create_task(JobId job, FnId fn, std::span<const std::byte> args,
                             const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  const JobState js = job_state(job);
  if (js != JobState::gated && js != JobState::enabled) {
    throw Error(Errc::unknown_job, "job " + std::to_string(job) + " is not open");
  }
  const PoolAddress e = job_addr(job);
  const PoolAddress d = pool_.alloc(descriptor_size, 64);
  const PoolAddress a = pool_.put(args);
  const auto in_blob = encode_names(inputs);
  const auto out_blob = encode_names(outputs);
  pool_.store64(d + d_job, job);
  pool_.store64(d + d_task_id, pool_.faa64(e + j_task_counter, 1));
  pool_.store64(d + d_fn, fn);
  pool_.store64(d + d_args, a.offset);
  pool_.store64(d + d_args_len, args.size());
  pool_.store64(d + d_inputs, pool_.put(in_blob).offset);
  pool_.store64(d + d_inputs_n, inputs.size());
  pool_.store64(d + d_outputs, pool_.put(out_blob).offset);
  pool_.store64(d + d_outputs_n, outputs.size());
  for (const auto& o : outputs) names_.declare(o);
  pool_.faa64(e + j_outstanding, 1);
  stats_.tasks_spawned.fetch_add(1);
  push_list(pool_, header_ + h_audit, d, d_audit_next);

  const TaskRef t{d};
  if (js == JobState::enabled) {
    pool_.store64(d + d_status, StatusWord{0, TaskStatus::waiting}.raw());
  } else {
    pool_.store64(d + d_status, StatusWord{0, TaskStatus::created}.raw());
    push_list(pool_, e + j_deferred, d, d_deferred_next);
  }
  return t;
}

TaskId Runtime::submit(JobId job, FnId fn, std::span<const std::byte> args, std::vector<std::string> inputs,
                       std::vector<std::string> outputs) {
  if (running_) throw Error(Errc::config_error, "submit() is for setup; tasks spawn tasks once running");
  const TaskRef t = create_task(job, fn, args, inputs, outputs);
  if (task_status(t).status == TaskStatus::waiting) make_runnable(t, 0);
  return pool_.load64(t.addr + d_task_id);
}

// Registers a WAITING task on its inputs and queues it on `owner` if they
// are all ready already.
void Runtime::make_runnable(TaskRef t, WorkerId owner) {
  const auto inputs = decode_names(PoolAddress{pool_.load64(t.addr + d_inputs)}, pool_.load64(t.addr + d_inputs_n));
  if (names_.register_waiter(t, t.addr + d_remaining, inputs) != WaitResult::ready_now) return;
  const StatusWord waiting{0, TaskStatus::waiting};
  if (!pool_.cas64(t.addr + d_status, waiting.raw(), StatusWord{0, TaskStatus::ready}.raw()).success) return;
  enqueue(owner, t);
}

void Runtime::schedule(WorkerState& ws, TaskRef t) { enqueue(ws.id, t); }

void Runtime::enqueue(WorkerId owner, TaskRef t) {
  try {
    queue(owner).push(owner, t);
    return;
  } catch (const Error& e) {
    if (e.code() != Errc::queue_full && e.code() != Errc::not_owner) throw;
  }
  // Own queue unusable (full, or taken over after a false suspicion): park
  // the task on the shared orphan stack where any worker will find it.
  const PoolAddress node = pool_.alloc(16, 16);
  pool_.store64(node + 8, t.addr.offset);
  push_list(pool_, header_ + h_orphans, node, 0);
}

void Runtime::schedule_released(WorkerState& ws, const std::vector<TaskRef>& released) {
  for (const TaskRef t : released) {
    const StatusWord s = task_status(t);
    if (s.status != TaskStatus::waiting) continue;
    if (pool_.cas64(t.addr + d_status, s.raw(), StatusWord{s.epoch, TaskStatus::ready}.raw()).success) schedule(ws, t);
  }
}

TaskRef Runtime::pop_orphan() {
  std::uint64_t head = pool_.load64(header_ + h_orphans);
  while (head != 0) {
    // Nodes are never reused, so there is no ABA on this stack.
    const std::uint64_t next = pool_.load64(PoolAddress{head});
    auto r = pool_.cas64(header_ + h_orphans, head, next);
    if (r.success) return TaskRef{PoolAddress{pool_.load64(PoolAddress{head} + 8)}};
    head = r.observed;
  }
  return {};
}

TaskRef Runtime::next_local(WorkerState& ws) {
  if (TaskRef t = queue(ws.id).pop(ws.id); !t.addr.is_null()) return t;
  for (const WorkerId q : ws.adopted)
    if (TaskRef t = queue(q).pop(ws.id); !t.addr.is_null()) return t;
  return pop_orphan();
}

TaskRef Runtime::steal_round(WorkerState& ws, bool& saw_work) {
  std::shuffle(ws.victims.begin(), ws.victims.end(), ws.rng);
  for (const WorkerId v : ws.victims) {
    if (std::find(ws.adopted.begin(), ws.adopted.end(), v) != ws.adopted.end()) continue;
    const StealResult r = queue(v).steal(ws.id);
    if (r.status == StealStatus::ok) {
      stats_.steals_ok.fetch_add(1);
      return r.task;
    }
    if (r.status == StealStatus::retry) {
      stats_.steals_failed.fetch_add(1);
      saw_work = true;
    }
  }
  return {};
}

bool Runtime::any_work_visible(const WorkerState&) const {
  if (pool_.load64(header_ + h_orphans) != 0) return true;
  for (WorkerId w = 0; w < total_workers(); ++w)
    if (queue(w).size_hint() > 0) return true;
  return false;
}

// A live peer in the middle of a task may still spawn children; arriving at
// the barrier now would leave them to that peer alone.
bool Runtime::peers_running(const WorkerState& ws) const {
  for (WorkerId w = 0; w < total_workers(); ++w) {
    if (w == ws.id || heartbeats_.status(w) != Liveness::alive) continue;
    if (pool_.load64(running_slot(w)) != 0) return true;
  }
  return false;
}

void Runtime::fail(const std::string& message) {
  {
    std::lock_guard lock(fault_mutex_);
    if (fault_message_.empty()) fault_message_ = message;
  }
  pool_.store64(header_ + h_fatal, 1);
}

void Runtime::maybe_crash(WorkerState& ws, CrashPoint point, std::uint64_t job) {
  for (std::size_t i = 0; i < config_.extra_crashes.size() && i < 64; ++i) {
    const CrashPlan& p = config_.extra_crashes[i];
    if (ws.id != p.victim || p.point != point || job < p.epoch) continue;
    const std::uint64_t bit = std::uint64_t{1} << i;
    if ((extra_fired_.fetch_or(bit) & bit) == 0) throw WorkerCrash{ws.id};
  }
  if (!config_.crash) return;
  const CrashPlan& plan = *config_.crash;
  if (ws.id != plan.victim || plan.point != point || job < plan.epoch) return;
  bool expected = false;
  if (!stats_.crash_fired.compare_exchange_strong(expected, true)) return;
  std::uint64_t resident = static_cast<std::uint64_t>(queue(ws.id).size_hint());
  for (const WorkerId q : ws.adopted) resident += static_cast<std::uint64_t>(queue(q).size_hint());
  stats_.crash_epoch.store(job);
  stats_.crash_queue_len.store(resident);
  stats_.crash_tick.store(clock_->now());
  stats_.crash_wall_us.store(wall_.now());
  throw WorkerCrash{ws.id};
}

void Runtime::execute(WorkerState& ws, TaskRef t) {
  const PoolAddress d = t.addr;
  const StatusWord seen = task_status(t);
  if (seen.status != TaskStatus::ready) return;
  const std::uint64_t job = pool_.load64(d + d_job);

  // The slot is written before the cas so a READY task popped by a worker
  // that halts right here is still reachable by recovery.
  pool_.store64(running_slot(ws.id), d.offset);
  maybe_crash(ws, CrashPoint::pre_running_cas, job);
  const StatusWord running{seen.epoch, TaskStatus::running};
  if (!pool_.cas64(d + d_status, seen.raw(), running.raw()).success) {
    pool_.store64(running_slot(ws.id), 0);
    return;
  }
  stats_.tasks_started.fetch_add(1);
  if (pool_.faa64(d + d_exec, 1) != 0) stats_.concurrent_runs.fetch_add(1);

  const FnId fn_id = pool_.load64(d + d_fn);
  const auto fn = registry_.find(fn_id);
  if (fn == registry_.end()) {
    fail("UnknownFunction: task " + std::to_string(pool_.load64(d + d_task_id)) + " of job " + std::to_string(job) +
         " names function " + std::to_string(fn_id));
    return;
  }

  TaskContext ctx(*this, ws, t);
  try {
    fn->second(ctx);
  } catch (const WorkerCrash&) {
    throw;
  } catch (const std::exception& e) {
    fail("task " + std::to_string(ctx.task_id()) + " of job " + std::to_string(job) + " raised: " + e.what());
    return;
  }
  for (std::size_t i = 0; i < ctx.produced_.size(); ++i) {
    if (!ctx.produced_[i]) {
      fail("task " + std::to_string(ctx.task_id()) + " did not produce output '" + ctx.outputs_[i] + "'");
      return;
    }
  }

  const std::size_t half = ctx.outputs_.size() / 2;
  auto publish = [&](std::size_t i) {
    auto r = names_.publish(ctx.outputs_[i], *ctx.produced_[i], config_.compare_republish);
    schedule_released(ws, r.released);
  };
  for (std::size_t i = 0; i < half; ++i) publish(i);
  maybe_crash(ws, CrashPoint::mid_task, job);
  for (std::size_t i = half; i < ctx.outputs_.size(); ++i) publish(i);
  maybe_crash(ws, CrashPoint::post_publish_pre_done, job);

  pool_.faa64(d + d_exec, -1);
  if (pool_.cas64(d + d_status, running.raw(), StatusWord{seen.epoch, TaskStatus::done}.raw()).success) {
    pool_.faa64(job_addr(job) + j_outstanding, -1);
    pool_.faa64(header_ + h_progress, 1);
    stats_.tasks_done.fetch_add(1);
  }
  pool_.store64(running_slot(ws.id), 0);
}

void Runtime::duty(WorkerState& ws) {
  clock_->tick(ws.id);
  const std::uint64_t now = clock_->now();
  if (now - ws.last_beat >= config_.beat_period) {
    heartbeats_.beat(ws.id);
    heartbeats_.advance_frontier(config_.quorum);
    ws.last_beat = now;
  }
  if (now - ws.last_scan < config_.beat_period) return;
  ws.last_scan = now;
  for (const WorkerId suspect : ws.detector.scan(heartbeats_, now, config_.suspicion_timeout)) {
    if (!heartbeats_.pronounce_dead(suspect)) continue;
    stats_.pronouncements.fetch_add(1);
    std::uint64_t zero = 0;
    stats_.detect_tick.compare_exchange_strong(zero, now);
    zero = 0;
    stats_.detect_wall_us.compare_exchange_strong(zero, wall_.now());
    recover(ws, suspect);
  }
}

void Runtime::recover(WorkerState& ws, WorkerId dead) {
  // Survivors stop waiting for the dead worker.
  barrier_.remove(dead);

  // Its queue, and any it had adopted, become ours to drain.
  for (WorkerId q = 0; q < total_workers(); ++q) {
    WorkQueue wq = queue(q);
    if (wq.owner() == dead && wq.take_ownership(heartbeats_, ws.id, dead)) ws.adopted.push_back(q);
  }

  // Whatever it was running goes back to READY with a fresh epoch.
  const std::uint64_t slot = pool_.load64(running_slot(dead));
  if (slot != 0) {
    const TaskRef t{PoolAddress{slot}};
    const StatusWord s = task_status(t);
    bool held_by_live = false;
    for (WorkerId w = 0; w < total_workers(); ++w) {
      if (w != dead && heartbeats_.status(w) == Liveness::alive && pool_.load64(running_slot(w)) == slot) {
        held_by_live = true;
      }
    }
    if (s.status == TaskStatus::ready) {
      schedule(ws, t);
    } else if (s.status == TaskStatus::running && !held_by_live) {
      const StatusWord again{s.epoch + 1, TaskStatus::ready};
      if (pool_.cas64(t.addr + d_status, s.raw(), again.raw()).success) {
        pool_.faa64(t.addr + d_exec, -1);
        stats_.tasks_reexecuted.fetch_add(1);
        schedule(ws, t);
      }
    }
  }

  activate_spare();
}

std::optional<WorkerId> Runtime::activate_spare() {
  for (WorkerId s = config_.workers; s < total_workers(); ++s) {
    const PoolAddress role_addr = worker_addr(s) + w_role;
    if (!pool_.cas64(role_addr, static_cast<std::uint64_t>(WorkerRole::spare), role_claimed).success) continue;
    heartbeats_.enroll(s);
    barrier_.join(s);
    clock_->enlist(s);
    pool_.store64(role_addr, static_cast<std::uint64_t>(WorkerRole::active));
    stats_.spare_activations.fetch_add(1);
    return s;
  }
  return std::nullopt;
}

std::uint64_t Runtime::current_job() const {
  const std::uint64_t n = job_count();
  for (JobId j = 0; j < n; ++j)
    if (job_state(j) != JobState::complete) return j;
  return n;
}

// Runs after every barrier release, by every worker; each step is guarded by
// a cas so repeated or concurrent passes are harmless.
void Runtime::phase_boundary(WorkerState& ws) {
  const std::uint64_t n = job_count();
  for (JobId j = 0; j < n; ++j) {
    const PoolAddress e = job_addr(j);
    if (job_state(j) == JobState::enabled && pool_.load64(e + j_outstanding) == 0) {
      if (pool_.cas64(e + j_state, static_cast<std::uint64_t>(JobState::enabled),
                      static_cast<std::uint64_t>(JobState::complete))
              .success) {
        pool_.store64(e + j_completed_us, std::max<std::uint64_t>(wall_.now(), 1));
      }
    }
  }
  for (JobId j = 0; j < n; ++j) {
    const PoolAddress e = job_addr(j);
    if (job_state(j) != JobState::gated) continue;
    const std::uint64_t pred = pool_.load64(e + j_pred);
    if (pred == 0 || job_state(pred - 1) == JobState::complete) {
      pool_.cas64(e + j_state, static_cast<std::uint64_t>(JobState::gated),
                  static_cast<std::uint64_t>(JobState::enabled));
    }
  }
  bool all_complete = true;
  std::uint64_t signature = n;
  for (JobId j = 0; j < n; ++j) {
    const JobState st = job_state(j);
    signature = signature * 31 + static_cast<std::uint64_t>(st);
    if (st != JobState::complete) all_complete = false;
    if (st != JobState::enabled) continue;
    for (std::uint64_t a = pool_.load64(job_addr(j) + j_deferred); a != 0;
         a = pool_.load64(PoolAddress{a} + d_deferred_next)) {
      const TaskRef t{PoolAddress{a}};
      if (pool_.cas64(t.addr + d_status, StatusWord{0, TaskStatus::created}.raw(),
                      StatusWord{0, TaskStatus::waiting}.raw())
              .success) {
        make_runnable(t, ws.id);
      }
    }
  }
  ws.current_job = current_job();
  if (all_complete) {
    pool_.store64(header_ + h_done, 1);
    return;
  }
  signature = signature * 1000003 + pool_.load64(header_ + h_progress);
  if (signature == ws.last_signature) {
    if (++ws.stalled_boundaries >= 3) fail("job graph stalled: tasks wait on data no job will produce");
  } else {
    ws.stalled_boundaries = 0;
  }
  ws.last_signature = signature;
}

void Runtime::worker_loop(WorkerState& ws) {
  const PoolAddress done = header_ + h_done;
  const PoolAddress fatal = header_ + h_fatal;
  phase_boundary(ws);
  for (;;) {
    if (pool_.load64(done) != 0 || pool_.load64(fatal) != 0) return;
    if (heartbeats_.is_dead(ws.id)) {
      // Pronounced dead while still running: halt like a fenced node.
      stats_.zombie_halts.fetch_add(1);
      return;
    }
    duty(ws);

    TaskRef t = next_local(ws);
    if (t.addr.is_null()) {
      bool saw_work = false;
      t = steal_round(ws, saw_work);
      if (t.addr.is_null() && saw_work) {
        std::this_thread::yield();
        continue;
      }
    }
    if (!t.addr.is_null()) {
      execute(ws, t);
      // Hand the core to peers between tasks so thieves get a look in even
      // when workers outnumber cores.
      std::this_thread::yield();
      continue;
    }
    if (peers_running(ws)) {
      std::this_thread::yield();
      continue;
    }

    maybe_crash(ws, CrashPoint::idle, ws.current_job);
    if (!barrier_.is_member(ws.id)) return;
    const auto ticket = barrier_.arrive(ws.id);
    maybe_crash(ws, CrashPoint::in_barrier_wait, ws.current_job);
    for (;;) {
      const BarrierPoll p = barrier_.poll(*ticket);
      if (p == BarrierPoll::released) {
        phase_boundary(ws);
        break;
      }
      if (p == BarrierPoll::membership_changed) break;
      if (pool_.load64(done) != 0 || pool_.load64(fatal) != 0 || heartbeats_.is_dead(ws.id)) break;
      duty(ws);
      if (any_work_visible(ws)) {
        const BarrierPoll r = barrier_.retract(*ticket);
        if (r == BarrierPoll::released) phase_boundary(ws);
        break;
      }
      std::this_thread::yield();
    }
  }
}

void Runtime::thread_main(WorkerId w) {
  try {
    const PoolAddress role_addr = worker_addr(w) + w_role;
    while (pool_.load64(role_addr) != static_cast<std::uint64_t>(WorkerRole::active)) {
      if (pool_.load64(header_ + h_done) != 0 || pool_.load64(header_ + h_fatal) != 0) return;
      std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
    WorkerState ws(w, total_workers(), config_.seed);
    worker_loop(ws);
  } catch (const WorkerCrash&) {
    // Private state dies with the thread; the pool keeps the rest.
  } catch (const std::exception& e) {
    fail(std::string("worker ") + std::to_string(w) + ": " + e.what());
  }
  clock_->retire(w);
}

void Runtime::run() {
  if (running_) throw Error(Errc::config_error, "run() called twice");
  running_ = true;
  for (WorkerId w = 0; w < config_.workers; ++w) {
    pool_.store64(worker_addr(w) + w_role, static_cast<std::uint64_t>(WorkerRole::active));
    heartbeats_.enroll(w);
    barrier_.join(w);
    clock_->enlist(w);
  }
  std::vector<std::thread> threads;
  threads.reserve(total_workers());
  for (WorkerId w = 0; w < total_workers(); ++w) threads.emplace_back([this, w] { thread_main(w); });
  for (auto& th : threads) th.join();

  if (pool_.load64(header_ + h_fatal) != 0) throw Error(Errc::task_fault, fault_message_);
  if (pool_.load64(header_ + h_done) == 0) {
    throw Error(Errc::task_fault, "all workers halted before the jobs completed");
  }
}

TaskContext::TaskContext(Runtime& rt, Runtime::WorkerState& ws, TaskRef self)
    : rt_(rt), ws_(ws), self_(self), worker_(ws.id), log_cursor_(self.addr + d_spawn_log) {
  Pool& pool = rt.pool_;
  const PoolAddress d = self.addr;
  job_ = pool.load64(d + d_job);
  task_id_ = pool.load64(d + d_task_id);
  args_ = pool.bytes(PoolAddress{pool.load64(d + d_args)}, pool.load64(d + d_args_len));
  inputs_ = rt.decode_names(PoolAddress{pool.load64(d + d_inputs)}, pool.load64(d + d_inputs_n));
  outputs_ = rt.decode_names(PoolAddress{pool.load64(d + d_outputs)}, pool.load64(d + d_outputs_n));
  produced_.resize(outputs_.size());
}

std::span<const std::byte> TaskContext::input(std::size_t i) const { return input(inputs_.at(i)); }

std::span<const std::byte> TaskContext::input(std::string_view name) const {
  auto data = rt_.names_.get(name);
  if (!data) throw Error(Errc::task_fault, "input '" + std::string(name) + "' is not ready");
  return *data;
}

void TaskContext::set_output(std::size_t i, std::vector<std::byte> payload) { produced_.at(i) = std::move(payload); }

PoolAddress TaskContext::next_log_entry(std::uint64_t kind, const std::function<std::uint64_t()>& create) {
  Pool& pool = rt_.pool_;
  std::uint64_t rec = pool.load64(log_cursor_);
  if (rec == 0) {
    const std::uint64_t value = create();
    const PoolAddress r = pool.alloc(24, 8);
    pool.store64(r, kind);
    pool.store64(r + 8, value);
    pool.store64(log_cursor_, r.offset);
    rec = r.offset;
  } else if (pool.load64(PoolAddress{rec}) != kind) {
    throw Error(Errc::task_fault, "re-run spawned a different sequence of work (task not deterministic?)");
  }
  log_cursor_ = PoolAddress{rec} + 16;
  return PoolAddress{rec};
}

JobId TaskContext::spawn_job(std::optional<JobId> predecessor) {
  const PoolAddress rec = next_log_entry(log_job, [&] { return rt_.spawn_job(predecessor); });
  return rt_.pool_.load64(rec + 8);
}

TaskId TaskContext::spawn_task(JobId job, FnId fn, std::span<const std::byte> args, std::vector<std::string> inputs,
                               std::vector<std::string> outputs) {
  const PoolAddress rec = next_log_entry(log_task, [&] {
    const TaskRef t = rt_.create_task(job, fn, args, inputs, outputs);
    if (rt_.task_status(t).status == TaskStatus::waiting) rt_.make_runnable(t, ws_.id);
    return t.addr.offset;
  });
  return rt_.pool_.load64(PoolAddress{rt_.pool_.load64(rec + 8)} + d_task_id);
}

}  // namespace modc
