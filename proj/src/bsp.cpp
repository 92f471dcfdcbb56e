#include "modc/bsp.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>

#include "modc/barrier.hpp"
#include "modc/heartbeat.hpp"

namespace modc {

namespace {

// Control block.
constexpr std::uint64_t c_gen = 0;        // bumped by every recovery
constexpr std::uint64_t c_resume = 8;     // iteration to restart from after a rollback
constexpr std::uint64_t c_progress = 16;  // highest iteration any worker has started
constexpr std::uint64_t c_last_ckpt = 24;
constexpr std::uint64_t c_fatal = 32;
constexpr std::uint64_t c_replay = 40;
constexpr std::uint64_t c_recoveries = 48;
constexpr std::uint64_t c_row_sets = 56;
constexpr std::uint64_t c_ckpt_us = 64;

constexpr std::uint64_t role_spare = 0;
constexpr std::uint64_t role_active = 1;
constexpr std::uint64_t role_claimed = 2;

enum class Sync { released, rollback, abort };

void store_max(Pool& pool, PoolAddress a, std::uint64_t v) {
  std::uint64_t cur = pool.load64(a);
  while (cur < v) {
    auto r = pool.cas64(a, cur, v);
    if (r.success) return;
    cur = r.observed;
  }
}

class BspEngine {
 public:
  BspEngine(Pool& pool, const CsrMatrix& m, const BspConfig& cfg, std::shared_ptr<Clock> clock)
      : pool_(pool),
        m_(m),
        cfg_(cfg),
        clock_(std::move(clock)),
        total_(cfg.workers + cfg.spares),
        hb_(HeartbeatTable::create(pool, total_)),
        barrier_(GroupBarrier::create(pool, total_)) {
    if (cfg.workers == 0 || cfg.set_rows == 0 || cfg.ckpt_interval == 0) {
      throw Error(Errc::config_error, "workers, set_rows and ckpt_interval must be positive");
    }
    control_ = pool.alloc(128, 64);
    roles_ = pool.alloc(8 * total_, 64);
    slot_owner_ = pool.alloc(8 * cfg.workers, 64);
    ends_ = pool.alloc(8 * (cfg.iters + 1), 64);
    row_ptr_ = pool.put(std::as_bytes(std::span(m.row_ptr)));
    col_idx_ = pool.put(std::as_bytes(std::span(m.col_idx)));
    out_degree_ = pool.put(std::as_bytes(std::span(m.out_degree)));
    for (std::uint64_t k = 0; k <= cfg.iters; ++k) ranks_.push_back(pool.alloc(8 * m.n, 64));
    ckpt_[0] = pool.alloc(8 * m.n, 64);
    ckpt_[1] = pool.alloc(8 * m.n, 64);
    double* r0 = pool.array<double>(ranks_[0], m.n).data();
    std::fill(r0, r0 + m.n, 1.0 / static_cast<double>(m.n));
    for (std::uint32_t s = 0; s < cfg.workers; ++s) pool.store64(slot_owner_ + 8 * s, s);
  }

  BspResult run() {
    for (WorkerId w = 0; w < cfg_.workers; ++w) {
      pool_.store64(roles_ + 8 * w, role_active);
      hb_.enroll(w);
      barrier_.join(w);
      clock_->enlist(w);
    }
    std::vector<std::thread> threads;
    for (WorkerId w = 0; w < total_; ++w) threads.emplace_back([this, w] { thread_main(w); });
    for (auto& t : threads) t.join();
    if (pool_.load64(control_ + c_fatal) != 0) throw Error(Errc::task_fault, fault_);
    if (!finished_.load()) throw Error(Errc::task_fault, "all workers halted before the last iteration");

    BspResult r;
    for (std::uint64_t k = 0; k <= cfg_.iters; ++k) {
      const double* v = pool_.array<double>(ranks_[k], m_.n).data();
      r.iterations.emplace_back(v, v + m_.n);
    }
    r.ranks = r.iterations.back();
    for (std::uint64_t k = 1; k <= cfg_.iters; ++k) r.iteration_end_us.push_back(pool_.load64(ends_ + 8 * k));
    r.row_sets_executed = pool_.load64(control_ + c_row_sets);
    r.replay_iterations = pool_.load64(control_ + c_replay);
    r.recoveries = pool_.load64(control_ + c_recoveries);
    r.checkpoint_us = pool_.load64(control_ + c_ckpt_us) / cfg_.workers;
    r.pronouncements = pronouncements_.load();
    r.crash_fired = crash_fired_.load();
    r.crash_tick = crash_tick_.load();
    r.detect_tick = detect_tick_.load();
    r.crash_wall_us = crash_wall_us_.load();
    r.detect_wall_us = detect_wall_us_.load();
    return r;
  }

 private:
  struct Worker {
    Worker(WorkerId id, std::uint32_t total) : id(id), detector(id, total) {}
    WorkerId id;
    FailureDetector detector;
    std::uint64_t gen = 0;
    std::uint64_t last_beat = 0;
    std::uint64_t last_scan = 0;
  };

  void fail(const std::string& msg) {
    {
      std::lock_guard lock(fault_mutex_);
      if (fault_.empty()) fault_ = msg;
    }
    pool_.store64(control_ + c_fatal, 1);
  }

  bool fatal() const { return pool_.load64(control_ + c_fatal) != 0; }

  void maybe_crash(const Worker& w, CrashPoint point, std::uint64_t iteration) {
    if (!cfg_.crash) return;
    const CrashPlan& p = *cfg_.crash;
    if (w.id != p.victim || p.point != point || iteration < p.epoch) return;
    bool expected = false;
    if (!crash_fired_.compare_exchange_strong(expected, true)) return;
    crash_tick_.store(clock_->now());
    crash_wall_us_.store(wall_.now());
    throw WorkerCrash{w.id};
  }

  void thread_main(WorkerId id) {
    try {
      while (pool_.load64(roles_ + 8 * id) != role_active) {
        if (finished_.load() || fatal()) return;
        std::this_thread::sleep_for(std::chrono::microseconds(50));
      }
      Worker w(id, total_);
      worker_loop(w);
    } catch (const WorkerCrash&) {
    } catch (const std::exception& e) {
      fail("bsp worker " + std::to_string(id) + ": " + e.what());
    }
    clock_->retire(id);
  }

  void duty(Worker& w) {
    clock_->tick(w.id);
    const std::uint64_t now = clock_->now();
    if (now - w.last_beat >= cfg_.beat_period) {
      hb_.beat(w.id);
      hb_.advance_frontier();
      w.last_beat = now;
    }
    if (now - w.last_scan < cfg_.beat_period) return;
    w.last_scan = now;
    for (const WorkerId s : w.detector.scan(hb_, now, cfg_.suspicion_timeout)) {
      if (!hb_.pronounce_dead(s)) continue;
      pronouncements_.fetch_add(1);
      std::uint64_t zero = 0;
      detect_tick_.compare_exchange_strong(zero, now);
      zero = 0;
      detect_wall_us_.compare_exchange_strong(zero, wall_.now());
      recover(w, s);
    }
  }

  // Run by the single worker that won the pronouncement.
  void recover(Worker& w, WorkerId dead) {
    const std::uint64_t resume = pool_.load64(control_ + c_last_ckpt);
    const std::uint64_t reached = pool_.load64(control_ + c_progress);
    pool_.faa64(control_ + c_replay, reached > resume ? reached - resume : 0);
    pool_.faa64(control_ + c_recoveries, 1);
    pool_.store64(control_ + c_resume, resume);
    pool_.faa64(control_ + c_gen, 1);

    std::optional<WorkerId> spare;
    for (WorkerId s = cfg_.workers; s < total_ && !spare; ++s)
      if (pool_.cas64(roles_ + 8 * s, role_spare, role_claimed).success) spare = s;
    const WorkerId heir = spare.value_or(w.id);
    for (std::uint32_t slot = 0; slot < cfg_.workers; ++slot)
      if (pool_.load64(slot_owner_ + 8 * slot) == dead) pool_.store64(slot_owner_ + 8 * slot, heir);
    if (spare) {
      hb_.enroll(*spare);
      barrier_.join(*spare);
      clock_->enlist(*spare);
      pool_.store64(roles_ + 8 * *spare, role_active);
    }
    barrier_.remove(dead);
  }

  std::vector<std::uint32_t> my_slots(const Worker& w) const {
    std::vector<std::uint32_t> slots;
    for (std::uint32_t s = 0; s < cfg_.workers; ++s)
      if (pool_.load64(slot_owner_ + 8 * s) == w.id) slots.push_back(s);
    return slots;
  }

  // Arrive and wait; duty runs while waiting so failures are noticed.
  Sync sync(Worker& w, std::uint64_t iteration, std::uint64_t membership) {
    for (;;) {
      if (fatal()) return Sync::abort;
      if (hb_.is_dead(w.id)) return Sync::abort;
      if (pool_.load64(control_ + c_gen) != w.gen) return Sync::rollback;
      const auto ticket = barrier_.arrive(w.id, membership);
      if (!ticket) {
        membership = barrier_.word().membership_seq;
        continue;
      }
      maybe_crash(w, CrashPoint::in_barrier_wait, iteration);
      for (;;) {
        const BarrierPoll p = barrier_.poll(*ticket);
        if (p == BarrierPoll::released) return Sync::released;
        if (p == BarrierPoll::membership_changed) break;
        if (fatal() || hb_.is_dead(w.id)) return Sync::abort;
        duty(w);
        std::this_thread::yield();
      }
      membership = barrier_.word().membership_seq;
    }
  }

  void worker_loop(Worker& w) {
    w.gen = pool_.load64(control_ + c_gen);
    std::uint64_t k = w.gen == 0 ? 0 : pool_.load64(control_ + c_resume);
    bool from_checkpoint = k > 0;
    const std::uint64_t c = cfg_.ckpt_interval;
    const std::uint64_t n = m_.n;
    const auto* row_ptr = pool_.array<std::uint64_t>(row_ptr_, n + 1).data();
    const auto* col_idx = pool_.array<std::uint32_t>(col_idx_, m_.edges()).data();
    const auto* out_degree = pool_.array<std::uint32_t>(out_degree_, n).data();
    const std::uint64_t sets = (n + cfg_.set_rows - 1) / cfg_.set_rows;

    auto roll_back = [&] {
      w.gen = pool_.load64(control_ + c_gen);
      k = pool_.load64(control_ + c_resume);
      from_checkpoint = k > 0;
    };

    while (k < cfg_.iters) {
      if (fatal() || hb_.is_dead(w.id)) return;
      // Iteration k + 1 computes ranks_[k + 1] from ranks_[k].
      const std::uint64_t iteration = k + 1;
      maybe_crash(w, CrashPoint::idle, iteration);
      store_max(pool_, control_ + c_progress, iteration);
      const std::uint64_t membership = barrier_.word().membership_seq;
      if (pool_.load64(control_ + c_gen) != w.gen) {
        roll_back();
        continue;
      }

      // The first iteration after a rollback reads the checkpoint.
      const PoolAddress src_addr = from_checkpoint ? ckpt_[(k / c) % 2] : ranks_[k];
      const double* src = pool_.array<double>(src_addr, n).data();
      double* dst = pool_.array<double>(ranks_[k + 1], n).data();
      const double dangling = dangling_mass(out_degree, src, n);

      std::vector<std::uint64_t> mine;
      for (const std::uint32_t slot : my_slots(w))
        for (std::uint64_t s = slot; s < sets; s += cfg_.workers) mine.push_back(s);
      std::sort(mine.begin(), mine.end());
      for (std::size_t i = 0; i < mine.size(); ++i) {
        if (i == 0) maybe_crash(w, CrashPoint::pre_running_cas, iteration);
        if (i == mine.size() / 2) maybe_crash(w, CrashPoint::mid_task, iteration);
        const std::uint64_t begin = mine[i] * cfg_.set_rows;
        const std::uint64_t end = std::min(n, begin + cfg_.set_rows);
        rank_rows(row_ptr, col_idx, out_degree, n, src, dangling, cfg_.damping, begin, end, dst + begin);
        pool_.faa64(control_ + c_row_sets, 1);
        duty(w);
      }
      maybe_crash(w, CrashPoint::post_publish_pre_done, iteration);

      const Sync s = sync(w, iteration, membership);
      if (s == Sync::abort) return;
      if (s == Sync::rollback) {
        roll_back();
        continue;
      }
      std::uint64_t zero = 0;
      pool_.cas64(ends_ + 8 * iteration, zero, std::max<std::uint64_t>(wall_.now(), 1));
      from_checkpoint = false;
      k = iteration;

      if (k % c == 0 && k < cfg_.iters) {
        const std::uint64_t t0 = wall_.now();
        double* ck = pool_.array<double>(ckpt_[(k / c) % 2], n).data();
        for (const std::uint32_t slot : my_slots(w)) {
          for (std::uint64_t set = slot; set < sets; set += cfg_.workers) {
            const std::uint64_t begin = set * cfg_.set_rows;
            const std::uint64_t end = std::min(n, begin + cfg_.set_rows);
            std::memcpy(ck + begin, dst + begin, (end - begin) * sizeof(double));
          }
        }
        pool_.faa64(control_ + c_ckpt_us, wall_.now() - t0);
        const Sync cs = sync(w, k, barrier_.word().membership_seq);
        if (cs == Sync::abort) return;
        if (cs == Sync::rollback) {
          roll_back();
          continue;
        }
        store_max(pool_, control_ + c_last_ckpt, k);
      }
    }
    finished_.store(true);
  }

  Pool& pool_;
  const CsrMatrix& m_;
  BspConfig cfg_;
  std::shared_ptr<Clock> clock_;
  std::uint32_t total_;
  HeartbeatTable hb_;
  GroupBarrier barrier_;
  SteadyClock wall_;
  PoolAddress control_, roles_, slot_owner_, ends_, row_ptr_, col_idx_, out_degree_;
  std::vector<PoolAddress> ranks_;
  PoolAddress ckpt_[2];

  std::atomic<bool> finished_{false};
  std::atomic<bool> crash_fired_{false};
  std::atomic<std::uint64_t> pronouncements_{0}, crash_tick_{0}, detect_tick_{0}, crash_wall_us_{0},
      detect_wall_us_{0};
  std::mutex fault_mutex_;
  std::string fault_;
};

}  // namespace

BspResult run_bsp_pagerank(Pool& pool, const CsrMatrix& m, const BspConfig& config, std::shared_ptr<Clock> clock) {
  BspEngine engine(pool, m, config, std::move(clock));
  return engine.run();
}

}  // namespace modc
