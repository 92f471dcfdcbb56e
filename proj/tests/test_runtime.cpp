#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "modc/runtime.hpp"

using namespace modc;

namespace {

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::config_error;
}

std::string fault_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    CHECK(e.code() == Errc::task_fault);
    return e.what();
  }
  FAIL("expected a task fault");
  return {};
}

std::vector<std::byte> u64_bytes(std::uint64_t v) { return pack_args(v); }
std::uint64_t u64_of(std::span<const std::byte> b) { return unpack_args<std::uint64_t>(b); }

RuntimeConfig small_config(std::uint32_t workers, std::uint32_t spares = 0) {
  RuntimeConfig c;
  c.workers = workers;
  c.spares = spares;
  c.name_slots = 1 << 12;
  c.max_jobs = 64;
  return c;
}

std::shared_ptr<Clock> virtual_clock(const RuntimeConfig& c) {
  return std::make_shared<VirtualClock>(c.workers + c.spares);
}

bool all_done(const Runtime& rt) {
  for (const TaskRef t : rt.all_tasks()) {
    if (rt.task_status(t).status != TaskStatus::done) return false;
  }
  return true;
}

// Recursive range workload: a split task halves [lo, hi) until it is at
// most `leaf` wide; each leaf publishes the sum of (job + 1) * i over its
// range. A collector per job sums the leaves into "total:<job>".
constexpr FnId fn_split = 10;
constexpr FnId fn_collect = 11;

struct RangeArgs {
  std::uint64_t lo;
  std::uint64_t hi;
  std::uint64_t leaf;
};

std::string leaf_name(JobId j, std::uint64_t lo) { return "leaf:" + std::to_string(j) + ":" + std::to_string(lo); }

void leaves_of(std::uint64_t lo, std::uint64_t hi, std::uint64_t leaf, std::vector<std::uint64_t>& out) {
  if (hi - lo <= leaf) {
    out.push_back(lo);
    return;
  }
  const std::uint64_t mid = lo + (hi - lo) / 2;
  leaves_of(lo, mid, leaf, out);
  leaves_of(mid, hi, leaf, out);
}

std::uint64_t range_tasks(std::uint64_t lo, std::uint64_t hi, std::uint64_t leaf) {
  if (hi - lo <= leaf) return 1;
  const std::uint64_t mid = lo + (hi - lo) / 2;
  return 1 + range_tasks(lo, mid, leaf) + range_tasks(mid, hi, leaf);
}

std::uint64_t expected_total(JobId j, std::uint64_t n) { return (j + 1) * (n * (n - 1) / 2); }

void register_range(Runtime& rt) {
  rt.register_function(fn_split, [](TaskContext& ctx) {
    const auto a = unpack_args<RangeArgs>(ctx.args());
    if (a.hi - a.lo <= a.leaf) {
      std::uint64_t s = 0;
      for (std::uint64_t i = a.lo; i < a.hi; ++i) s += (ctx.job() + 1) * i;
      ctx.set_output(0, u64_bytes(s));
      return;
    }
    const std::uint64_t mid = a.lo + (a.hi - a.lo) / 2;
    for (const RangeArgs child : {RangeArgs{a.lo, mid, a.leaf}, RangeArgs{mid, a.hi, a.leaf}}) {
      std::vector<std::string> outs;
      if (child.hi - child.lo <= child.leaf) outs.push_back(leaf_name(ctx.job(), child.lo));
      ctx.spawn_task(ctx.job(), fn_split, pack_args(child), {}, outs);
    }
  });
  rt.register_function(fn_collect, [](TaskContext& ctx) {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < ctx.input_count(); ++i) s += u64_of(ctx.input(i));
    ctx.set_output(0, u64_bytes(s));
  });
}

// `jobs` chained jobs over [0, n); returns the task count the run must reach.
std::uint64_t setup_range(Runtime& rt, std::uint32_t jobs, std::uint64_t n, std::uint64_t leaf) {
  register_range(rt);
  std::vector<std::uint64_t> leaves;
  leaves_of(0, n, leaf, leaves);
  std::optional<JobId> prev;
  for (std::uint32_t k = 0; k < jobs; ++k) {
    const JobId j = rt.spawn_job(prev);
    std::vector<std::string> root_out;
    if (n <= leaf) root_out.push_back(leaf_name(j, 0));
    rt.submit(j, fn_split, pack_args(RangeArgs{0, n, leaf}), {}, root_out);
    std::vector<std::string> names;
    for (std::uint64_t lo : leaves) names.push_back(leaf_name(j, lo));
    rt.submit(j, fn_collect, {}, names, {"total:" + std::to_string(j)});
    prev = j;
  }
  return jobs * (range_tasks(0, n, leaf) + 1);
}

void check_totals(const Runtime& rt, std::uint32_t jobs, std::uint64_t n) {
  for (JobId j = 0; j < jobs; ++j) {
    const auto got = rt.names().get("total:" + std::to_string(j));
    REQUIRE(got.has_value());
    CHECK(u64_of(*got) == expected_total(j, n));
    CHECK(rt.job_state(j) == JobState::complete);
  }
}

}  // namespace

TEST_CASE("one worker runs one task to completion") {
  Pool pool(64 << 20);
  auto cfg = small_config(1);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  int runs = 0;
  rt.register_function(1, [&](TaskContext& ctx) {
    ++runs;
    ctx.set_output(0, u64_bytes(42));
  });
  const JobId j = rt.spawn_job(std::nullopt);
  CHECK(j == 0);
  CHECK(rt.job_state(j) != JobState::complete);
  rt.submit(j, 1, {}, {}, {"answer"});
  rt.run();
  CHECK(runs == 1);
  CHECK(rt.job_state(j) == JobState::complete);
  CHECK(u64_of(*rt.names().get("answer")) == 42);
  CHECK(all_done(rt));
}

TEST_CASE("function ids are unique") {
  Pool pool(64 << 20);
  auto cfg = small_config(1);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  rt.register_function(1, [](TaskContext&) {});
  CHECK(code_of([&] { rt.register_function(1, [](TaskContext&) {}); }) == Errc::duplicate_fn_id);
}

TEST_CASE("an unregistered function faults the run") {
  Pool pool(64 << 20);
  auto cfg = small_config(2);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  rt.submit(rt.spawn_job(std::nullopt), 99, {}, {}, {});
  CHECK(fault_of([&] { rt.run(); }).find("UnknownFunction") != std::string::npos);
}

TEST_CASE("a raising task function faults the run") {
  Pool pool(64 << 20);
  auto cfg = small_config(2);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  rt.register_function(1, [](TaskContext&) { throw std::runtime_error("boom"); });
  rt.submit(rt.spawn_job(std::nullopt), 1, {}, {}, {});
  CHECK(fault_of([&] { rt.run(); }).find("boom") != std::string::npos);
}

TEST_CASE("submitting to an unknown job is refused") {
  Pool pool(64 << 20);
  auto cfg = small_config(1);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  CHECK(code_of([&] { rt.submit(3, 1, {}, {}, {}); }) == Errc::unknown_job);
  CHECK(code_of([&] { rt.spawn_job(JobId{5}); }) == Errc::unknown_job);
}

TEST_CASE("input waiting on data no job produces is reported as a stall") {
  Pool pool(64 << 20);
  auto cfg = small_config(2);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  rt.register_function(1, [](TaskContext&) {});
  rt.submit(rt.spawn_job(std::nullopt), 1, {}, {"never"}, {});
  CHECK(fault_of([&] { rt.run(); }).find("stalled") != std::string::npos);
}

TEST_CASE("a chain of jobs runs strictly in order") {
  Pool pool(64 << 20);
  auto cfg = small_config(4);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  std::mutex m;
  std::atomic<std::uint64_t> clock{0};
  std::map<JobId, std::pair<std::uint64_t, std::uint64_t>> span;  // first start, last end
  rt.register_function(1, [&](TaskContext& ctx) {
    const std::uint64_t s = clock++;
    const std::uint64_t e = clock++;
    std::lock_guard lock(m);
    auto [it, fresh] = span.try_emplace(ctx.job(), s, e);
    if (!fresh) {
      it->second.first = std::min(it->second.first, s);
      it->second.second = std::max(it->second.second, e);
    }
  });
  std::optional<JobId> prev;
  for (int k = 0; k < 10; ++k) {
    const JobId j = rt.spawn_job(prev);
    for (int i = 0; i < 12; ++i) rt.submit(j, 1, {}, {}, {});
    prev = j;
  }
  rt.run();
  REQUIRE(span.size() == 10);
  for (JobId j = 0; j + 1 < 10; ++j) CHECK(span[j].second < span[j + 1].first);
  CHECK(rt.stats().tasks_started.load() == 120);
}

TEST_CASE("two jobs sharing a predecessor both wait for it") {
  Pool pool(64 << 20);
  auto cfg = small_config(3);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  std::atomic<std::uint64_t> seq{0};
  std::vector<std::atomic<std::uint64_t>> at(3);
  rt.register_function(1, [&](TaskContext& ctx) { at[ctx.job()] = ++seq; });
  const JobId a = rt.spawn_job(std::nullopt);
  const JobId b = rt.spawn_job(a);
  const JobId c = rt.spawn_job(a);
  rt.submit(a, 1, {}, {}, {});
  rt.submit(b, 1, {}, {}, {});
  rt.submit(c, 1, {}, {}, {});
  rt.run();
  CHECK(at[a].load() < at[b].load());
  CHECK(at[a].load() < at[c].load());
}

TEST_CASE("a pending input holds its consumer until published") {
  Pool pool(64 << 20);
  auto cfg = small_config(2);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  rt.register_function(1, [](TaskContext& ctx) { ctx.set_output(0, u64_bytes(7)); });
  rt.register_function(2, [](TaskContext& ctx) { ctx.set_output(0, u64_bytes(u64_of(ctx.input("x")) * 6)); });
  const JobId j = rt.spawn_job(std::nullopt);
  // Consumer submitted first: it must park, not run on a missing input.
  rt.submit(j, 2, {}, {"x"}, {"y"});
  rt.submit(j, 1, {}, {}, {"x"});
  rt.run();
  CHECK(u64_of(*rt.names().get("y")) == 42);
}

TEST_CASE("tasks spawned mid-execution join the same job") {
  Pool pool(64 << 20);
  auto cfg = small_config(4);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  const std::uint64_t expected = setup_range(rt, 1, 1000, 16);
  rt.run();
  check_totals(rt, 1, 1000);
  CHECK(rt.all_tasks().size() == expected);
  CHECK(rt.stats().tasks_started.load() == expected);
}

TEST_CASE("eight workers run a thousand tasks exactly once each") {
  Pool pool(256 << 20);
  auto cfg = small_config(8);
  Runtime rt(pool, cfg, virtual_clock(cfg));
  std::vector<std::atomic<int>> runs(1000);
  rt.register_function(1, [&](TaskContext& ctx) { ++runs[unpack_args<std::uint64_t>(ctx.args())]; });
  const JobId j = rt.spawn_job(std::nullopt);
  for (std::uint64_t i = 0; i < 1000; ++i) rt.submit(j, 1, pack_args(i), {}, {});
  rt.run();
  for (auto& r : runs) CHECK(r.load() == 1);
  CHECK(rt.stats().tasks_started.load() == 1000);
  CHECK(rt.stats().tasks_done.load() == 1000);
  CHECK(rt.stats().concurrent_runs.load() == 0);
  CHECK(rt.stats().pronouncements.load() == 0);
  CHECK(all_done(rt));
}

TEST_CASE("a single crash at every point is recovered") {
  for (const CrashPoint point : all_crash_points) {
    for (const std::uint64_t job : {0u, 1u, 2u}) {
      CAPTURE(to_string(point));
      CAPTURE(job);
      Pool pool(256 << 20);
      auto cfg = small_config(4, 1);
      cfg.crash = CrashPlan{1, job, point};
      Runtime rt(pool, cfg, virtual_clock(cfg));
      const std::uint64_t expected = setup_range(rt, 3, 2048, 32);
      rt.run();
      CHECK(rt.stats().crash_fired.load());
      check_totals(rt, 3, 2048);
      CHECK(all_done(rt));
      CHECK(rt.all_tasks().size() == expected);
      CHECK(rt.stats().concurrent_runs.load() == 0);
      // A victim whose arrival released the final phase leaves nobody
      // behind to notice; every other crash is detected and replaced.
      const bool finished_by_victim = job == 2 && point == CrashPoint::in_barrier_wait;
      if (!finished_by_victim || rt.stats().pronouncements.load() != 0) {
        CHECK(rt.stats().pronouncements.load() == 1);
        CHECK(rt.stats().spare_activations.load() == 1);
        CHECK(rt.active_workers() == 4);
        CHECK(rt.heartbeats().is_dead(1));
        CHECK_FALSE(rt.barrier().is_member(1));
        CHECK(rt.barrier().is_member(4));
      }
      // Only a task the victim held RUNNING can run twice.
      CHECK(rt.stats().tasks_started.load() <= expected + 1);
      CHECK(rt.stats().tasks_reexecuted.load() <= 1);
    }
  }
}

TEST_CASE("without spares the run finishes shrunk") {
  Pool pool(256 << 20);
  auto cfg = small_config(4, 0);
  cfg.crash = CrashPlan{2, 0, CrashPoint::mid_task};
  Runtime rt(pool, cfg, virtual_clock(cfg));
  setup_range(rt, 2, 2048, 32);
  rt.run();
  CHECK(rt.stats().crash_fired.load());
  check_totals(rt, 2, 2048);
  CHECK(rt.stats().spare_activations.load() == 0);
  CHECK(rt.active_workers() == 3);
}

TEST_CASE("two failures with one spare activate it once") {
  Pool pool(256 << 20);
  auto cfg = small_config(4, 1);
  cfg.crash = CrashPlan{1, 0, CrashPoint::mid_task};
  cfg.extra_crashes = {CrashPlan{2, 0, CrashPoint::mid_task}};
  Runtime rt(pool, cfg, virtual_clock(cfg));
  setup_range(rt, 2, 2048, 32);
  rt.run();
  CHECK(rt.stats().crash_fired.load());
  check_totals(rt, 2, 2048);
  CHECK(rt.heartbeats().is_dead(1));
  CHECK(rt.heartbeats().is_dead(2));
  CHECK(rt.stats().pronouncements.load() == 2);
  CHECK(rt.stats().spare_activations.load() == 1);
  CHECK(rt.active_workers() == 3);
  CHECK(rt.stats().concurrent_runs.load() == 0);
}

TEST_CASE("a worker lost while peers wait at the barrier releases them") {
  Pool pool(256 << 20);
  auto cfg = small_config(3, 0);
  cfg.crash = CrashPlan{0, 0, CrashPoint::idle};
  Runtime rt(pool, cfg, virtual_clock(cfg));
  setup_range(rt, 2, 256, 32);
  rt.run();
  CHECK(rt.stats().crash_fired.load());
  check_totals(rt, 2, 256);
  CHECK(rt.stats().detect_tick.load() - rt.stats().crash_tick.load() <= cfg.suspicion_timeout + 1 + cfg.beat_period);
}

TEST_CASE("repeated failure-free runs start every task once") {
  for (int round = 0; round < 10; ++round) {
    Pool pool(256 << 20);
    auto cfg = small_config(4, 1);
    cfg.seed = static_cast<std::uint64_t>(round) + 1;
    Runtime rt(pool, cfg, virtual_clock(cfg));
    const std::uint64_t expected = setup_range(rt, 3, 1024, 16);
    rt.run();
    CHECK(rt.stats().tasks_started.load() == expected);
    CHECK(rt.stats().pronouncements.load() == 0);
    CHECK(rt.stats().spare_activations.load() == 0);
  }
}

TEST_CASE("steady clock runs complete as well") {
  Pool pool(256 << 20);
  auto cfg = small_config(3, 1);
  cfg.beat_period = 1000;          // microseconds
  cfg.suspicion_timeout = 500000;  // generous: the machine may be oversubscribed
  cfg.crash = CrashPlan{1, 1, CrashPoint::post_publish_pre_done};
  Runtime rt(pool, cfg, std::make_shared<SteadyClock>());
  setup_range(rt, 3, 1024, 32);
  rt.run();
  CHECK(rt.stats().crash_fired.load());
  check_totals(rt, 3, 1024);
}
