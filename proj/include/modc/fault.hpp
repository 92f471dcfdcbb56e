#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "modc/deque.hpp"

namespace modc {

/// Named places where a worker can be made to halt.
enum class CrashPoint {
  pre_running_cas,        // running slot written, READY->RUNNING not yet attempted
  mid_task,               // function returned, first half of the outputs published
  post_publish_pre_done,  // every output published, RUNNING->DONE not yet attempted
  in_barrier_wait,        // arrived at the barrier and waiting
  idle,                   // found no work, about to arrive
};

inline constexpr CrashPoint all_crash_points[] = {
    CrashPoint::pre_running_cas, CrashPoint::mid_task, CrashPoint::post_publish_pre_done,
    CrashPoint::in_barrier_wait, CrashPoint::idle};

std::string_view to_string(CrashPoint p) noexcept;
std::optional<CrashPoint> parse_crash_point(std::string_view text) noexcept;

/// Halts `victim` at the first `point` it reaches while working on `epoch`
/// or later. What an epoch is depends on the engine: the job id for the
/// task runtime, the iteration for the BSP baseline.
struct CrashPlan {
  WorkerId victim = 0;
  std::uint64_t epoch = 0;
  CrashPoint point = CrashPoint::mid_task;
};

/// Thrown inside a worker to unwind it at a crash point. Caught only at the
/// top of the worker's thread, which then exits with its private state.
struct WorkerCrash {
  WorkerId worker;
};

}  // namespace modc
