#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "modc/clock.hpp"
#include "modc/fault.hpp"
#include "modc/graph.hpp"
#include "modc/pagerank.hpp"
#include "modc/pool.hpp"

namespace modc {

struct BspConfig {
  std::uint32_t workers = 8;
  std::uint32_t spares = 1;
  std::uint64_t iters = 10;
  std::uint64_t set_rows = 512;
  std::uint64_t ckpt_interval = 4;
  double damping = default_damping;
  std::uint64_t beat_period = 1;
  std::uint64_t suspicion_timeout = 50;
  std::optional<CrashPlan> crash;  // epoch = iteration, 1-based
};

struct BspResult {
  std::vector<double> ranks;
  std::vector<std::vector<double>> iterations;  // after iterations 0..iters
  std::vector<std::uint64_t> iteration_end_us;  // first commit of each iteration
  std::uint64_t row_sets_executed = 0;
  std::uint64_t replay_iterations = 0;
  std::uint64_t recoveries = 0;
  std::uint64_t checkpoint_us = 0;  // summed over workers, divided by worker count
  std::uint64_t pronouncements = 0;
  bool crash_fired = false;
  std::uint64_t crash_tick = 0;
  std::uint64_t detect_tick = 0;
  std::uint64_t crash_wall_us = 0;
  std::uint64_t detect_wall_us = 0;
};

/// Bulk-synchronous PageRank with checkpoint/restart. Row sets of
/// `set_rows` rows are dealt round robin to worker slots; every iteration
/// ends at a full barrier, and every `ckpt_interval` iterations the vector
/// is copied into one of two alternating checkpoint buffers. When a worker
/// is pronounced dead, a spare (or the survivor that noticed) takes its
/// slot and everyone rolls back to the last completed checkpoint.
BspResult run_bsp_pagerank(Pool& pool, const CsrMatrix& m, const BspConfig& config, std::shared_ptr<Clock> clock);

}  // namespace modc
