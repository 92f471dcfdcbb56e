#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "modc/fault.hpp"
#include "modc/graph.hpp"

namespace modc {

enum class Mode { modc, bsp };

std::string_view to_string(Mode m) noexcept;
Mode parse_mode(std::string_view text);

/// Victim worker, 1-based iteration, and the crash point to halt at.
struct CrashSpec {
  WorkerId worker = 0;
  std::uint64_t iteration = 1;
  CrashPoint point = CrashPoint::mid_task;
};

/// "worker=W,iter=I,point=P"
CrashSpec parse_crash_spec(std::string_view text);
std::string format_crash_spec(const CrashSpec& c);

struct ExperimentConfig {
  Mode mode = Mode::modc;
  std::uint32_t workers = 8;
  std::uint32_t spares = 1;
  std::uint32_t scale = 14;
  std::uint32_t edge_factor = 16;
  std::uint64_t iters = 10;
  std::uint64_t target_rows = 256;
  std::uint64_t set_rows = 512;
  std::uint64_t ckpt_interval = 4;
  std::uint32_t fanout = 1;
  std::optional<CrashSpec> crash;
  std::uint64_t seed = 1;
  std::uint64_t beat_period_ms = 1;
  std::uint64_t suspicion_timeout_ms = 50;
  std::uint64_t pool_capacity = std::uint64_t{4} << 30;
  bool deterministic = false;  // virtual clock
  std::string edge_file;       // optional; replaces the generated graph
};

/// Throws Error(config_error) when the configuration cannot run.
void validate(const ExperimentConfig& c);

/// Applies "key = value" lines (keys as the long flags, with or without
/// dashes turned into underscores; '#' starts a comment).
void apply_config_file(std::istream& in, ExperimentConfig& c);
/// Applies one key/value pair.
void apply_config_value(const std::string& key, const std::string& value, ExperimentConfig& c);

/// The graph and its reference answer, shared by runs that differ only in
/// engine settings.
struct Workload {
  CsrMatrix matrix;
  std::vector<std::vector<double>> oracle;  // iterations 0..iters
};
Workload build_workload(const ExperimentConfig& c);

struct RunMetrics {
  Mode mode = Mode::modc;
  std::optional<CrashSpec> crash;
  std::uint64_t n = 0;
  std::uint64_t edges = 0;
  double total_time_ms = 0;
  std::vector<double> per_iteration_ms;
  std::optional<std::uint64_t> detection_latency_ticks;
  std::optional<double> detection_latency_ms;
  std::uint64_t tasks_executed = 0;  // task starts (modc) or row sets computed (bsp)
  std::uint64_t tasks_expected = 0;  // decomposition-tree count (modc)
  std::uint64_t tasks_reexecuted = 0;
  std::uint64_t steals_ok = 0;
  std::uint64_t steals_failed = 0;
  std::uint64_t concurrent_runs = 0;
  std::uint64_t spare_activations = 0;
  std::uint64_t victim_queue_len = 0;
  bool crash_fired = false;
  double checkpoint_time_ms = 0;
  std::uint64_t replay_iterations = 0;
  double max_normalization_error = 0;
  bool normalized = false;
  bool correct = false;  // bitwise equal to the reference
  std::vector<double> ranks;
};

RunMetrics run_experiment(const ExperimentConfig& c);
RunMetrics run_experiment(const ExperimentConfig& c, const Workload& w);

/// |sum - 1| with compensated summation.
double normalization_error(const std::vector<double>& ranks);

std::string csv_header();
std::string csv_row(const ExperimentConfig& c, const RunMetrics& m);

struct TaskSizeRow {
  std::uint64_t size = 0;
  double total_time_ms = 0;
  double relative_to_best = 0;
  std::uint64_t tasks_executed = 0;
  std::uint64_t tasks_expected = 0;
  bool correct = false;
  double max_normalization_error = 0;  // worst over every iteration and repeat
};
std::vector<TaskSizeRow> sweep_task_size(const ExperimentConfig& base, const std::vector<std::uint64_t>& sizes,
                                         std::uint32_t repeats = 1);
void write_task_size_csv(std::ostream& out, const std::vector<TaskSizeRow>& rows);

struct CrashSweepRow {
  Mode mode = Mode::modc;
  std::uint64_t crash_iter = 0;
  double total_time_ms = 0;
  double penalty_vs_failure_free = 0;  // relative: crash / failure-free - 1
  std::uint64_t replay_iterations = 0;
  std::uint64_t tasks_reexecuted = 0;
  bool correct = false;
};
struct CrashSweep {
  double modc_failure_free_ms = 0;
  double bsp_failure_free_ms = 0;
  std::vector<CrashSweepRow> rows;
};
/// One crash run per iteration and mode (crash point and victim from the
/// base config's crash spec, or mid_task on worker 0); times averaged over
/// `repeats` runs.
CrashSweep sweep_crash_iteration(const ExperimentConfig& base, std::uint32_t repeats = 1);
void write_crash_sweep_csv(std::ostream& out, const CrashSweep& sweep);
void write_crash_sweep_report(std::ostream& out, const CrashSweep& sweep, std::uint64_t ckpt_interval);

}  // namespace modc
