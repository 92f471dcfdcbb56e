// Experiment runner: single runs, task-size sweeps and crash-iteration sweeps.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "modc/error.hpp"
#include "modc/harness.hpp"

namespace {

using namespace modc;

struct Flags {
  std::string config_file;
  std::string mode, crash;
  std::optional<std::uint32_t> workers, spares, scale, edge_factor, fanout;
  std::optional<std::uint64_t> iters, target_rows, set_rows, ckpt_interval, seed, beat_period, suspicion_timeout;
  std::string edges;
  bool deterministic = false;
  std::string out;
  std::vector<std::uint64_t> sizes{64, 256, 1024, 4096, 16384};
  std::uint32_t repeats = 1;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config_file, "key = value file; flags override it");
  app->add_option("--mode", f.mode, "modc or bsp");
  app->add_option("--workers", f.workers, "initial workers");
  app->add_option("--spares", f.spares, "hot spares");
  app->add_option("--scale", f.scale, "RMAT log2 vertex count");
  app->add_option("--edge-factor", f.edge_factor, "edges per vertex");
  app->add_option("--edges", f.edges, "edge-list file instead of a generated graph");
  app->add_option("--iters", f.iters, "PageRank iterations");
  app->add_option("--target-rows", f.target_rows, "leaf size of the spmv decomposition (modc)");
  app->add_option("--fanout", f.fanout, "root spmv tasks per iteration (modc)");
  app->add_option("--set-rows", f.set_rows, "rows per static row set (bsp)");
  app->add_option("--ckpt-interval", f.ckpt_interval, "iterations between checkpoints (bsp)");
  app->add_option("--crash", f.crash, "worker=W,iter=I,point=P");
  app->add_option("--seed", f.seed, "graph and scheduler seed");
  app->add_option("--beat-period", f.beat_period, "heartbeat period, ms");
  app->add_option("--suspicion-timeout", f.suspicion_timeout, "ms without a beat before a worker is suspected");
  app->add_flag("--deterministic", f.deterministic, "virtual clock instead of wall-clock heartbeats");
  app->add_option("--out", f.out, "CSV output file (default: standard output)");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw Error(Errc::config_error, "cannot open config file '" + f.config_file + "'");
    apply_config_file(in, c);
  }
  if (!f.mode.empty()) c.mode = parse_mode(f.mode);
  if (f.workers) c.workers = *f.workers;
  if (f.spares) c.spares = *f.spares;
  if (f.scale) c.scale = *f.scale;
  if (f.edge_factor) c.edge_factor = *f.edge_factor;
  if (f.fanout) c.fanout = *f.fanout;
  if (f.iters) c.iters = *f.iters;
  if (f.target_rows) c.target_rows = *f.target_rows;
  if (f.set_rows) c.set_rows = *f.set_rows;
  if (f.ckpt_interval) c.ckpt_interval = *f.ckpt_interval;
  if (f.seed) c.seed = *f.seed;
  if (f.beat_period) c.beat_period_ms = *f.beat_period;
  if (f.suspicion_timeout) c.suspicion_timeout_ms = *f.suspicion_timeout;
  if (!f.crash.empty()) c.crash = parse_crash_spec(f.crash);
  if (!f.edges.empty()) c.edge_file = f.edges;
  if (f.deterministic) c.deterministic = true;
  validate(c);
  return c;
}

void emit(const std::string& path, const std::string& csv) {
  if (path.empty()) {
    std::cout << csv;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(Errc::config_error, "cannot write '" + path + "'");
  out << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilient task runtime over an emulated memory pool: PageRank experiments"};
  app.require_subcommand(1);
  Flags f;
  auto* run = app.add_subcommand("run", "one run, validated against the sequential reference");
  auto* sweep_size = app.add_subcommand("sweep-task-size", "task-runtime run per decomposition leaf size");
  auto* sweep_crash = app.add_subcommand("sweep-crash", "crash at every iteration, both engines");
  for (auto* sub : {run, sweep_size, sweep_crash}) add_common(sub, f);
  sweep_size->add_option("--sizes", f.sizes, "leaf sizes")->delimiter(',');
  for (auto* sub : {sweep_size, sweep_crash}) sub->add_option("--repeats", f.repeats, "runs averaged per point");
  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig c = resolve(f);
    if (*run) {
      const RunMetrics m = run_experiment(c);
      emit(f.out, csv_header() + "\n" + csv_row(c, m) + "\n");
      std::cerr << to_string(c.mode) << ": n=" << m.n << " edges=" << m.edges << " time=" << m.total_time_ms
                << " ms tasks=" << m.tasks_executed << " reexecuted=" << m.tasks_reexecuted;
      if (c.mode == Mode::bsp) std::cerr << " replay_iterations=" << m.replay_iterations;
      if (m.detection_latency_ticks) std::cerr << " detection=" << *m.detection_latency_ticks << " ticks";
      std::cerr << " normalization_error=" << m.max_normalization_error
                << (m.correct ? " result matches the reference\n" : " RESULT DIFFERS FROM THE REFERENCE\n");
      return m.correct && m.normalized ? 0 : 1;
    }
    if (*sweep_size) {
      ExperimentConfig base = c;
      base.mode = Mode::modc;
      const auto rows = sweep_task_size(base, f.sizes, f.repeats);
      std::ostringstream csv;
      write_task_size_csv(csv, rows);
      emit(f.out, csv.str());
      bool ok = true;
      for (const auto& r : rows) {
        std::cerr << "target_rows=" << r.size << " relative=" << r.relative_to_best << " tasks=" << r.tasks_executed
                  << " (tree formula " << r.tasks_expected << ")\n";
        ok = ok && r.correct && r.tasks_executed == r.tasks_expected;
      }
      return ok ? 0 : 1;
    }
    const CrashSweep sweep = sweep_crash_iteration(c, f.repeats);
    std::ostringstream csv;
    write_crash_sweep_csv(csv, sweep);
    emit(f.out, csv.str());
    write_crash_sweep_report(std::cout, sweep, c.ckpt_interval);
    bool ok = true;
    for (const auto& r : sweep.rows) ok = ok && r.correct;
    return ok ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
