#include "modc/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <locale>
#include <memory>
#include <ostream>
#include <sstream>

#include "modc/bsp.hpp"
#include "modc/clock.hpp"
#include "modc/error.hpp"
#include "modc/pagerank.hpp"
#include "modc/pool.hpp"
#include "modc/runtime.hpp"

namespace modc {

std::string_view to_string(Mode m) noexcept { return m == Mode::modc ? "modc" : "bsp"; }

Mode parse_mode(std::string_view text) {
  if (text == "modc") return Mode::modc;
  if (text == "bsp") return Mode::bsp;
  throw Error(Errc::config_error, "unknown mode '" + std::string(text) + "' (modc or bsp)");
}

namespace {

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) {
    throw Error(Errc::config_error, std::string(key) + ": expected a non-negative integer, got '" +
                                        std::string(text) + "'");
  }
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

CrashSpec parse_crash_spec(std::string_view text) {
  CrashSpec spec;
  bool worker = false, iter = false;
  std::string rest(text);
  std::istringstream parts(rest);
  std::string field;
  while (std::getline(parts, field, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw Error(Errc::config_error, "crash: expected key=value, got '" + field + "'");
    const std::string key = trim(field.substr(0, eq));
    const std::string value = trim(field.substr(eq + 1));
    if (key == "worker") {
      spec.worker = static_cast<WorkerId>(parse_uint("crash worker", value));
      worker = true;
    } else if (key == "iter" || key == "iteration") {
      spec.iteration = parse_uint("crash iter", value);
      iter = true;
    } else if (key == "point") {
      const auto p = parse_crash_point(value);
      if (!p) throw Error(Errc::config_error, "crash: unknown point '" + value + "'");
      spec.point = *p;
    } else {
      throw Error(Errc::config_error, "crash: unknown key '" + key + "'");
    }
  }
  if (!worker || !iter) throw Error(Errc::config_error, "crash: worker and iter are required");
  if (spec.iteration == 0) throw Error(Errc::config_error, "crash: iterations count from 1");
  return spec;
}

std::string format_crash_spec(const CrashSpec& c) {
  return "worker=" + std::to_string(c.worker) + ",iter=" + std::to_string(c.iteration) +
         ",point=" + std::string(to_string(c.point));
}

void validate(const ExperimentConfig& c) {
  auto bad = [](const std::string& why) { throw Error(Errc::config_error, why); };
  if (c.workers == 0) bad("workers must be at least 1");
  if (c.edge_file.empty() && (c.scale < 1 || c.scale > 26)) bad("scale must be in [1, 26]");
  if (c.target_rows == 0) bad("target_rows must be positive");
  if (c.set_rows == 0) bad("set_rows must be positive");
  if (c.ckpt_interval == 0) bad("ckpt_interval must be positive");
  if (c.fanout == 0) bad("fanout must be positive");
  if (c.suspicion_timeout_ms == 0 || c.beat_period_ms == 0) bad("beat period and suspicion timeout must be positive");
  if (c.crash) {
    if (c.crash->worker >= c.workers) bad("crash victim must be one of the initial workers");
    if (c.crash->iteration < 1 || c.crash->iteration > c.iters) bad("crash iteration must be in [1, iters]");
  }
}

void apply_config_value(const std::string& raw_key, const std::string& value, ExperimentConfig& c) {
  std::string key = raw_key;
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "mode") c.mode = parse_mode(value);
  else if (key == "workers") c.workers = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "spares") c.spares = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "scale") c.scale = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "edge_factor") c.edge_factor = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "iters") c.iters = parse_uint(key, value);
  else if (key == "target_rows") c.target_rows = parse_uint(key, value);
  else if (key == "set_rows") c.set_rows = parse_uint(key, value);
  else if (key == "ckpt_interval") c.ckpt_interval = parse_uint(key, value);
  else if (key == "fanout") c.fanout = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "crash") c.crash = value.empty() || value == "none" ? std::nullopt : std::optional(parse_crash_spec(value));
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "beat_period") c.beat_period_ms = parse_uint(key, value);
  else if (key == "suspicion_timeout") c.suspicion_timeout_ms = parse_uint(key, value);
  else if (key == "pool_capacity") c.pool_capacity = parse_uint(key, value);
  else if (key == "deterministic") c.deterministic = value == "1" || value == "true" || value == "yes";
  else if (key == "edges" || key == "edge_file") c.edge_file = value;
  else throw Error(Errc::config_error, "unknown config key '" + raw_key + "'");
}

void apply_config_file(std::istream& in, ExperimentConfig& c) {
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::config_error, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_config_value(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), c);
  }
}

Workload build_workload(const ExperimentConfig& c) {
  Workload w;
  if (!c.edge_file.empty()) {
    std::ifstream in(c.edge_file);
    if (!in) throw Error(Errc::config_error, "cannot open edge list '" + c.edge_file + "'");
    const auto edges = read_edge_list(in);
    std::uint64_t n = 0;
    for (const Edge& e : edges) n = std::max<std::uint64_t>(n, std::max(e.src, e.dst) + std::uint64_t{1});
    w.matrix = build_csr(edges, n);
  } else {
    RmatParams p;
    p.edge_factor = c.edge_factor;
    w.matrix = build_csr(rmat_generate(c.scale, p, c.seed), std::uint64_t{1} << c.scale);
  }
  w.oracle = oracle_pagerank_trace(w.matrix, c.iters);
  return w;
}

double normalization_error(const std::vector<double>& ranks) {
  long double sum = 0;
  for (const double r : ranks) sum += r;
  return static_cast<double>(std::fabs(sum - 1.0L));
}

namespace {

std::shared_ptr<Clock> make_clock(const ExperimentConfig& c) {
  if (c.deterministic) return std::make_shared<VirtualClock>(c.workers + c.spares);
  return std::make_shared<SteadyClock>();
}

void fill_quality(RunMetrics& m, const std::vector<std::vector<double>>& iterations, const Workload& w) {
  m.normalized = true;
  for (const auto& v : iterations) {
    const double err = normalization_error(v);
    m.max_normalization_error = std::max(m.max_normalization_error, err);
    if (!(err <= 1e-12)) m.normalized = false;
  }
  m.correct = iterations.size() == w.oracle.size();
  for (std::size_t k = 0; m.correct && k < iterations.size(); ++k) {
    const auto& a = iterations[k];
    const auto& b = w.oracle[k];
    m.correct = a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
}

std::vector<double> iteration_durations(const std::vector<std::uint64_t>& ends_us, std::uint64_t start_us) {
  std::vector<double> out;
  std::uint64_t prev = start_us;
  for (const std::uint64_t e : ends_us) {
    out.push_back(e >= prev ? static_cast<double>(e - prev) / 1000.0 : 0.0);
    prev = std::max(prev, e);
  }
  return out;
}

RunMetrics run_modc(const ExperimentConfig& c, const Workload& w) {
  auto clock = make_clock(c);
  const std::uint64_t tpm = clock->ticks_per_ms();
  RuntimeConfig rc;
  rc.workers = c.workers;
  rc.spares = c.spares;
  rc.beat_period = c.beat_period_ms * tpm;
  rc.suspicion_timeout = c.suspicion_timeout_ms * tpm;
  rc.seed = c.seed;
  rc.max_jobs = static_cast<std::uint32_t>(c.iters + 2);
  const std::uint64_t leaves_per_iter = expected_task_count(w.matrix.n, 1, c.target_rows, c.fanout);
  rc.name_slots = std::bit_ceil(std::max<std::uint64_t>(1 << 12, 4 * (c.iters + 2) * leaves_per_iter + 64));
  if (c.crash) rc.crash = CrashPlan{c.crash->worker, c.crash->iteration - 1, c.crash->point};

  Pool pool(c.pool_capacity);
  const SteadyClock wall;
  Runtime rt(pool, rc, clock);
  const ModcPagerankOptions opts{c.iters, c.target_rows, c.fanout, default_damping};
  const std::uint64_t start = wall.now();
  setup_modc_pagerank(rt, w.matrix, opts);
  rt.run();
  const std::uint64_t end = wall.now();
  const ModcPagerankResult res = collect_modc_pagerank(rt, w.matrix.n, c.iters);

  RunMetrics m;
  m.total_time_ms = static_cast<double>(end - start) / 1000.0;
  // Job completion stamps count from the runtime's construction.
  m.per_iteration_ms = iteration_durations(res.iteration_end_us, 0);
  const RuntimeStats& s = rt.stats();
  m.tasks_executed = s.tasks_started.load();
  m.tasks_expected = expected_task_count(w.matrix.n, c.iters, c.target_rows, c.fanout);
  m.tasks_reexecuted = s.tasks_reexecuted.load();
  m.steals_ok = s.steals_ok.load();
  m.steals_failed = s.steals_failed.load();
  m.concurrent_runs = s.concurrent_runs.load();
  m.spare_activations = s.spare_activations.load();
  m.crash_fired = s.crash_fired.load();
  m.victim_queue_len = s.crash_queue_len.load();
  if (m.crash_fired && s.detect_tick.load() != 0) {
    m.detection_latency_ticks = s.detect_tick.load() - s.crash_tick.load();
    m.detection_latency_ms = static_cast<double>(s.detect_wall_us.load() - s.crash_wall_us.load()) / 1000.0;
  }
  fill_quality(m, res.iterations, w);
  m.ranks = res.ranks;
  return m;
}

RunMetrics run_bsp(const ExperimentConfig& c, const Workload& w) {
  auto clock = make_clock(c);
  const std::uint64_t tpm = clock->ticks_per_ms();
  BspConfig bc;
  bc.workers = c.workers;
  bc.spares = c.spares;
  bc.iters = c.iters;
  bc.set_rows = c.set_rows;
  bc.ckpt_interval = c.ckpt_interval;
  bc.beat_period = c.beat_period_ms * tpm;
  bc.suspicion_timeout = c.suspicion_timeout_ms * tpm;
  if (c.crash) bc.crash = CrashPlan{c.crash->worker, c.crash->iteration, c.crash->point};

  Pool pool(c.pool_capacity);
  const SteadyClock wall;
  const BspResult res = run_bsp_pagerank(pool, w.matrix, bc, clock);
  const std::uint64_t end = wall.now();

  RunMetrics m;
  m.total_time_ms = static_cast<double>(end) / 1000.0;
  m.per_iteration_ms = iteration_durations(res.iteration_end_us, 0);
  m.tasks_executed = res.row_sets_executed;
  m.tasks_expected = c.iters * ((w.matrix.n + c.set_rows - 1) / c.set_rows);
  m.tasks_reexecuted = m.tasks_executed - std::min(m.tasks_executed, m.tasks_expected);
  m.crash_fired = res.crash_fired;
  m.spare_activations = res.recoveries;
  m.checkpoint_time_ms = static_cast<double>(res.checkpoint_us) / 1000.0;
  m.replay_iterations = res.replay_iterations;
  if (res.crash_fired && res.detect_tick != 0) {
    m.detection_latency_ticks = res.detect_tick - res.crash_tick;
    m.detection_latency_ms = static_cast<double>(res.detect_wall_us - res.crash_wall_us) / 1000.0;
  }
  fill_quality(m, res.iterations, w);
  m.ranks = res.ranks;
  return m;
}

}  // namespace

RunMetrics run_experiment(const ExperimentConfig& c, const Workload& w) {
  validate(c);
  RunMetrics m = c.mode == Mode::modc ? run_modc(c, w) : run_bsp(c, w);
  m.mode = c.mode;
  m.crash = c.crash;
  m.n = w.matrix.n;
  m.edges = w.matrix.edges();
  return m;
}

RunMetrics run_experiment(const ExperimentConfig& c) {
  validate(c);
  return run_experiment(c, build_workload(c));
}

std::string csv_header() {
  return "mode,workers,spares,scale,iters,target_rows,set_rows,ckpt_interval,crash_worker,crash_iter,crash_point,"
         "total_time_ms,detection_latency_ticks,detection_latency_ms,tasks_executed,tasks_reexecuted,steals_ok,"
         "steals_failed,checkpoint_time_ms,replay_iterations,max_normalization_error,correct,per_iteration_ms";
}

std::string csv_row(const ExperimentConfig& c, const RunMetrics& m) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << to_string(c.mode) << ',' << c.workers << ',' << c.spares << ',' << c.scale << ',' << c.iters << ','
     << c.target_rows << ',' << c.set_rows << ',' << c.ckpt_interval << ',';
  if (c.crash) {
    os << c.crash->worker << ',' << c.crash->iteration << ',' << to_string(c.crash->point) << ',';
  } else {
    os << ",,,";
  }
  os << fixed(m.total_time_ms) << ',';
  if (m.detection_latency_ticks) os << *m.detection_latency_ticks;
  os << ',';
  if (m.detection_latency_ms) os << fixed(*m.detection_latency_ms);
  os << ',' << m.tasks_executed << ',' << m.tasks_reexecuted << ',' << m.steals_ok << ',' << m.steals_failed << ','
     << fixed(m.checkpoint_time_ms) << ',' << m.replay_iterations << ',' << std::scientific << std::setprecision(3)
     << m.max_normalization_error << ',' << (m.correct ? 1 : 0) << ',';
  for (std::size_t i = 0; i < m.per_iteration_ms.size(); ++i) os << (i ? ";" : "") << fixed(m.per_iteration_ms[i]);
  return os.str();
}

std::vector<TaskSizeRow> sweep_task_size(const ExperimentConfig& base, const std::vector<std::uint64_t>& sizes,
                                         std::uint32_t repeats) {
  if (base.mode != Mode::modc) throw Error(Errc::config_error, "the task-size sweep runs the task runtime (mode modc)");
  if (sizes.empty()) throw Error(Errc::config_error, "no sizes to sweep");
  validate(base);
  const Workload w = build_workload(base);
  std::vector<TaskSizeRow> rows;
  for (const std::uint64_t size : sizes) {
    ExperimentConfig c = base;
    c.target_rows = size;
    TaskSizeRow row;
    row.size = size;
    row.correct = true;
    for (std::uint32_t r = 0; r < std::max(1u, repeats); ++r) {
      const RunMetrics m = run_experiment(c, w);
      row.total_time_ms += m.total_time_ms / std::max(1u, repeats);
      row.tasks_executed = m.tasks_executed;
      row.tasks_expected = m.tasks_expected;
      row.correct = row.correct && m.correct;
      row.max_normalization_error = std::max(row.max_normalization_error, m.max_normalization_error);
    }
    rows.push_back(row);
  }
  double best = rows.front().total_time_ms;
  for (const auto& r : rows) best = std::min(best, r.total_time_ms);
  for (auto& r : rows) r.relative_to_best = best > 0 ? r.total_time_ms / best : 1.0;
  return rows;
}

void write_task_size_csv(std::ostream& out, const std::vector<TaskSizeRow>& rows) {
  out << "size,total_time_ms,relative_to_best,tasks_executed,tasks_expected,correct\n";
  for (const auto& r : rows) {
    out << r.size << ',' << fixed(r.total_time_ms) << ',' << fixed(r.relative_to_best, 4) << ',' << r.tasks_executed
        << ',' << r.tasks_expected << ',' << (r.correct ? 1 : 0) << '\n';
  }
}

CrashSweep sweep_crash_iteration(const ExperimentConfig& base, std::uint32_t repeats) {
  validate(base);
  const Workload w = build_workload(base);
  const std::uint32_t reps = std::max(1u, repeats);
  const CrashSpec proto = base.crash.value_or(CrashSpec{0, 1, CrashPoint::mid_task});
  CrashSweep sweep;
  for (const Mode mode : {Mode::modc, Mode::bsp}) {
    ExperimentConfig c = base;
    c.mode = mode;
    c.crash.reset();
    double ff = 0;
    for (std::uint32_t r = 0; r < reps; ++r) ff += run_experiment(c, w).total_time_ms / reps;
    (mode == Mode::modc ? sweep.modc_failure_free_ms : sweep.bsp_failure_free_ms) = ff;
    for (std::uint64_t i = 1; i <= base.iters; ++i) {
      c.crash = CrashSpec{proto.worker, i, proto.point};
      CrashSweepRow row;
      row.mode = mode;
      row.crash_iter = i;
      row.correct = true;
      for (std::uint32_t r = 0; r < reps; ++r) {
        const RunMetrics m = run_experiment(c, w);
        row.total_time_ms += m.total_time_ms / reps;
        row.replay_iterations = m.replay_iterations;
        row.tasks_reexecuted = m.tasks_reexecuted;
        row.correct = row.correct && m.correct;
      }
      row.penalty_vs_failure_free = ff > 0 ? row.total_time_ms / ff - 1.0 : 0.0;
      sweep.rows.push_back(row);
    }
  }
  return sweep;
}

void write_crash_sweep_csv(std::ostream& out, const CrashSweep& sweep) {
  out << "mode,crash_iter,total_time_ms,penalty_vs_failure_free,replay_iterations,tasks_reexecuted,correct\n";
  for (const auto& r : sweep.rows) {
    out << to_string(r.mode) << ',' << r.crash_iter << ',' << fixed(r.total_time_ms) << ','
        << fixed(r.penalty_vs_failure_free, 4) << ',' << r.replay_iterations << ',' << r.tasks_reexecuted << ','
        << (r.correct ? 1 : 0) << '\n';
  }
}

void write_crash_sweep_report(std::ostream& out, const CrashSweep& sweep, std::uint64_t ckpt_interval) {
  out << "failure-free: modc " << fixed(sweep.modc_failure_free_ms) << " ms, bsp " << fixed(sweep.bsp_failure_free_ms)
      << " ms\n";
  out << "iter  modc_ms   modc_pen   bsp_ms    bsp_pen   replay\n";
  std::vector<const CrashSweepRow*> modc, bsp;
  for (const auto& r : sweep.rows) (r.mode == Mode::modc ? modc : bsp).push_back(&r);
  for (std::size_t i = 0; i < std::min(modc.size(), bsp.size()); ++i) {
    out << std::setw(4) << modc[i]->crash_iter << "  " << std::setw(8) << fixed(modc[i]->total_time_ms) << "  "
        << std::setw(8) << fixed(100 * modc[i]->penalty_vs_failure_free, 1) << "%  " << std::setw(8)
        << fixed(bsp[i]->total_time_ms) << "  " << std::setw(8) << fixed(100 * bsp[i]->penalty_vs_failure_free, 1)
        << "%  " << bsp[i]->replay_iterations << '\n';
  }
  double worst_modc = 0, worst_bsp = 0;
  for (const auto* r : modc) worst_modc = std::max(worst_modc, r->penalty_vs_failure_free);
  for (const auto* r : bsp) worst_bsp = std::max(worst_bsp, r->penalty_vs_failure_free);
  out << "worst penalty: modc " << fixed(100 * worst_modc, 1) << "%, bsp " << fixed(100 * worst_bsp, 1)
      << "% (checkpoint every " << ckpt_interval << " iterations)\n";
}

}  // namespace modc
