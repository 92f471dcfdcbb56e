#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modc/graph.hpp"
#include "modc/runtime.hpp"

namespace modc {

inline constexpr double default_damping = 0.85;

/// Rank mass sitting on vertices with no out-edges, summed in vertex order.
double dangling_mass(const std::uint32_t* out_degree, const double* rank, std::uint64_t n);

/// new[v] for v in [begin, end): (1-d)/n + d * (sum over in-edges u of
/// rank[u]/out_degree[u] + dangling/n), summing in CSR order. Writes
/// out[v - begin].
void rank_rows(const std::uint64_t* row_ptr, const std::uint32_t* col_idx, const std::uint32_t* out_degree,
               std::uint64_t n, const double* rank, double dangling, double damping, std::uint64_t begin,
               std::uint64_t end, double* out);

/// Single-threaded power iteration; the reference every engine must match
/// bit for bit. Returns the vectors after iterations 0..iters.
std::vector<std::vector<double>> oracle_pagerank_trace(const CsrMatrix& m, std::uint64_t iters,
                                                       double damping = default_damping);
std::vector<double> oracle_pagerank(const CsrMatrix& m, std::uint64_t iters, double damping = default_damping);

struct RowRange {
  std::uint64_t begin;
  std::uint64_t end;
  std::uint64_t rows() const noexcept { return end - begin; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

/// Halving decomposition until a range has at most `target` rows; leaves in
/// row order.
std::vector<RowRange> decompose(RowRange range, std::uint64_t target);
/// Nodes in the halving tree over `rows` rows (splits and leaves).
std::uint64_t decomposition_nodes(std::uint64_t rows, std::uint64_t target);
/// [0, n) cut into `fanout` near-equal root ranges.
std::vector<RowRange> root_ranges(std::uint64_t n, std::uint32_t fanout);
/// Tasks one run of the task-parallel driver executes.
std::uint64_t expected_task_count(std::uint64_t n, std::uint64_t iters, std::uint64_t target, std::uint32_t fanout);

struct ModcPagerankOptions {
  std::uint64_t iters = 10;
  std::uint64_t target_rows = 256;
  std::uint32_t fanout = 1;
  double damping = default_damping;
};

struct ModcPagerankResult {
  std::vector<double> ranks;
  std::vector<std::vector<double>> iterations;  // after iterations 0..iters
  std::vector<std::uint64_t> iteration_end_us;  // job completion times, runtime clock
};

/// Function ids the driver registers.
enum PagerankFn : FnId { fn_pagerank = 1, fn_spmv_split = 2, fn_spmv_leaf = 3 };

std::string rank_name(std::uint64_t iter);
std::string segment_name(std::uint64_t iter, std::uint64_t begin);

/// Registers the task functions, publishes the matrix and the uniform
/// starting vector, and submits the first job. Each job holds one
/// iteration: a pagerank task that assembles the previous iteration's
/// segments, spawns the spmv tree, and chains the next job behind itself.
void setup_modc_pagerank(Runtime& rt, const CsrMatrix& m, const ModcPagerankOptions& opts);
ModcPagerankResult collect_modc_pagerank(const Runtime& rt, std::uint64_t n, std::uint64_t iters);
ModcPagerankResult run_modc_pagerank(Runtime& rt, const CsrMatrix& m, const ModcPagerankOptions& opts);

}  // namespace modc
