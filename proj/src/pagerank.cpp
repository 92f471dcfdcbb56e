#include "modc/pagerank.hpp"

#include <cstring>

namespace modc {

double dangling_mass(const std::uint32_t* out_degree, const double* rank, std::uint64_t n) {
  double mass = 0.0;
  for (std::uint64_t u = 0; u < n; ++u)
    if (out_degree[u] == 0) mass += rank[u];
  return mass;
}

void rank_rows(const std::uint64_t* row_ptr, const std::uint32_t* col_idx, const std::uint32_t* out_degree,
               std::uint64_t n, const double* rank, double dangling, double damping, std::uint64_t begin,
               std::uint64_t end, double* out) {
  const double nd = static_cast<double>(n);
  const double base = (1.0 - damping) / nd;
  for (std::uint64_t v = begin; v < end; ++v) {
    double sum = 0.0;
    for (std::uint64_t k = row_ptr[v]; k < row_ptr[v + 1]; ++k) {
      const std::uint32_t u = col_idx[k];
      sum += rank[u] / out_degree[u];
    }
    out[v - begin] = base + damping * (sum + dangling / nd);
  }
}

std::vector<std::vector<double>> oracle_pagerank_trace(const CsrMatrix& m, std::uint64_t iters, double damping) {
  const double nd = static_cast<double>(m.n);
  std::vector<std::vector<double>> trace;
  trace.emplace_back(m.n, 1.0 / nd);
  for (std::uint64_t it = 0; it < iters; ++it) {
    const std::vector<double>& cur = trace.back();
    double dangling = 0.0;
    for (std::uint64_t u = 0; u < m.n; ++u)
      if (m.out_degree[u] == 0) dangling += cur[u];
    std::vector<double> next(m.n);
    for (std::uint64_t v = 0; v < m.n; ++v) {
      double sum = 0.0;
      for (std::uint64_t k = m.row_ptr[v]; k < m.row_ptr[v + 1]; ++k) sum += cur[m.col_idx[k]] / m.out_degree[m.col_idx[k]];
      next[v] = (1.0 - damping) / nd + damping * (sum + dangling / nd);
    }
    trace.push_back(std::move(next));
  }
  return trace;
}

std::vector<double> oracle_pagerank(const CsrMatrix& m, std::uint64_t iters, double damping) {
  return oracle_pagerank_trace(m, iters, damping).back();
}

std::vector<RowRange> decompose(RowRange range, std::uint64_t target) {
  std::vector<RowRange> leaves;
  std::vector<RowRange> stack{range};
  while (!stack.empty()) {
    const RowRange r = stack.back();
    stack.pop_back();
    if (r.rows() <= target) {
      leaves.push_back(r);
      continue;
    }
    const std::uint64_t mid = r.begin + r.rows() / 2;
    stack.push_back({mid, r.end});
    stack.push_back({r.begin, mid});
  }
  return leaves;
}

std::uint64_t decomposition_nodes(std::uint64_t rows, std::uint64_t target) {
  if (rows <= target) return 1;
  return 1 + decomposition_nodes(rows / 2, target) + decomposition_nodes(rows - rows / 2, target);
}

std::vector<RowRange> root_ranges(std::uint64_t n, std::uint32_t fanout) {
  const std::uint64_t parts = std::max<std::uint64_t>(1, std::min<std::uint64_t>(fanout, n));
  std::vector<RowRange> roots;
  for (std::uint64_t i = 0; i < parts; ++i) roots.push_back({n * i / parts, n * (i + 1) / parts});
  return roots;
}

std::uint64_t expected_task_count(std::uint64_t n, std::uint64_t iters, std::uint64_t target, std::uint32_t fanout) {
  std::uint64_t per_iteration = 1;  // the pagerank task
  for (const RowRange r : root_ranges(n, fanout)) per_iteration += decomposition_nodes(r.rows(), target);
  return iters * per_iteration + 1;
}

std::string rank_name(std::uint64_t iter) { return "rank:" + std::to_string(iter); }
std::string segment_name(std::uint64_t iter, std::uint64_t begin) {
  return "seg:" + std::to_string(iter) + ":" + std::to_string(begin);
}

namespace {

const char* const csr_row_ptr = "csr:row_ptr";
const char* const csr_col_idx = "csr:col_idx";
const char* const csr_out_degree = "csr:out_degree";

std::string dangling_name(std::uint64_t iter) { return "dangling:" + std::to_string(iter); }

struct PagerankArgs {
  std::uint64_t iter;
  std::uint64_t iters;
  std::uint64_t n;
  std::uint64_t target;
  std::uint64_t fanout;
  double damping;
};

struct SpmvArgs {
  std::uint64_t iter;  // reads rank:iter, writes segments of iter + 1
  std::uint64_t begin;
  std::uint64_t end;
  std::uint64_t target;
  std::uint64_t n;
  double damping;
};

// Named data live in the pool at 8-byte aligned addresses.
template <typename T>
const T* view(std::span<const std::byte> bytes) {
  return reinterpret_cast<const T*>(bytes.data());
}

template <typename T>
std::vector<std::byte> to_bytes(const T* data, std::size_t count) {
  std::vector<std::byte> out(count * sizeof(T));
  if (count != 0) std::memcpy(out.data(), data, out.size());
  return out;
}

std::vector<std::string> segment_names(std::uint64_t iter, std::uint64_t n, std::uint64_t target,
                                       std::uint32_t fanout) {
  std::vector<std::string> names;
  for (const RowRange root : root_ranges(n, fanout))
    for (const RowRange leaf : decompose(root, target)) names.push_back(segment_name(iter, leaf.begin));
  return names;
}

std::vector<std::string> spmv_inputs(std::uint64_t iter) {
  return {rank_name(iter), dangling_name(iter), csr_row_ptr, csr_col_idx, csr_out_degree};
}

void spawn_spmv(TaskContext& ctx, const SpmvArgs& a) {
  const bool leaf = a.end - a.begin <= a.target;
  std::vector<std::string> outputs;
  if (leaf) outputs.push_back(segment_name(a.iter + 1, a.begin));
  ctx.spawn_task(ctx.job(), leaf ? fn_spmv_leaf : fn_spmv_split, pack_args(a), spmv_inputs(a.iter),
                 std::move(outputs));
}

void pagerank_task(TaskContext& ctx) {
  const auto a = unpack_args<PagerankArgs>(ctx.args());
  const std::uint64_t k = a.iter;

  std::vector<double> rank;
  if (k == 0) {
    const auto r = ctx.input(rank_name(0));
    rank.assign(view<double>(r), view<double>(r) + a.n);
  } else {
    rank.reserve(a.n);
    for (std::size_t i = 0; i < ctx.input_count(); ++i) {
      const auto seg = ctx.input(i);
      rank.insert(rank.end(), view<double>(seg), view<double>(seg) + seg.size() / sizeof(double));
    }
    if (rank.size() != a.n) throw Error(Errc::task_fault, "segments do not tile the rank vector");
  }

  std::size_t out = 0;
  if (k > 0) ctx.set_output(out++, to_bytes(rank.data(), rank.size()));
  if (k == a.iters) return;

  const auto degree = ctx.input(csr_out_degree);
  const double dangling = dangling_mass(view<std::uint32_t>(degree), rank.data(), a.n);
  ctx.set_output(out, to_bytes(&dangling, 1));

  for (const RowRange root : root_ranges(a.n, static_cast<std::uint32_t>(a.fanout)))
    spawn_spmv(ctx, SpmvArgs{k, root.begin, root.end, a.target, a.n, a.damping});

  const JobId next = ctx.spawn_job(ctx.job());
  PagerankArgs na = a;
  na.iter = k + 1;
  std::vector<std::string> outputs{rank_name(k + 1)};
  if (k + 1 < a.iters) outputs.push_back(dangling_name(k + 1));
  ctx.spawn_task(next, fn_pagerank, pack_args(na),
                 segment_names(k + 1, a.n, a.target, static_cast<std::uint32_t>(a.fanout)), std::move(outputs));
}

void spmv_split_task(TaskContext& ctx) {
  const auto a = unpack_args<SpmvArgs>(ctx.args());
  const std::uint64_t mid = a.begin + (a.end - a.begin) / 2;
  SpmvArgs lo = a, hi = a;
  lo.end = mid;
  hi.begin = mid;
  spawn_spmv(ctx, lo);
  spawn_spmv(ctx, hi);
}

void spmv_leaf_task(TaskContext& ctx) {
  const auto a = unpack_args<SpmvArgs>(ctx.args());
  const double* rank = view<double>(ctx.input(rank_name(a.iter)));
  double dangling;
  std::memcpy(&dangling, ctx.input(dangling_name(a.iter)).data(), sizeof dangling);
  std::vector<double> out(a.end - a.begin);
  rank_rows(view<std::uint64_t>(ctx.input(csr_row_ptr)), view<std::uint32_t>(ctx.input(csr_col_idx)),
            view<std::uint32_t>(ctx.input(csr_out_degree)), a.n, rank, dangling, a.damping, a.begin, a.end,
            out.data());
  ctx.set_output(0, to_bytes(out.data(), out.size()));
}

}  // namespace

void setup_modc_pagerank(Runtime& rt, const CsrMatrix& m, const ModcPagerankOptions& opts) {
  if (m.n == 0) throw Error(Errc::config_error, "empty graph");
  if (opts.target_rows == 0) throw Error(Errc::config_error, "target_rows must be positive");
  rt.register_function(fn_pagerank, pagerank_task);
  rt.register_function(fn_spmv_split, spmv_split_task);
  rt.register_function(fn_spmv_leaf, spmv_leaf_task);

  NameStore& names = rt.names();
  names.publish(csr_row_ptr, to_bytes(m.row_ptr.data(), m.row_ptr.size()));
  names.publish(csr_col_idx, to_bytes(m.col_idx.data(), m.col_idx.size()));
  names.publish(csr_out_degree, to_bytes(m.out_degree.data(), m.out_degree.size()));
  const std::vector<double> uniform(m.n, 1.0 / static_cast<double>(m.n));
  names.publish(rank_name(0), to_bytes(uniform.data(), uniform.size()));

  const PagerankArgs args{0, opts.iters, m.n, opts.target_rows, opts.fanout, opts.damping};
  std::vector<std::string> outputs;
  if (opts.iters > 0) outputs.push_back(dangling_name(0));
  const JobId first = rt.spawn_job(std::nullopt);
  rt.submit(first, fn_pagerank, pack_args(args), {rank_name(0)}, std::move(outputs));
}

ModcPagerankResult collect_modc_pagerank(const Runtime& rt, std::uint64_t n, std::uint64_t iters) {
  ModcPagerankResult result;
  for (std::uint64_t k = 0; k <= iters; ++k) {
    const auto data = rt.names().get(rank_name(k));
    if (!data || data->size() != n * sizeof(double)) {
      throw Error(Errc::task_fault, rank_name(k) + " missing after run");
    }
    result.iterations.emplace_back(view<double>(*data), view<double>(*data) + n);
  }
  for (JobId j = 0; j < iters; ++j) result.iteration_end_us.push_back(rt.job_completed_us(j));
  result.ranks = result.iterations.back();
  return result;
}

ModcPagerankResult run_modc_pagerank(Runtime& rt, const CsrMatrix& m, const ModcPagerankOptions& opts) {
  setup_modc_pagerank(rt, m, opts);
  rt.run();
  return collect_modc_pagerank(rt, m.n, opts.iters);
}

}  // namespace modc
