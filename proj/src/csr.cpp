#include <algorithm>
#include <sstream>
#include <string>

#include "modc/error.hpp"
#include "modc/graph.hpp"

namespace modc {

CsrMatrix build_csr(std::span<const Edge> edges, std::uint64_t n) {
  CsrMatrix m;
  m.n = n;
  m.row_ptr.assign(n + 1, 0);
  m.out_degree.assign(n, 0);
  for (const Edge& e : edges) {
    if (e.src >= n || e.dst >= n) {
      throw Error(Errc::endpoint_out_of_range,
                  "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " outside [0, " +
                      std::to_string(n) + ")");
    }
    ++m.row_ptr[e.dst + 1];
    ++m.out_degree[e.src];
  }
  for (std::uint64_t v = 0; v < n; ++v) m.row_ptr[v + 1] += m.row_ptr[v];
  m.col_idx.resize(edges.size());
  std::vector<std::uint64_t> fill(m.row_ptr.begin(), m.row_ptr.end() - 1);
  for (const Edge& e : edges) m.col_idx[fill[e.dst]++] = e.src;
  // Fixed order within a row fixes every dot product's summation order.
  for (std::uint64_t v = 0; v < n; ++v) {
    std::sort(m.col_idx.begin() + static_cast<std::ptrdiff_t>(m.row_ptr[v]),
              m.col_idx.begin() + static_cast<std::ptrdiff_t>(m.row_ptr[v + 1]));
  }
  return m;
}

std::vector<Edge> read_edge_list(std::istream& in) {
  std::vector<Edge> edges;
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::uint64_t src, dst;
    if (!(fields >> src >> dst) || src > UINT32_MAX || dst > UINT32_MAX) {
      throw Error(Errc::config_error, "edge list line " + std::to_string(lineno) + ": expected 'src dst'");
    }
    edges.push_back({static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)});
  }
  return edges;
}

}  // namespace modc
