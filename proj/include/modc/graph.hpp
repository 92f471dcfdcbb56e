#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <vector>

namespace modc {

struct Edge {
  std::uint32_t src;
  std::uint32_t dst;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Quadrant probabilities for recursive-matrix generation.
struct RmatParams {
  double a = 0.57;
  double b = 0.19;
  double c = 0.19;
  double d = 0.05;
  std::uint32_t edge_factor = 16;
};

/// edge_factor * 2^scale directed edges; self-loops and duplicates kept.
/// Deterministic for a fixed seed.
std::vector<Edge> rmat_generate(std::uint32_t scale, const RmatParams& params, std::uint64_t seed);

/// In-edge adjacency: row v lists every u with an edge u->v, sorted by u.
struct CsrMatrix {
  std::uint64_t n = 0;
  std::vector<std::uint64_t> row_ptr;     // n + 1
  std::vector<std::uint32_t> col_idx;     // edge sources
  std::vector<std::uint32_t> out_degree;  // per vertex

  std::uint64_t edges() const noexcept { return col_idx.size(); }
};

CsrMatrix build_csr(std::span<const Edge> edges, std::uint64_t n);

/// "src dst" per line; lines starting with '#' and blank lines are skipped.
std::vector<Edge> read_edge_list(std::istream& in);

}  // namespace modc
