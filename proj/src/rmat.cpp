#include <cmath>
#include <random>

#include "modc/error.hpp"
#include "modc/graph.hpp"

namespace modc {

std::vector<Edge> rmat_generate(std::uint32_t scale, const RmatParams& p, std::uint64_t seed) {
  if (scale < 1 || scale > 31) throw Error(Errc::config_error, "scale must be in [1, 31]");
  if (p.a < 0 || p.b < 0 || p.c < 0 || p.d < 0 || std::abs(p.a + p.b + p.c + p.d - 1.0) > 1e-9) {
    throw Error(Errc::bad_probabilities, "quadrant probabilities must be non-negative and sum to 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::uint64_t count = std::uint64_t{p.edge_factor} << scale;
  std::vector<Edge> edges;
  edges.reserve(count);
  for (std::uint64_t e = 0; e < count; ++e) {
    std::uint32_t src = 0, dst = 0;
    for (std::uint32_t level = 0; level < scale; ++level) {
      const double r = unit(rng);
      const std::uint32_t bit = 1u << (scale - 1 - level);
      if (r < p.a) {
      } else if (r < p.a + p.b) {
        dst |= bit;
      } else if (r < p.a + p.b + p.c) {
        src |= bit;
      } else {
        src |= bit;
        dst |= bit;
      }
    }
    edges.push_back({src, dst});
  }
  return edges;
}

}  // namespace modc
