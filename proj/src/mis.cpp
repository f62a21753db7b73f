#include <bit>
#include <cstdint>
#include <limits>

#include "csched/error.hpp"
#include "csched/graph.hpp"

namespace csched {

namespace {

using Mask = std::uint64_t;

inline int lowest(Mask m) { return std::countr_zero(m); }

class MisSolver {
 public:
  MisSolver(const ConflictGraph& g, std::span<const double> w) : weights_(w) {
    const int n = g.num_links();
    adj_.assign(n, 0);
    for (const auto& [i, j] : g.edges()) {
      adj_[i] |= Mask{1} << j;
      adj_[j] |= Mask{1} << i;
    }
  }

  Mask solve(Mask candidates) {
    search(candidates, 0, 0.0);
    return best_set_;
  }

 private:
  // Greedy clique cover of `remaining`: an independent set takes at most one
  // vertex per clique, so the sum of per-clique maxima bounds its weight.
  double clique_cover_bound(Mask remaining) const {
    double bound = 0.0;
    while (remaining) {
      int v = lowest(remaining);
      Mask clique = Mask{1} << v;
      Mask common = adj_[v] & remaining;
      double top = weights_[v];
      while (common) {
        int u = lowest(common);
        clique |= Mask{1} << u;
        common &= adj_[u];
        common &= ~(Mask{1} << u);
        top = std::max(top, weights_[u]);
      }
      bound += top;
      remaining &= ~clique;
    }
    return bound;
  }

  // Include-first DFS over vertices in index order: among equal-weight sets
  // the lexicographically smallest is reached first, so only strict
  // improvements replace the incumbent.
  void search(Mask candidates, Mask chosen, double weight) {
    if (!candidates) {
      if (weight > best_weight_) {
        best_weight_ = weight;
        best_set_ = chosen;
      }
      return;
    }
    if (weight + clique_cover_bound(candidates) <= best_weight_) return;
    int v = lowest(candidates);
    Mask bit = Mask{1} << v;
    search(candidates & ~bit & ~adj_[v], chosen | bit, weight + weights_[v]);
    search(candidates & ~bit, chosen, weight);
  }

  std::span<const double> weights_;
  std::vector<Mask> adj_;
  double best_weight_ = -std::numeric_limits<double>::infinity();
  Mask best_set_ = 0;
};

}  // namespace

std::vector<int> max_weight_independent_set(const ConflictGraph& g, std::span<const double> weights,
                                             int cap) {
  const int n = g.num_links();
  if (static_cast<int>(weights.size()) != n) throw ArgumentError("weights length must equal N");
  if (cap > 64) cap = 64;
  if (n > cap) {
    throw CapabilityError("graph has " + std::to_string(n) + " vertices, solver cap is " +
                          std::to_string(cap));
  }
  Mask candidates = 0;
  for (int v = 0; v < n; ++v) {
    if (!(weights[v] >= 0.0)) throw ArgumentError("weights must be nonnegative");
    if (weights[v] > 0.0) candidates |= Mask{1} << v;
  }
  MisSolver solver(g, weights);
  Mask best = solver.solve(candidates);
  std::vector<int> out;
  for (Mask m = best; m; m &= m - 1) out.push_back(lowest(m));
  return out;
}

}  // namespace csched
