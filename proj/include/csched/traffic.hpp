#pragma once

#include <optional>
#include <string>
#include <vector>

#include "csched/graph.hpp"
#include "csched/rng.hpp"

namespace csched {

/// Per-link Poisson arrival rates. The effective rate of link n is
/// load_factor * lambdas[n] packets per slot.
struct TrafficProfile {
  std::vector<double> lambdas;
  double load_factor = 1.0;
  /// Links not covered by any set of a grid-24 mixture (empty otherwise).
  std::vector<int> uncovered;

  int num_links() const noexcept { return static_cast<int>(lambdas.size()); }
  double effective_rate(int n) const { return load_factor * lambdas.at(n); }

  bool operator==(const TrafficProfile&) const = default;
};

/// Exact Poisson draw. Inversion by sequential search below mean 10; larger
/// means are split into a sum of independent smaller draws.
int sample_poisson(double mean, Rng& rng);

/// One independent Poisson(rho * lambda_n) draw per link.
std::vector<int> sample_arrivals(const TrafficProfile& profile, Rng& rng);

TrafficProfile uniform_profile(int n, double lam);
TrafficProfile scale_load(const TrafficProfile& profile, double rho);

/// Four maximum independent sets of the graph, chosen one at a time so that
/// each new set covers as many not-yet-covered vertices as possible.
std::vector<std::vector<int>> covering_max_independent_sets(const ConflictGraph& g, int count = 4);

/// lambda = sum_k w_k * 1[set_k], load_factor = rho. Weights default to
/// uniform 1/4.
TrafficProfile grid24_profile(const ConflictGraph& g, double rho,
                              std::optional<std::vector<double>> mixture_weights = std::nullopt);

/// Same, with the independent sets supplied by the caller.
TrafficProfile mixture_profile(int num_links, const std::vector<std::vector<int>>& sets,
                               const std::vector<double>& mixture_weights, double rho);

/// CSV "link,lambda"; the load factor is not part of the file.
std::string write_profile_csv(const TrafficProfile& profile);
TrafficProfile read_profile_csv(const std::string& text);

enum class LoadLevel { kLight, kMedium, kHeavy };

/// Named level as a fraction of a per-graph capacity proxy. The defaults put
/// LLQ on the 20-link random graph (seed 1) at mean delays near 1.9, 5.4
/// and 60 slots.
struct LoadFractions {
  double light = 0.225;
  double medium = 0.385;
  double heavy = 0.45;

  double at(LoadLevel level) const;
};

LoadLevel parse_load_level(const std::string& name);
std::string to_string(LoadLevel level);

}  // namespace csched
