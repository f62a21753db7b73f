#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace csched {

using Edge = std::pair<int, int>;

/// Undirected conflict graph. Vertices are links, edges are mutual conflicts.
/// Immutable once built; edges are stored normalized (i < j) and sorted.
class ConflictGraph {
 public:
  ConflictGraph() = default;

  /// Throws ArgumentError on self-loops, duplicates or out-of-range endpoints.
  ConflictGraph(int num_links, std::vector<Edge> edges);

  int num_links() const noexcept { return num_links_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<int>& neighbors(int n) const;
  int degree(int n) const { return static_cast<int>(neighbors(n).size()); }
  int max_degree() const noexcept;
  bool adjacent(int i, int j) const;

  bool operator==(const ConflictGraph& other) const = default;

 private:
  int num_links_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adjacency_;
};

/// Self first, then neighbors ascending.
std::vector<int> closed_neighborhood(const ConflictGraph& g, int n);

bool is_connected(const ConflictGraph& g);

/// True iff no edge has both endpoints in `vs`.
bool is_independent_set(const ConflictGraph& g, std::span<const int> vs);

/// Directory holding bundled data files. Honors $CSCHED_ASSET_DIR.
std::filesystem::path asset_dir();

/// The 24-link grid conflict graph, read from the bundled edge list.
ConflictGraph load_grid24();
ConflictGraph load_grid24(const std::filesystem::path& file);

/// Connected graph with every degree in [d_min, d_max]. Configuration-model
/// stub matching with edge-swap repair, retried with derived seeds.
ConflictGraph generate_random(int n, int d_min, int d_max, std::uint64_t seed);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct CellularLayout {
  std::vector<Point> ap_positions;
  std::vector<Point> ue_positions;
  std::vector<int> serving_ap;  ///< link i runs from serving_ap[i] to UE i
  std::vector<double> link_lengths;
  double conflict_threshold = 0.0;
};

/// Path loss in dB for a distance in kilometers.
double path_loss_db(double distance_km);

/// Cellular abstraction: one link per UE to its nearest AP. Links i, j
/// conflict iff the smaller of the two cross path losses is below the
/// threshold.
std::pair<ConflictGraph, CellularLayout> generate_cellular(int num_pairs, double area_km,
                                                           double threshold_db,
                                                           std::uint64_t seed);

/// CSV with columns kind,index,x_km,y_km.
std::string write_layout_csv(const CellularLayout& layout);

inline constexpr int kDefaultMisCap = 40;

/// Exact maximum-weight independent set by branch and bound. Zero-weight
/// vertices are never selected. Ties go to the lexicographically smallest
/// vertex set. Returns sorted indices.
std::vector<int> max_weight_independent_set(const ConflictGraph& g, std::span<const double> weights,
                                             int cap = kDefaultMisCap);

std::string write_edge_list(const ConflictGraph& g);
ConflictGraph read_edge_list(const std::string& text);

ConflictGraph read_edge_list_file(const std::filesystem::path& file);
void write_edge_list_file(const ConflictGraph& g, const std::filesystem::path& file);

}  // namespace csched
