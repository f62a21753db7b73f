#include "csched/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "csched/error.hpp"
#include "csched/rng.hpp"

#ifndef CSCHED_DEFAULT_ASSET_DIR
#define CSCHED_DEFAULT_ASSET_DIR "assets"
#endif

namespace csched {

ConflictGraph::ConflictGraph(int num_links, std::vector<Edge> edges)
    : num_links_(num_links), adjacency_(static_cast<std::size_t>(std::max(num_links, 0))) {
  if (num_links <= 0) throw ArgumentError("conflict graph needs at least one link");
  for (auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= num_links || j >= num_links) {
      throw ArgumentError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                          ") out of range");
    }
    if (i == j) throw ArgumentError("self-loop on vertex " + std::to_string(i));
    if (i > j) std::swap(i, j);
  }
  std::sort(edges.begin(), edges.end());
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ArgumentError("duplicate edge");
  }
  edges_ = std::move(edges);
  for (const auto& [i, j] : edges_) {
    adjacency_[i].push_back(j);
    adjacency_[j].push_back(i);
  }
  for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
}

const std::vector<int>& ConflictGraph::neighbors(int n) const {
  if (n < 0 || n >= num_links_) throw ArgumentError("vertex " + std::to_string(n) + " out of range");
  return adjacency_[n];
}

int ConflictGraph::max_degree() const noexcept {
  std::size_t d = 0;
  for (const auto& adj : adjacency_) d = std::max(d, adj.size());
  return static_cast<int>(d);
}

bool ConflictGraph::adjacent(int i, int j) const {
  const auto& adj = neighbors(i);
  return std::binary_search(adj.begin(), adj.end(), j);
}

std::vector<int> closed_neighborhood(const ConflictGraph& g, int n) {
  const auto& adj = g.neighbors(n);
  std::vector<int> out;
  out.reserve(adj.size() + 1);
  out.push_back(n);
  out.insert(out.end(), adj.begin(), adj.end());
  return out;
}

bool is_connected(const ConflictGraph& g) {
  const int n = g.num_links();
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int u : g.neighbors(v)) {
      if (!seen[u]) {
        seen[u] = 1;
        ++count;
        stack.push_back(u);
      }
    }
  }
  return count == n;
}

bool is_independent_set(const ConflictGraph& g, std::span<const int> vs) {
  for (int v : vs) {
    if (v < 0 || v >= g.num_links()) throw ArgumentError("vertex " + std::to_string(v) + " out of range");
  }
  for (std::size_t a = 0; a < vs.size(); ++a) {
    for (std::size_t b = a + 1; b < vs.size(); ++b) {
      if (g.adjacent(vs[a], vs[b])) return false;
    }
  }
  return true;
}

std::filesystem::path asset_dir() {
  if (const char* env = std::getenv("CSCHED_ASSET_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return CSCHED_DEFAULT_ASSET_DIR;
}

ConflictGraph load_grid24() { return load_grid24(asset_dir() / "grid24.el"); }

ConflictGraph load_grid24(const std::filesystem::path& file) {
  ConflictGraph g;
  try {
    g = read_edge_list_file(file);
  } catch (const ParseError& e) {
    throw AssetError("corrupt grid-24 asset " + file.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw AssetError("corrupt grid-24 asset " + file.string() + ": " + e.what());
  }
  if (g.num_links() != 24) throw AssetError("grid-24 asset does not have 24 links");
  return g;
}

namespace {

// One configuration-model attempt. Returns false if the degree constraints
// could not be met.
bool try_random_graph(int n, int d_min, int d_max, Rng& rng, std::vector<Edge>& out) {
  std::vector<int> degree(n);
  for (auto& d : degree) d = d_min + static_cast<int>(uniform_index(rng, d_max - d_min + 1));
  int total = std::accumulate(degree.begin(), degree.end(), 0);
  if (total % 2 != 0) {
    // Fix parity on a vertex that still has room.
    std::vector<int> room;
    for (int v = 0; v < n; ++v) {
      if (degree[v] < d_max || degree[v] > d_min) room.push_back(v);
    }
    if (room.empty()) return false;
    int v = room[uniform_index(rng, room.size())];
    degree[v] += degree[v] < d_max ? 1 : -1;
  }

  std::vector<int> stubs;
  for (int v = 0; v < n; ++v) stubs.insert(stubs.end(), degree[v], v);
  std::shuffle(stubs.begin(), stubs.end(), rng);

  std::set<Edge> good;
  std::vector<Edge> bad;
  for (std::size_t k = 0; k + 1 < stubs.size(); k += 2) {
    Edge e = std::minmax(stubs[k], stubs[k + 1]);
    if (e.first == e.second || good.count(e)) {
      bad.push_back(e);
    } else {
      good.insert(e);
    }
  }

  // Edge-swap repair: (u,v) bad + (x,y) good -> (u,x), (v,y).
  for (int iter = 0; iter < 200 * n && !bad.empty(); ++iter) {
    if (good.empty()) return false;
    Edge b = bad.back();
    auto it = good.begin();
    std::advance(it, static_cast<long>(uniform_index(rng, good.size())));
    Edge g = *it;
    if (bernoulli(rng, 0.5)) std::swap(g.first, g.second);
    Edge e1 = std::minmax(b.first, g.first);
    Edge e2 = std::minmax(b.second, g.second);
    if (e1.first == e1.second || e2.first == e2.second || e1 == e2) continue;
    if (good.count(e1) || good.count(e2)) continue;
    good.erase(it);
    good.insert(e1);
    good.insert(e2);
    bad.pop_back();
  }
  if (!bad.empty()) return false;
  out.assign(good.begin(), good.end());
  return true;
}

}  // namespace

ConflictGraph generate_random(int n, int d_min, int d_max, std::uint64_t seed) {
  if (d_min < 1 || d_min > d_max) throw ArgumentError("need 1 <= d_min <= d_max");
  if (n < d_max + 1) throw ArgumentError("need n >= d_max + 1");
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(attempt));
    std::vector<Edge> edges;
    if (!try_random_graph(n, d_min, d_max, rng, edges)) continue;
    ConflictGraph g(n, std::move(edges));
    if (is_connected(g)) return g;
  }
  throw GenerationError("no connected graph with degrees in [" + std::to_string(d_min) + ", " +
                        std::to_string(d_max) + "] after " + std::to_string(kMaxAttempts) +
                        " attempts");
}

double path_loss_db(double distance_km) {
  constexpr double kMinDistanceKm = 1e-3;
  return 128.1 + 37.6 * std::log10(std::max(distance_km, kMinDistanceKm));
}

std::pair<ConflictGraph, CellularLayout> generate_cellular(int num_pairs, double area_km,
                                                           double threshold_db,
                                                           std::uint64_t seed) {
  if (num_pairs < 1) throw ArgumentError("num_pairs must be positive");
  if (!(area_km > 0.0)) throw ArgumentError("area_km must be positive");
  if (std::isnan(threshold_db)) throw ArgumentError("threshold_db is NaN");

  Rng rng = make_rng(seed);
  CellularLayout layout;
  layout.conflict_threshold = threshold_db;
  auto place = [&] { return Point{area_km * uniform01(rng), area_km * uniform01(rng)}; };
  for (int k = 0; k < num_pairs; ++k) layout.ap_positions.push_back(place());
  for (int k = 0; k < num_pairs; ++k) layout.ue_positions.push_back(place());

  auto dist = [](Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); };
  for (const Point& ue : layout.ue_positions) {
    int best = 0;
    for (int a = 1; a < num_pairs; ++a) {
      if (dist(layout.ap_positions[a], ue) < dist(layout.ap_positions[best], ue)) best = a;
    }
    layout.serving_ap.push_back(best);
    layout.link_lengths.push_back(dist(layout.ap_positions[best], ue));
  }

  std::vector<Edge> edges;
  for (int i = 0; i < num_pairs; ++i) {
    for (int j = i + 1; j < num_pairs; ++j) {
      const double pl_ij = path_loss_db(dist(layout.ap_positions[layout.serving_ap[i]], layout.ue_positions[j]));
      const double pl_ji = path_loss_db(dist(layout.ap_positions[layout.serving_ap[j]], layout.ue_positions[i]));
      if (std::min(pl_ij, pl_ji) < threshold_db) edges.emplace_back(i, j);
    }
  }
  return {ConflictGraph(num_pairs, std::move(edges)), std::move(layout)};
}

std::string write_layout_csv(const CellularLayout& layout) {
  std::ostringstream os;
  os.precision(6);
  os << "kind,index,x_km,y_km\n";
  for (std::size_t k = 0; k < layout.ap_positions.size(); ++k) {
    os << "ap," << k << ',' << layout.ap_positions[k].x << ',' << layout.ap_positions[k].y << '\n';
  }
  for (std::size_t k = 0; k < layout.ue_positions.size(); ++k) {
    os << "ue," << k << ',' << layout.ue_positions[k].x << ',' << layout.ue_positions[k].y << '\n';
  }
  return os.str();
}

std::string write_edge_list(const ConflictGraph& g) {
  std::ostringstream os;
  os << g.num_links() << ' ' << g.edges().size() << '\n';
  for (const auto& [i, j] : g.edges()) os << i << ' ' << j << '\n';
  return os.str();
}

namespace {

bool parse_int(const std::string& tok, long long& out) {
  if (tok.empty()) return false;
  std::size_t k = 0;
  for (; k < tok.size(); ++k) {
    if (tok[k] < '0' || tok[k] > '9') return false;
  }
  if (tok.size() > 9) return false;
  out = std::stoll(tok);
  return true;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

ConflictGraph read_edge_list(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ParseError(1, "empty edge list");
  ++lineno;
  auto header = split_ws(line);
  long long n = 0, m = 0;
  if (header.size() != 2 || !parse_int(header[0], n) || !parse_int(header[1], m)) {
    throw ParseError(lineno, "expected header \"N M\"");
  }
  if (n < 1) throw ParseError(lineno, "vertex count must be positive");

  std::vector<Edge> edges;
  std::set<Edge> seen;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) {
      throw ParseError(lineno, "blank line");
    }
    long long i = 0, j = 0;
    if (tok.size() != 2 || !parse_int(tok[0], i) || !parse_int(tok[1], j)) {
      throw ParseError(lineno, "expected \"i j\"");
    }
    if (i >= n || j >= n) throw ParseError(lineno, "vertex index out of range");
    if (i == j) throw ParseError(lineno, "self-loop");
    Edge e = std::minmax(static_cast<int>(i), static_cast<int>(j));
    if (!seen.insert(e).second) throw ParseError(lineno, "duplicate edge");
    edges.push_back(e);
  }
  if (static_cast<long long>(edges.size()) != m) {
    throw ParseError(lineno, "header declares " + std::to_string(m) + " edges, found " +
                                 std::to_string(edges.size()));
  }
  return ConflictGraph(static_cast<int>(n), std::move(edges));
}

ConflictGraph read_edge_list_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw AssetError("cannot open " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return read_edge_list(buf.str());
}

void write_edge_list_file(const ConflictGraph& g, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ArgumentError("cannot write " + file.string());
  out << write_edge_list(g);
}

}  // namespace csched
