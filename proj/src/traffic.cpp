#include "csched/traffic.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "csched/error.hpp"

namespace csched {

namespace {

constexpr double kInversionLimit = 10.0;

int poisson_inversion(double mean, Rng& rng) {
  double u = uniform01(rng);
  double p = std::exp(-mean);
  double cdf = p;
  int k = 0;
  while (u >= cdf) {
    ++k;
    p *= mean / k;
    cdf += p;
    // Guards the tail against rounding where cdf stalls just below u.
    if (p <= 0.0) break;
  }
  return k;
}

}  // namespace

int sample_poisson(double mean, Rng& rng) {
  if (!(mean >= 0.0)) throw ArgumentError("Poisson mean must be nonnegative");
  if (mean == 0.0) return 0;
  if (mean < kInversionLimit) return poisson_inversion(mean, rng);
  const int parts = static_cast<int>(std::ceil(mean / kInversionLimit)) + 1;
  int total = 0;
  for (int k = 0; k < parts; ++k) total += poisson_inversion(mean / parts, rng);
  return total;
}

std::vector<int> sample_arrivals(const TrafficProfile& profile, Rng& rng) {
  std::vector<int> out(profile.lambdas.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = sample_poisson(profile.load_factor * profile.lambdas[n], rng);
  }
  return out;
}

TrafficProfile uniform_profile(int n, double lam) {
  if (n < 1) throw ArgumentError("profile needs at least one link");
  if (!(lam >= 0.0)) throw ArgumentError("arrival rate must be nonnegative");
  TrafficProfile p;
  p.lambdas.assign(n, lam);
  return p;
}

TrafficProfile scale_load(const TrafficProfile& profile, double rho) {
  if (!(rho >= 0.0)) throw ArgumentError("load factor must be nonnegative");
  TrafficProfile p = profile;
  p.load_factor *= rho;
  return p;
}

std::vector<std::vector<int>> covering_max_independent_sets(const ConflictGraph& g, int count) {
  const int n = g.num_links();
  std::vector<char> covered(n, 0);
  std::vector<std::vector<int>> sets;
  // Unit weight plus a bonus small enough that cardinality still dominates.
  const double bonus = 1.0 / (n + 1);
  for (int k = 0; k < count; ++k) {
    std::vector<double> w(n);
    for (int v = 0; v < n; ++v) w[v] = 1.0 + (covered[v] ? 0.0 : bonus);
    auto set = max_weight_independent_set(g, w);
    for (int v : set) covered[v] = 1;
    sets.push_back(std::move(set));
  }
  return sets;
}

TrafficProfile mixture_profile(int num_links, const std::vector<std::vector<int>>& sets,
                               const std::vector<double>& mixture_weights, double rho) {
  if (sets.size() != mixture_weights.size()) {
    throw ArgumentError("need one mixture weight per independent set");
  }
  if (!(rho >= 0.0)) throw ArgumentError("load factor must be nonnegative");
  TrafficProfile p;
  p.lambdas.assign(num_links, 0.0);
  p.load_factor = rho;
  std::vector<char> covered(num_links, 0);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (!(mixture_weights[k] >= 0.0)) throw ArgumentError("mixture weights must be nonnegative");
    for (int v : sets[k]) {
      p.lambdas.at(v) += mixture_weights[k];
      covered[v] = 1;
    }
  }
  for (int v = 0; v < num_links; ++v) {
    if (!covered[v]) p.uncovered.push_back(v);
  }
  return p;
}

TrafficProfile grid24_profile(const ConflictGraph& g, double rho,
                              std::optional<std::vector<double>> mixture_weights) {
  auto sets = covering_max_independent_sets(g, 4);
  std::vector<double> w = mixture_weights.value_or(std::vector<double>(4, 0.25));
  return mixture_profile(g.num_links(), sets, w, rho);
}

std::string write_profile_csv(const TrafficProfile& profile) {
  std::ostringstream os;
  os.precision(17);
  os << "link,lambda\n";
  for (std::size_t n = 0; n < profile.lambdas.size(); ++n) os << n << ',' << profile.lambdas[n] << '\n';
  return os.str();
}

TrafficProfile read_profile_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line != "link,lambda") throw ParseError(1, "expected header link,lambda");
  TrafficProfile p;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected link,lambda");
    std::size_t pos = 0;
    long link = 0;
    double lam = 0.0;
    try {
      link = std::stol(line.substr(0, comma), &pos);
      lam = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad number");
    }
    if (link != static_cast<long>(p.lambdas.size())) throw ParseError(lineno, "links must be listed in order");
    if (!(lam >= 0.0)) throw ParseError(lineno, "negative rate");
    p.lambdas.push_back(lam);
  }
  if (p.lambdas.empty()) throw ParseError(lineno, "no rates");
  return p;
}

double LoadFractions::at(LoadLevel level) const {
  switch (level) {
    case LoadLevel::kLight:
      return light;
    case LoadLevel::kMedium:
      return medium;
    case LoadLevel::kHeavy:
      return heavy;
  }
  return light;
}

LoadLevel parse_load_level(const std::string& name) {
  if (name == "light") return LoadLevel::kLight;
  if (name == "medium") return LoadLevel::kMedium;
  if (name == "heavy") return LoadLevel::kHeavy;
  throw ArgumentError("unknown load level '" + name + "'");
}

std::string to_string(LoadLevel level) {
  switch (level) {
    case LoadLevel::kLight:
      return "light";
    case LoadLevel::kMedium:
      return "medium";
    case LoadLevel::kHeavy:
      return "heavy";
  }
  return "light";
}

}  // namespace csched
