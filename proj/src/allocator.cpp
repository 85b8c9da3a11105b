#include "snf/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "snf/error.hpp"
#include "snf/random.hpp"

namespace snf {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::snf: return "snf";
    case Strategy::uniform: return "uniform";
    case Strategy::random: return "random";
    case Strategy::external: return "external";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& text) {
  if (text == "snf") return Strategy::snf;
  if (text == "uniform") return Strategy::uniform;
  if (text == "random") return Strategy::random;
  if (text == "external") return Strategy::external;
  throw DomainError("unknown strategy '" + text + "'");
}

std::int64_t Allocation::at(const std::string& layer) const {
  auto it = per_layer.find(layer);
  if (it == per_layer.end()) throw ValidationError("allocation has no entry for '" + layer + "'");
  return it->second;
}

namespace {

// Layers whose filter counts move together: a coupling group or a single
// ungrouped layer. Only free (fully prunable) units are listed.
struct Unit {
  std::vector<std::size_t> members;
  std::int64_t filters = 0;
};

std::vector<Unit> free_units(const Network& net) {
  std::vector<Unit> units;
  std::map<std::string, std::size_t> by_group;
  for (auto i : net.prunable_layers()) {
    if (!net.is_free(i)) continue;
    const auto& l = net.layer(i);
    if (l.coupling_group) {
      auto [it, fresh] = by_group.emplace(*l.coupling_group, units.size());
      if (fresh) units.push_back({{}, l.out_channels});
      units[it->second].members.push_back(i);
    } else {
      units.push_back({{i}, l.out_channels});
    }
  }
  return units;
}

Allocation with_counts(const Network& net, const std::vector<Unit>& units, Strategy strategy,
                       const std::function<std::int64_t(const Unit&, std::size_t)>& count) {
  Allocation alloc = full_allocation(net);
  alloc.strategy = strategy;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const auto d = count(units[u], u);
    for (auto i : units[u].members) alloc.per_layer[net.layer(i).name] = d;
  }
  return alloc;
}

void check_theta(double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw DomainError("FLOPs reduction target must lie in (0, 1)");
}

// Bisection over x in [0, 1] for a reduction that is non-increasing in x.
// Returns the largest grid value whose reduction still meets theta.
SearchResult bisect(const Network& net, double theta, const SearchOptions& options,
                    const std::function<Allocation(double)>& allocate) {
  check_theta(theta);
  const auto base = flops(net);
  auto reduction = [&](const Allocation& a) { return achieved_reduction(base, flops(net, a)); };

  SearchResult result;
  result.target = theta;

  Allocation lo_alloc = allocate(0.0);
  double lo_red = reduction(lo_alloc);
  if (lo_red < theta) {
    result.allocation = std::move(lo_alloc);
    result.beta = 0.0;
    result.achieved = lo_red;
    result.nearest_achievable = true;
    return result;
  }

  Allocation hi_alloc = allocate(1.0);
  const double hi_red = reduction(hi_alloc);
  if (hi_red >= theta) {
    result.allocation = std::move(hi_alloc);
    result.beta = 1.0;
    result.achieved = hi_red;
    return result;
  }

  double lo = 0.0, hi = 1.0;
  int iter = 0;
  while (hi - lo >= options.interval_tol && iter < options.max_iter) {
    const double mid = lo + (hi - lo) / 2;
    Allocation a = allocate(mid);
    const double r = reduction(a);
    if (r >= theta) {
      lo = mid;
      lo_alloc = std::move(a);
      lo_red = r;
    } else {
      hi = mid;
    }
    ++iter;
  }
  result.allocation = std::move(lo_alloc);
  result.beta = lo;
  result.achieved = lo_red;
  result.iterations = iter;
  return result;
}

std::int64_t scaled_count(double ratio, std::int64_t filters) {
  return std::clamp<std::int64_t>(std::llround(ratio * static_cast<double>(filters)), 1, filters);
}

}  // namespace

Allocation full_allocation(const Network& net) {
  Allocation alloc;
  for (auto i : net.prunable_layers()) alloc.per_layer[net.layer(i).name] = net.layer(i).out_channels;
  return alloc;
}

void check_allocation(const Network& net, const Allocation& alloc) {
  for (const auto& [name, d] : alloc.per_layer) {
    const auto i = net.find(name);
    if (!i || !net.layer(*i).prunable || !net.layer(*i).has_filters())
      throw ValidationError("allocation entry '" + name + "' is not a prunable layer");
    if (d < 1 || d > net.layer(*i).out_channels)
      throw ValidationError("allocation entry '" + name + "' outside [1, N]");
    if (!net.is_free(*i) && d != net.layer(*i).out_channels)
      throw ValidationError("allocation prunes '" + name + "' whose coupling group is frozen");
  }
  for (const auto& [label, members] : net.coupling_groups()) {
    std::optional<std::int64_t> shared;
    for (auto m : members) {
      const auto it = alloc.per_layer.find(net.layer(m).name);
      const auto d = it == alloc.per_layer.end() ? net.layer(m).out_channels : it->second;
      if (shared && *shared != d) throw ValidationError("coupling group '" + label + "' members disagree on d");
      shared = d;
    }
  }
}

SpectrumMap compute_spectra(const Network& net, const WeightArchive& archive) {
  SpectrumMap spectra;
  for (auto i : net.prunable_layers()) {
    const auto& l = net.layer(i);
    spectra.emplace(l.name, weight_spectrum<double>(archive.at(*l.binding(kWeight))));
  }
  return spectra;
}

Allocation allocation_for_beta(const SpectrumMap& spectra, const Network& net, double beta) {
  const auto units = free_units(net);
  for (const auto& u : units)
    for (auto i : u.members)
      if (!spectra.count(net.layer(i).name))
        throw ValidationError("no spectrum for prunable layer '" + net.layer(i).name + "'");
  Allocation alloc = with_counts(net, units, Strategy::snf, [&](const Unit& u, std::size_t) {
    std::int64_t d = u.filters;
    for (auto i : u.members) d = std::min(d, reserved_count(spectra.at(net.layer(i).name), beta));
    return d;
  });
  alloc.beta = beta;
  return alloc;
}

SearchResult search_beta(const SpectrumMap& spectra, const Network& net, double theta, const SearchOptions& options) {
  auto result = bisect(net, theta, options, [&](double beta) { return allocation_for_beta(spectra, net, beta); });
  result.allocation.beta = result.beta;
  return result;
}

SearchResult uniform_allocation(const Network& net, double theta, const SearchOptions& options) {
  const auto units = free_units(net);
  return bisect(net, theta, options, [&](double r) {
    return with_counts(net, units, Strategy::uniform,
                       [&](const Unit& u, std::size_t) { return scaled_count(r, u.filters); });
  });
}

SearchResult random_allocation(const Network& net, double theta, std::uint64_t seed, const SearchOptions& options) {
  const auto units = free_units(net);
  SplitMix64 rng(seed);
  std::vector<double> keep(units.size());
  for (auto& k : keep) k = rng.unit();
  const double top = keep.empty() ? 1.0 : *std::max_element(keep.begin(), keep.end());
  for (auto& k : keep) k /= top;
  return bisect(net, theta, options, [&](double scale) {
    return with_counts(net, units, Strategy::random,
                       [&](const Unit& u, std::size_t idx) { return scaled_count(scale * keep[idx], u.filters); });
  });
}

std::vector<std::pair<double, std::int64_t>> curve_beta_vs_d(const LayerSpectrum<double>& spectrum) {
  if (!spectrum.has_energy()) throw DomainError("curve_beta_vs_d: spectrum has no energy");
  std::vector<std::pair<double, std::int64_t>> steps;
  for (std::int64_t d = 1; d <= spectrum.size(); ++d) {
    const double r = spectrum.ratio_at(d);
    if (!steps.empty() && r <= steps.back().first) continue;
    steps.emplace_back(r, d);
  }
  return steps;
}

double total_reconstruction_error(const SpectrumMap& spectra, const Allocation& alloc) {
  double total = 0.0;
  for (const auto& [name, d] : alloc.per_layer) {
    auto it = spectra.find(name);
    if (it != spectra.end()) total += reconstruction_error(it->second, d);
  }
  return total;
}

std::vector<ErrorCurvePoint> curve_error_vs_ratio(const SpectrumMap& spectra, const Network& net,
                                                  const std::vector<double>& theta_grid,
                                                  const SearchOptions& options) {
  if (!std::is_sorted(theta_grid.begin(), theta_grid.end()))
    throw DomainError("curve_error_vs_ratio: theta grid must be sorted");
  std::vector<ErrorCurvePoint> curve;
  curve.reserve(theta_grid.size());
  for (double theta : theta_grid) {
    const auto r = search_beta(spectra, net, theta, options);
    curve.push_back({theta, r.beta, r.achieved, total_reconstruction_error(spectra, r.allocation),
                     r.nearest_achievable});
  }
  return curve;
}

}  // namespace snf
