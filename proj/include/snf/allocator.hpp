#ifndef SNF_ALLOCATOR_HPP
#define SNF_ALLOCATOR_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snf/network.hpp"
#include "snf/spectrum.hpp"

namespace snf {

enum class Strategy { snf, uniform, random, external };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& text);

/// Reserved filter count per prunable layer.
struct Allocation {
  std::map<std::string, std::int64_t> per_layer;
  std::optional<double> beta;
  Strategy strategy = Strategy::external;

  std::int64_t at(const std::string& layer) const;
};

/// Keeps every filter of every prunable layer.
Allocation full_allocation(const Network& net);

/// Throws ValidationError unless every entry names a prunable layer, lies in
/// [1, N], and coupling-group members agree.
void check_allocation(const Network& net, const Allocation& alloc);

struct SearchResult {
  Allocation allocation;
  double beta = 0.0;  // bisection variable: threshold for snf, keep ratio or scale for baselines
  double achieved = 0.0;
  double target = 0.0;
  int iterations = 0;
  bool nearest_achievable = false;
};

struct SearchOptions {
  double interval_tol = 1e-6;
  int max_iter = 64;
};

using SpectrumMap = std::map<std::string, LayerSpectrum<double>>;

/// Spectra of every prunable layer's centered filters.
SpectrumMap compute_spectra(const Network& net, const WeightArchive& archive);

Allocation allocation_for_beta(const SpectrumMap& spectra, const Network& net, double beta);

/// Largest bisection-grid threshold whose allocation reaches the FLOPs target.
SearchResult search_beta(const SpectrumMap& spectra, const Network& net, double theta,
                         const SearchOptions& options = {});

/// One keep ratio for every prunable layer, d = max(1, round(r * N)).
SearchResult uniform_allocation(const Network& net, double theta, const SearchOptions& options = {});

/// Seeded per-unit keep ratios in (0,1], rescaled jointly until the target is met.
SearchResult random_allocation(const Network& net, double theta, std::uint64_t seed,
                               const SearchOptions& options = {});

/// Exact step function of a layer: (breakpoint, d) where d is reserved for
/// thresholds in (previous breakpoint, breakpoint].
std::vector<std::pair<double, std::int64_t>> curve_beta_vs_d(const LayerSpectrum<double>& spectrum);

struct ErrorCurvePoint {
  double theta = 0.0;
  double beta = 0.0;
  double achieved = 0.0;
  double total_error = 0.0;
  bool nearest_achievable = false;
};

/// Sum of per-layer tail energies for an allocation.
double total_reconstruction_error(const SpectrumMap& spectra, const Allocation& alloc);

std::vector<ErrorCurvePoint> curve_error_vs_ratio(const SpectrumMap& spectra, const Network& net,
                                                  const std::vector<double>& theta_grid,
                                                  const SearchOptions& options = {});

}  // namespace snf

#endif  // SNF_ALLOCATOR_HPP
