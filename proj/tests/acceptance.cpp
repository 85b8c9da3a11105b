// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "snf/allocator.hpp"
#include "snf/cli.hpp"
#include "snf/forward.hpp"
#include "snf/pruner.hpp"
#include "snf/scaffold.hpp"
#include "snf/spectrum.hpp"
#include "testing.hpp"

using namespace snf;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double reduction_of(const Network& net, const Allocation& a) { return achieved_reduction(flops(net), flops(net, a)); }

Verdict eigensolver() {
  Verdict v;
  std::mt19937_64 rng(2024);
  double worst_residual = 0, worst_ortho = 0, worst_root = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 64);
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n + 8));
    const auto g = snf::testing::random_psd(rng, n, k);
    const auto e = symmetric_eigen(g);
    const double fro = g.norm();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r = (g * e.vectors.col(j) - e.eigenvalues(j) * e.vectors.col(j)).cwiseAbs().maxCoeff();
      worst_residual = std::max(worst_residual, r / fro);
    }
    worst_ortho = std::max(
        worst_ortho, (e.vectors.transpose() * e.vectors - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff());
    if (n <= 3) {
      const auto roots = snf::testing::char_poly_roots(g);
      for (Eigen::Index j = 0; j < n; ++j)
        worst_root = std::max(worst_root, std::abs(e.eigenvalues(j) - roots[static_cast<std::size_t>(j)]));
    }
  }
  v.require(worst_residual <= 1e-8, "residual " + fmt("%.3g", worst_residual) + " > 1e-8 |G|_F");
  v.require(worst_ortho <= 1e-8, "orthonormality defect " + fmt("%.3g", worst_ortho));
  v.require(worst_root <= 1e-9, "char-poly root mismatch " + fmt("%.3g", worst_root));
  if (v.pass)
    v.detail = "200 PSD matrices N<=64; residual/|G|_F " + fmt("%.2g", worst_residual) + ", orthonormality " +
               fmt("%.2g", worst_ortho) + ", N<=3 root error " + fmt("%.2g", worst_root);
  return v;
}

Verdict reconstruction_identity() {
  Verdict v;
  std::mt19937_64 rng(77);
  double worst = 0, worst_relative = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 32), d_cols = 1 + static_cast<Eigen::Index>(rng() % 64);
    FilterMatrix<double> f;
    f.values = snf::testing::random_matrix(rng, n, d_cols);
    const auto c = center(f);
    const auto sp = gram_spectrum(c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.values * c.values.transpose());
    const Eigen::VectorXd values = es.eigenvalues().reverse();
    const Eigen::MatrixXd vectors = es.eigenvectors().rowwise().reverse();
    for (Eigen::Index d = 1; d <= n; ++d) {
      const double tail = reconstruction_error(sp, d);
      const double direct = snf::testing::direct_projection_error(c.values, vectors, values, d);
      // Past the centered rank both values are roundoff of zero; allow N ulps of the energy.
      const double roundoff = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * sp.total;
      const double allowed = 1e-6 * std::max(tail, direct) + roundoff;
      worst = std::max(worst, std::abs(tail - direct) / allowed);
      if (std::max(tail, direct) > roundoff)
        worst_relative = std::max(worst_relative, std::abs(tail - direct) / std::max(tail, direct));
    }
  }
  v.require(worst <= 1.0, "gap " + fmt("%.3g", worst) + "x the allowed 1e-6 relative");
  if (v.pass)
    v.detail = "100 layers N<=32 D<=64, all d; worst relative gap " + fmt("%.2g", worst_relative) +
               " (rank-deficient tails at roundoff)";
  return v;
}

Verdict threshold_rule() {
  Verdict v;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ev(1 + rng() % 64);
    for (auto& x : ev) x = std::pow(unit(rng), 4.0) * 100.0;
    if (trial % 5 == 0) std::fill(ev.begin() + static_cast<std::ptrdiff_t>(ev.size() / 2), ev.end(), 0.0);
    std::sort(ev.begin(), ev.end(), std::greater<>());
    const auto s = LayerSpectrum<double>::from_eigenvalues(ev);
    std::int64_t previous = 0;
    for (int k = 0; k <= 1000; ++k) {
      const double beta = k / 1000.0;
      const auto d = reserved_count(s, beta);
      v.require(d >= previous, "reserved_count decreased at beta " + fmt("%g", beta));
      v.require(d >= 1 && d <= s.size(), "count out of range");
      if (s.has_energy()) v.require(s.ratio_at(d) >= beta, "layer threshold below beta " + fmt("%g", beta));
      previous = d;
    }
  }
  // The same property through whole plans.
  const auto m = scaffold("toy-plain", 4);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  for (double theta : {0.1, 0.3, 0.5, 0.7}) {
    const auto plan = build_plan(net, m.archive, search_beta(spectra, net, theta).allocation, CriterionKind::l1(), theta);
    for (const auto& [layer, lp] : plan.layers)
      if (spectra.at(layer).has_energy())
        v.require(lp.achieved_layer_threshold >= *plan.beta, "plan layer " + layer + " below beta");
  }
  if (v.pass) v.detail = "100 spectra x 1001 beta values; monotone, threshold >= beta";
  return v;
}

Verdict budget_search() {
  Verdict v;
  const auto m = scaffold("resnet56-shape", 0);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  std::string detail;
  for (double theta : {0.5294, 0.7793}) {
    const auto search = search_beta(spectra, net, theta);
    const auto plan = build_plan(net, m.archive, search.allocation, CriterionKind::l1(), theta);
    v.require(!search.nearest_achievable, "target " + fmt("%g", theta) + " reported unreachable");
    v.require(plan.achieved >= theta && plan.achieved <= theta + 0.02,
              "theta " + fmt("%g", theta) + " achieved " + fmt("%.6f", plan.achieved));
    detail += (detail.empty() ? "" : ", ") + fmt("theta %.4f", theta) + fmt(" -> %.4f", plan.achieved);
  }
  if (v.pass) v.detail = "resnet56-shape: " + detail;
  return v;
}

Verdict flops_arithmetic() {
  Verdict v;
  // Standard CIFAR ResNet-56 layer table: {output side, in, out, kernel, count}.
  struct Row {
    std::int64_t hw, in, out, k, count;
  };
  const Row table[] = {
      {32, 3, 16, 3, 1},  {32, 16, 16, 3, 18}, {16, 16, 32, 3, 1}, {16, 32, 32, 3, 17},
      {8, 32, 64, 3, 1},  {8, 64, 64, 3, 17},  {16, 16, 32, 1, 1}, {8, 32, 64, 1, 1},
  };
  std::int64_t hand = 64 * 10;
  for (const auto& r : table) hand += r.count * r.hw * r.hw * r.in * r.out * r.k * r.k;
  const auto total = flops(Network(scaffold("resnet56-shape", 0).spec)).total;
  const double rel = std::abs(static_cast<double>(total - hand)) / static_cast<double>(hand);
  const double vs_nominal = std::abs(static_cast<double>(total) - 125e6) / 125e6;
  v.require(rel <= 0.02, "total " + std::to_string(total) + " vs hand sum " + std::to_string(hand));
  v.require(vs_nominal <= 0.02, "total " + std::to_string(total) + " not within 2% of 125M");
  if (v.pass)
    v.detail = "total " + std::to_string(total) + " MACs, hand sum " + std::to_string(hand) + ", " +
               fmt("%.2f%% from 125M", 100 * vs_nominal);
  return v;
}

Verdict zero_filter_equivalence() {
  Verdict v;
  double worst = 0;
  const auto templates = scaffold_templates();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto& name = templates[seed % templates.size()];
    const auto m = scaffold(name, 100 + seed);
    const auto net = validate_network(m.spec, m.archive);
    const auto spectra = compute_spectra(net, m.archive);
    const auto plan =
        build_plan(net, m.archive, search_beta(spectra, net, 0.3 + 0.04 * static_cast<double>(seed)).allocation,
                   CriterionKind::random(seed));
    const auto zeroed = snf::testing::zero_removed(net, m.archive, plan);
    const auto pruned = apply_plan(net, zeroed, plan);
    const auto pn = validate_network(pruned.spec, pruned.archive);
    std::mt19937_64 rng(seed);
    const auto x = snf::testing::random_input(rng, net.spec().input_shape);
    const auto y0 = forward_eval(net, zeroed, x);
    const auto y1 = forward_eval(pn, pruned.archive, x);
    v.require(y0.shape == y1.shape, name + ": output shapes differ");
    if (y0.shape == y1.shape) worst = std::max(worst, (y0.data - y1.data).cwiseAbs().maxCoeff());
  }
  v.require(worst <= 1e-5, "max abs difference " + fmt("%.3g", worst));
  if (v.pass) v.detail = "10 seeds over all templates; max abs difference " + fmt("%.2g", worst);
  return v;
}

Verdict ablation_dominance() {
  Verdict v;
  const auto [spec, archive] = snf::testing::low_rank_instance(2024);
  const auto net = validate_network(spec, archive);
  const auto spectra = compute_spectra(net, archive);
  const double energy = spectra.at("A").total + spectra.at("B").total;
  int matched = 0, strict = 0;
  for (int k = 1; k <= 98; ++k) {
    const double theta = k / 100.0;
    const auto s = search_beta(spectra, net, theta);
    const auto u = uniform_allocation(net, theta);
    if (std::abs(s.achieved - u.achieved) > 0.01) continue;
    ++matched;
    const double es = total_reconstruction_error(spectra, s.allocation);
    const double eu = total_reconstruction_error(spectra, u.allocation);
    v.require(es <= eu + 1e-12 * energy, "theta " + fmt("%g", theta) + ": snf error " + fmt("%.6g", es) +
                                             " > uniform " + fmt("%.6g", eu));
    if (eu > es + 1e-3 * energy) ++strict;
  }
  v.require(matched > 0, "no matched reduction on the grid");
  if (v.pass)
    v.detail = std::to_string(matched) + " matched targets, snf strictly better at " + std::to_string(strict);
  return v;
}

Verdict curve_shapes() {
  Verdict v;
  // Step curve against reserved_count on every layer of a scaffold.
  const auto m = scaffold("resnet56-shape", 1);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  for (const auto& [layer, s] : spectra) {
    if (!s.has_energy()) continue;
    const auto c = curve_beta_vs_d(s);
    for (std::size_t k = 1; k < c.size(); ++k)
      v.require(c[k].first > c[k - 1].first && c[k].second > c[k - 1].second, layer + ": steps not increasing");
    for (int q = 0; q <= 200; ++q) {
      const double beta = q / 200.0;
      auto it = std::find_if(c.begin(), c.end(), [&](const auto& step) { return step.first >= beta; });
      v.require(it != c.end() && it->second == reserved_count(s, beta), layer + ": step mismatch");
    }
  }

  std::vector<double> grid;
  for (int k = 1; k <= 98; ++k) grid.push_back(k / 100.0);
  const auto scaffold_curve = curve_error_vs_ratio(spectra, net, grid);
  for (std::size_t k = 1; k < scaffold_curve.size(); ++k)
    v.require(scaffold_curve[k].total_error >= scaffold_curve[k - 1].total_error, "scaffold error curve decreases");

  // Low-rank instance: brute-force the largest reduction with zero error.
  const auto [lspec, larchive] = snf::testing::low_rank_instance(7);
  const auto lnet = validate_network(lspec, larchive);
  const auto lspectra = compute_spectra(lnet, larchive);
  const double energy = lspectra.at("A").total + lspectra.at("B").total;
  double breakpoint = 0;
  for (std::int64_t da = 1; da <= 16; ++da)
    for (std::int64_t db = 1; db <= 32; ++db) {
      Allocation a;
      a.per_layer = {{"A", da}, {"B", db}};
      if (total_reconstruction_error(lspectra, a) <= 1e-9 * energy)
        breakpoint = std::max(breakpoint, reduction_of(lnet, a));
    }
  const auto curve = curve_error_vs_ratio(lspectra, lnet, grid);
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (k > 0) v.require(curve[k].total_error >= curve[k - 1].total_error, "low-rank error curve decreases");
    if (curve[k].theta <= breakpoint)
      v.require(curve[k].total_error <= 1e-9 * energy, "error before breakpoint at " + fmt("%g", curve[k].theta));
    else
      v.require(curve[k].total_error > 1e-3 * energy, "flat after breakpoint at " + fmt("%g", curve[k].theta));
  }
  if (v.pass) v.detail = "steps match reserved_count; error curves monotone; low-rank breakpoint " + fmt("%.4f", breakpoint);
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  const auto bytes = read_file(p);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

Verdict determinism() {
  Verdict v;
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  std::vector<std::string> first;
  for (int rep = 0; rep < 2; ++rep) {
    snf::testing::TempDir dir;
    auto p = [&](const char* f) { return (dir / f).string(); };
    std::vector<std::string> files;
    v.require(run({"scaffold", "--template", "resnet56-shape", "--seed", "3", "--out-net", p("n.json"), "--out-weights",
                   p("w.snf")}) == 0,
              "scaffold failed");
    for (const char* strategy : {"snf", "uniform", "random"}) {
      const std::string plan = p("plan.json");
      v.require(run({"plan", "--net", p("n.json"), "--weights", p("w.snf"), "--flops-reduction", "0.5294", "--strategy",
                     strategy, "--criterion", "gm", "--seed", "11", "--out", plan}) == 0,
                "plan failed");
      v.require(run({"prune", "--net", p("n.json"), "--weights", p("w.snf"), "--plan", plan, "--out-weights",
                     p("p.snf"), "--out-net", p("p.json")}) == 0,
                "prune failed");
      for (const char* f : {"plan.json", "p.snf", "p.json"}) files.push_back(slurp(p(f)));
    }
    if (rep == 0)
      first = files;
    else
      v.require(files == first, "outputs differ between runs");
  }
  if (v.pass) v.detail = "plan/prune twice for snf, uniform and random; byte-identical";
  return v;
}

struct Check {
  const char* name;
  double budget_seconds;
  std::function<Verdict()> check;
};

}  // namespace

int main() {
  const Check checks[] = {
      {"eigensolver correctness", 10, eigensolver},
      {"reconstruction identity", 10, reconstruction_identity},
      {"threshold rule", 0, threshold_rule},
      {"budget search", 60, budget_search},
      {"flops arithmetic", 0, flops_arithmetic},
      {"zero-filter forward equivalence", 0, zero_filter_equivalence},
      {"ablation dominance", 0, ablation_dominance},
      {"curve shapes", 0, curve_shapes},
      {"determinism", 0, determinism},
  };
  int failures = 0;
  for (const auto& c : checks) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0 && seconds > c.budget_seconds) {
      v.pass = false;
      v.detail = fmt("took %.2f s", seconds) + fmt(", budget %.0f s", c.budget_seconds);
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ": " << v.detail << fmt(" [%.2f s]", seconds) << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
