#include "snf/cli.hpp"

#include <charconv>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "snf/allocator.hpp"
#include "snf/criteria.hpp"
#include "snf/error.hpp"
#include "snf/pruner.hpp"
#include "snf/scaffold.hpp"

namespace snf::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void check_theta(double theta) {
  if (!(theta > 0.0 && theta < 1.0))
    throw UsageError("--flops-reduction must be a fraction in (0, 1), got " + number(theta));
}

struct ModelPaths {
  std::string net;
  std::string weights;
};

struct Loaded {
  Network net;
  WeightArchive archive;
};

Loaded load(const ModelPaths& p) {
  auto archive = load_archive(p.weights);
  auto net = validate_network(load_network(p.net), archive);
  return {std::move(net), std::move(archive)};
}

void add_model_options(CLI::App* cmd, ModelPaths& p) {
  cmd->add_option("--net", p.net, "Network description (JSON)")->required();
  cmd->add_option("--weights", p.weights, "SNF1 weight archive")->required();
}

// Default grid for the error curve: 0.02, 0.04, ..., 0.98.
std::vector<double> default_theta_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 49; ++k) grid.push_back(k / 50.0);
  return grid;
}

SearchResult run_strategy(const std::string& strategy, const Loaded& m, const SpectrumMap& spectra, double theta,
                          std::uint64_t seed) {
  switch (strategy_from_string(strategy)) {
    case Strategy::snf: return search_beta(spectra, m.net, theta);
    case Strategy::uniform: return uniform_allocation(m.net, theta);
    case Strategy::random: return random_allocation(m.net, theta, seed);
    case Strategy::external: break;
  }
  throw UsageError("strategy '" + strategy + "' cannot be searched");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured filter-pruning planner", "snf"};
  app.require_subcommand(1);

  ModelPaths model;
  std::string out_path, plan_path, out_net, out_weights, criterion = "l1", strategy = "snf", mode, template_name;
  double theta = 0.0;
  std::uint64_t seed = 0;

  auto* analyze = app.add_subcommand("analyze", "Per-layer eigen-spectra of the centered filters (CSV)");
  add_model_options(analyze, model);
  analyze->add_option("--out", out_path, "Output CSV")->required();

  auto* plan = app.add_subcommand("plan", "Search filter counts for a FLOPs reduction and select kept filters");
  add_model_options(plan, model);
  plan->add_option("--flops-reduction", theta, "Target FLOPs reduction as a fraction")->required();
  plan->add_option("--criterion", criterion, "Filter importance criterion")
      ->check(CLI::IsMember({"l1", "l2", "gm", "random"}));
  plan->add_option("--seed", seed, "Seed for the random criterion/strategy");
  plan->add_option("--strategy", strategy, "Allocation strategy")->check(CLI::IsMember({"snf", "uniform", "random"}));
  plan->add_option("--out", out_path, "Output plan (JSON)")->required();

  auto* prune = app.add_subcommand("prune", "Apply a plan and write the physically pruned model");
  add_model_options(prune, model);
  prune->add_option("--plan", plan_path, "Plan (JSON)")->required();
  prune->add_option("--out-weights", out_weights, "Pruned SNF1 archive")->required();
  prune->add_option("--out-net", out_net, "Pruned network description")->required();

  auto* ablate = app.add_subcommand("ablate", "Compare snf, uniform and random allocations at one target");
  add_model_options(ablate, model);
  ablate->add_option("--flops-reduction", theta, "Target FLOPs reduction as a fraction")->required();
  ablate->add_option("--seed", seed, "Seed for the random allocation");
  ablate->add_option("--out", out_path, "Output CSV")->required();

  auto* curve = app.add_subcommand("curve", "Threshold/filter-count steps or error-vs-reduction curve (CSV)");
  add_model_options(curve, model);
  curve->add_option("--mode", mode, "beta-d or error-ratio")->required()->check(CLI::IsMember({"beta-d", "error-ratio"}));
  curve->add_option("--out", out_path, "Output CSV")->required();

  auto* scaffold_cmd = app.add_subcommand("scaffold", "Generate a random-weight network from a template");
  scaffold_cmd->add_option("--template", template_name, "Template name")
      ->required()
      ->check(CLI::IsMember(scaffold_templates()));
  scaffold_cmd->add_option("--seed", seed, "Weight seed");
  scaffold_cmd->add_option("--out-net", out_net, "Network description output")->required();
  scaffold_cmd->add_option("--out-weights", out_weights, "SNF1 archive output")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*analyze) {
      const auto m = load(model);
      std::ostringstream csv;
      csv << "layer,index,eigenvalue,cumulative_ratio\n";
      for (std::size_t i = 0; i < m.net.size(); ++i) {
        const auto& l = m.net.layer(i);
        if (!l.has_filters()) continue;
        const auto s = weight_spectrum<double>(m.archive.at(*l.binding(kWeight)));
        for (std::int64_t d = 1; d <= s.size(); ++d)
          csv << l.name << ',' << d << ',' << number(s.eigenvalues[static_cast<std::size_t>(d - 1)]) << ','
              << number(s.ratio_at(d)) << '\n';
      }
      write_text_atomic(out_path, csv.str());
      return kOk;
    }

    if (*plan) {
      check_theta(theta);
      const auto m = load(model);
      const auto spectra = compute_spectra(m.net, m.archive);
      const auto result = run_strategy(strategy, m, spectra, theta, seed);
      CriterionKind kind{criterion_from_string(criterion), seed};
      const auto p = build_plan(m.net, m.archive, result.allocation, kind, theta);
      write_text_atomic(out_path, dump_plan(p));
      out << report(m.net, p).text;
      if (result.nearest_achievable) {
        err << "warning: target " << number(theta) << " is unreachable; wrote nearest-achievable plan with reduction "
            << number(result.achieved) << '\n';
        return kUnreachable;
      }
      return kOk;
    }

    if (*prune) {
      const auto m = load(model);
      const auto p = load_plan(plan_path);
      const auto pruned = apply_plan(m.net, m.archive, p);
      const auto after = flops(Network(pruned.spec)).total;
      if (after != p.flops_after)
        throw ValidationError("pruned network has " + std::to_string(after) + " MACs but the plan records " +
                              std::to_string(p.flops_after));
      save_archive(out_weights, pruned.archive);
      write_text_atomic(out_net, dump_network(pruned.spec));
      return kOk;
    }

    if (*ablate) {
      check_theta(theta);
      const auto m = load(model);
      const auto spectra = compute_spectra(m.net, m.archive);
      std::ostringstream csv;
      csv << "strategy,parameter,achieved,total_reconstruction_error,nearest_achievable\n";
      bool unreachable = false;
      for (const char* s : {"snf", "uniform", "random"}) {
        const auto r = run_strategy(s, m, spectra, theta, seed);
        unreachable = unreachable || r.nearest_achievable;
        csv << s << ',' << number(r.beta) << ',' << number(r.achieved) << ','
            << number(total_reconstruction_error(spectra, r.allocation)) << ',' << (r.nearest_achievable ? 1 : 0)
            << '\n';
      }
      write_text_atomic(out_path, csv.str());
      if (unreachable) {
        err << "warning: target " << number(theta) << " is unreachable for at least one strategy\n";
        return kUnreachable;
      }
      return kOk;
    }

    if (*curve) {
      const auto m = load(model);
      const auto spectra = compute_spectra(m.net, m.archive);
      std::ostringstream csv;
      if (mode == "beta-d") {
        csv << "layer,beta_breakpoint,d\n";
        for (auto i : m.net.prunable_layers()) {
          const auto& s = spectra.at(m.net.layer(i).name);
          if (!s.has_energy()) continue;
          for (const auto& [beta, d] : curve_beta_vs_d(s))
            csv << m.net.layer(i).name << ',' << number(beta) << ',' << d << '\n';
        }
      } else {
        csv << "theta,beta,achieved,total_reconstruction_error\n";
        for (const auto& pt : curve_error_vs_ratio(spectra, m.net, default_theta_grid()))
          csv << number(pt.theta) << ',' << number(pt.beta) << ',' << number(pt.achieved) << ','
              << number(pt.total_error) << '\n';
      }
      write_text_atomic(out_path, csv.str());
      return kOk;
    }

    if (*scaffold_cmd) {
      const auto m = scaffold(template_name, seed);
      validate_network(m.spec, m.archive);
      save_archive(out_weights, m.archive);
      write_text_atomic(out_net, dump_network(m.spec));
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace snf::cli
