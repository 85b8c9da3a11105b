#include "snf/pruner.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "snf/error.hpp"
#include "snf/spectrum.hpp"

namespace snf {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// serialization

json to_json(const PruningPlan& plan) {
  json layers = json::object();
  for (const auto& [name, l] : plan.layers)
    layers[name] = {{"kept", l.kept}, {"removed", l.removed}, {"achieved_layer_threshold", l.achieved_layer_threshold}};
  return json{{"theta_target", plan.theta_target},
              {"beta", plan.beta ? json(*plan.beta) : json(nullptr)},
              {"strategy", to_string(plan.strategy)},
              {"flops_before", plan.flops_before},
              {"flops_after", plan.flops_after},
              {"achieved", plan.achieved},
              {"layers", std::move(layers)}};
}

PruningPlan plan_from_json(const json& doc) {
  try {
    PruningPlan plan;
    plan.theta_target = doc.at("theta_target").get<double>();
    if (doc.contains("beta") && !doc.at("beta").is_null()) plan.beta = doc.at("beta").get<double>();
    plan.strategy = strategy_from_string(doc.at("strategy").get<std::string>());
    plan.flops_before = doc.at("flops_before").get<std::int64_t>();
    plan.flops_after = doc.at("flops_after").get<std::int64_t>();
    plan.achieved = doc.at("achieved").get<double>();
    for (const auto& [name, l] : doc.at("layers").items()) {
      LayerPlan lp;
      lp.kept = l.at("kept").get<std::vector<std::int64_t>>();
      lp.removed = l.at("removed").get<std::vector<std::int64_t>>();
      lp.achieved_layer_threshold = l.at("achieved_layer_threshold").get<double>();
      plan.layers.emplace(name, std::move(lp));
    }
    return plan;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed plan: ") + e.what());
  } catch (const DomainError& e) {
    throw FormatError(std::string("malformed plan: ") + e.what());
  }
}

std::string dump_plan(const PruningPlan& plan) { return to_json(plan).dump(2) + "\n"; }

PruningPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    return plan_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// planning

namespace {

FilterMatrix<double> raw_filters(const Network& net, const WeightArchive& archive, std::size_t layer) {
  return build_filter_matrix<double>(archive.at(*net.layer(layer).binding(kWeight)));
}

std::vector<std::int64_t> complement(const std::vector<std::int64_t>& kept, std::int64_t n) {
  std::vector<std::int64_t> removed;
  std::size_t k = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (k < kept.size() && kept[k] == i)
      ++k;
    else
      removed.push_back(i);
  }
  return removed;
}

Allocation allocation_of(const PruningPlan& plan) {
  Allocation alloc;
  alloc.beta = plan.beta;
  alloc.strategy = plan.strategy;
  for (const auto& [name, l] : plan.layers) alloc.per_layer[name] = static_cast<std::int64_t>(l.kept.size());
  return alloc;
}

}  // namespace

PruningPlan build_plan(const Network& net, const WeightArchive& archive, const Allocation& alloc,
                       const CriterionKind& criterion, double theta_target) {
  check_allocation(net, alloc);

  PruningPlan plan;
  plan.theta_target = theta_target;
  plan.beta = alloc.beta;
  plan.strategy = alloc.strategy;

  Allocation counts = full_allocation(net);
  for (const auto& [name, d] : alloc.per_layer) counts.per_layer[name] = d;

  std::set<std::string> done_groups;
  for (auto i : net.prunable_layers()) {
    const auto& l = net.layer(i);
    const auto d = counts.at(l.name);
    std::vector<std::int64_t> kept;
    if (d == l.out_channels) {
      kept.resize(static_cast<std::size_t>(d));
      std::iota(kept.begin(), kept.end(), std::int64_t{0});
    } else if (l.coupling_group) {
      if (done_groups.count(*l.coupling_group)) continue;
      std::vector<FilterMatrix<double>> members;
      for (auto m : net.coupling_groups().at(*l.coupling_group)) members.push_back(raw_filters(net, archive, m));
      kept = select_kept_grouped(members, criterion, d);
      for (auto m : net.coupling_groups().at(*l.coupling_group)) {
        const auto& member = net.layer(m);
        const auto spectrum = weight_spectrum<double>(archive.at(*member.binding(kWeight)));
        plan.layers[member.name] = {kept, complement(kept, member.out_channels), spectrum.ratio_at(d)};
      }
      done_groups.insert(*l.coupling_group);
      continue;
    } else {
      kept = select_kept(score_filters(raw_filters(net, archive, i), criterion), d);
    }
    const auto spectrum = weight_spectrum<double>(archive.at(*l.binding(kWeight)));
    plan.layers[l.name] = {kept, complement(kept, l.out_channels), spectrum.ratio_at(d)};
  }

  plan.flops_before = flops(net).total;
  plan.flops_after = flops(net, counts).total;
  plan.achieved = 1.0 - static_cast<double>(plan.flops_after) / static_cast<double>(plan.flops_before);
  return plan;
}

void check_plan(const Network& net, const PruningPlan& plan) {
  for (const auto& [name, lp] : plan.layers) {
    const auto i = net.find(name);
    if (!i || !net.layer(*i).prunable || !net.layer(*i).has_filters())
      throw ValidationError("plan layer '" + name + "' is not a prunable layer of the network");
    const auto n = net.layer(*i).out_channels;
    if (lp.kept.empty()) throw ValidationError("plan layer '" + name + "' keeps no filters");
    if (!std::is_sorted(lp.kept.begin(), lp.kept.end()) || !std::is_sorted(lp.removed.begin(), lp.removed.end()))
      throw ValidationError("plan layer '" + name + "' index lists must be sorted");
    std::vector<std::int64_t> all;
    std::merge(lp.kept.begin(), lp.kept.end(), lp.removed.begin(), lp.removed.end(), std::back_inserter(all));
    std::vector<std::int64_t> expected(static_cast<std::size_t>(n));
    std::iota(expected.begin(), expected.end(), std::int64_t{0});
    if (all != expected) throw ValidationError("plan layer '" + name + "' kept/removed do not partition the filters");
    if (!lp.removed.empty() && !net.is_free(*i))
      throw ValidationError("plan prunes '" + name + "' whose coupling group is frozen");
  }
  for (const auto& [label, members] : net.coupling_groups()) {
    std::optional<std::vector<std::int64_t>> shared;
    for (auto m : members) {
      const auto& l = net.layer(m);
      std::vector<std::int64_t> kept;
      if (auto it = plan.layers.find(l.name); it != plan.layers.end()) {
        kept = it->second.kept;
      } else {
        kept.resize(static_cast<std::size_t>(l.out_channels));
        std::iota(kept.begin(), kept.end(), std::int64_t{0});
      }
      if (shared && *shared != kept) throw ValidationError("coupling group '" + label + "' members keep different filters");
      shared = std::move(kept);
    }
  }
}

// ---------------------------------------------------------------------------
// slicing

namespace {

using Indices = std::vector<std::int64_t>;

Indices iota_indices(std::int64_t n) {
  Indices v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), std::int64_t{0});
  return v;
}

// Views t as [rows, cols, inner] and keeps the listed rows and columns.
TensorRecord slice(const TensorRecord& t, const Indices& rows, const Indices* cols) {
  const auto n = t.shape[0];
  const auto c = t.shape.size() > 1 ? t.shape[1] : 1;
  const auto inner = t.numel() / (n * c);
  const Indices all_cols = cols ? Indices{} : iota_indices(c);
  const Indices& cs = cols ? *cols : all_cols;

  TensorRecord out;
  out.name = t.name;
  out.shape = t.shape;
  out.shape[0] = static_cast<std::int64_t>(rows.size());
  if (t.shape.size() > 1) out.shape[1] = static_cast<std::int64_t>(cs.size());
  out.data.reserve(rows.size() * cs.size() * static_cast<std::size_t>(inner));
  for (auto r : rows)
    for (auto col : cs) {
      const auto base = t.data.begin() + (r * c + col) * inner;
      out.data.insert(out.data.end(), base, base + inner);
    }
  return out;
}

}  // namespace

PrunedModel apply_plan(const Network& net, const WeightArchive& archive, const PruningPlan& plan) {
  check_plan(net, plan);

  std::vector<Indices> kept_out(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layer(i);
    auto it = plan.layers.find(l.name);
    kept_out[i] = it != plan.layers.end() ? it->second.kept : iota_indices(l.out_channels);
  }
  const Indices input_channels = iota_indices(net.spec().input_shape.channels);
  auto carried = [&](const std::optional<std::size_t>& producer) -> const Indices& {
    if (!producer) return input_channels;
    const auto src = net.channel_source(*producer);
    return src ? kept_out[*src] : input_channels;
  };

  PrunedModel out{net.spec(), archive};
  std::map<std::string, TensorRecord> replaced;
  auto replace = [&](TensorRecord t) {
    auto [it, fresh] = replaced.emplace(t.name, t);
    if (!fresh && !(it->second == t))
      throw ValidationError("tensor '" + t.name + "' is bound by layers that slice it differently");
  };

  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layer(i);
    auto& pl = out.spec.layers[i];
    const auto& producers = net.producers(i);
    const Indices& in_kept = carried(producers.front());
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::linear:
        replace(slice(archive.at(*l.binding(kWeight)), kept_out[i], &in_kept));
        if (auto b = l.binding(kBias)) replace(slice(archive.at(*b), kept_out[i], nullptr));
        pl.in_channels = static_cast<std::int64_t>(in_kept.size());
        pl.out_channels = static_cast<std::int64_t>(kept_out[i].size());
        break;
      case LayerKind::batchnorm:
        for (const char* role : {kBnScale, kBnShift, kBnMean, kBnVar})
          replace(slice(archive.at(*l.binding(role)), in_kept, nullptr));
        pl.in_channels = pl.out_channels = static_cast<std::int64_t>(in_kept.size());
        break;
      case LayerKind::add:
        for (const auto& p : producers)
          if (carried(p) != in_kept)
            throw ValidationError("consumer channel bookkeeping mismatch at add join '" + l.name + "'");
        [[fallthrough]];
      case LayerKind::relu:
        pl.in_channels = pl.out_channels = static_cast<std::int64_t>(in_kept.size());
        break;
    }
  }
  for (auto& [name, t] : replaced) out.archive.put(std::move(t));

  validate_network(out.spec, out.archive);
  return out;
}

// ---------------------------------------------------------------------------
// reporting

namespace {

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

PlanReport report(const Network& net, const PruningPlan& plan) {
  check_plan(net, plan);
  const auto before = flops(net);
  const auto after = flops(net, allocation_of(plan));

  std::ostringstream csv, text;
  csv << "layer,N,d,threshold,macs_before,macs_after\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %6s %6s %10s %14s %14s %8s\n", "layer", "N", "d", "threshold", "MACs before",
                "MACs after", "reduct.");
  text << line;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layer(i);
    if (!l.has_filters()) continue;
    auto it = plan.layers.find(l.name);
    const auto d = it != plan.layers.end() ? static_cast<std::int64_t>(it->second.kept.size()) : l.out_channels;
    const auto mb = before.per_layer.at(l.name), ma = after.per_layer.at(l.name);
    const std::string threshold = it != plan.layers.end() ? number(it->second.achieved_layer_threshold) : "";
    csv << l.name << ',' << l.out_channels << ',' << d << ',' << threshold << ',' << mb << ',' << ma << '\n';
    const double pct = mb > 0 ? 100.0 * (1.0 - static_cast<double>(ma) / static_cast<double>(mb)) : 0.0;
    std::snprintf(line, sizeof(line), "%-24s %6lld %6lld %10s %14lld %14lld %7.2f%%\n", l.name.c_str(),
                  static_cast<long long>(l.out_channels), static_cast<long long>(d),
                  it != plan.layers.end() ? std::to_string(it->second.achieved_layer_threshold).c_str() : "-",
                  static_cast<long long>(mb), static_cast<long long>(ma), pct);
    text << line;
  }
  csv << "total,,," << number(plan.achieved) << ',' << plan.flops_before << ',' << plan.flops_after << '\n';
  std::snprintf(line, sizeof(line), "%-24s %6s %6s %10s %14lld %14lld %7.2f%%\n", "total", "", "", "",
                static_cast<long long>(plan.flops_before), static_cast<long long>(plan.flops_after),
                100.0 * plan.achieved);
  text << line;
  text << "strategy " << to_string(plan.strategy);
  if (plan.beta) text << ", beta " << number(*plan.beta);
  text << ", target " << number(plan.theta_target) << ", achieved " << number(plan.achieved) << '\n';
  return {text.str(), csv.str()};
}

}  // namespace snf
