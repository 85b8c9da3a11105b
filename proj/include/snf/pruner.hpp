#ifndef SNF_PRUNER_HPP
#define SNF_PRUNER_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "snf/allocator.hpp"
#include "snf/criteria.hpp"
#include "snf/network.hpp"
#include "snf/tensor_io.hpp"

namespace snf {

struct LayerPlan {
  std::vector<std::int64_t> kept;
  std::vector<std::int64_t> removed;
  double achieved_layer_threshold = 0.0;

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct PruningPlan {
  double theta_target = 0.0;
  std::optional<double> beta;
  Strategy strategy = Strategy::external;
  std::int64_t flops_before = 0;
  std::int64_t flops_after = 0;
  double achieved = 0.0;
  std::map<std::string, LayerPlan> layers;

  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

nlohmann::json to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const nlohmann::json& doc);
std::string dump_plan(const PruningPlan& plan);
PruningPlan load_plan(const std::filesystem::path& path);

/// Picks kept filters per prunable layer (coupling groups jointly) and
/// records FLOPs before/after and each layer's covered energy ratio.
PruningPlan build_plan(const Network& net, const WeightArchive& archive, const Allocation& alloc,
                       const CriterionKind& criterion, double theta_target = 0.0);

/// Throws ValidationError unless the plan's layers are prunable layers of net
/// with complete, disjoint index sets and coupled layers agree.
void check_plan(const Network& net, const PruningPlan& plan);

struct PrunedModel {
  NetworkSpec spec;
  WeightArchive archive;
};

/// Slices kept filters out of every planned layer and the matching input
/// channels, BN vectors and biases of every consumer.
PrunedModel apply_plan(const Network& net, const WeightArchive& archive, const PruningPlan& plan);

struct PlanReport {
  std::string text;
  std::string csv;  // layer,N,d,threshold,macs_before,macs_after
};

PlanReport report(const Network& net, const PruningPlan& plan);

}  // namespace snf

#endif  // SNF_PRUNER_HPP
