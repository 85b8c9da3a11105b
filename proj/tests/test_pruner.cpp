#include <doctest.h>

#include <set>
#include <sstream>

#include "snf/error.hpp"
#include "snf/forward.hpp"
#include "snf/pruner.hpp"
#include "snf/scaffold.hpp"
#include "testing.hpp"

using namespace snf;
using snf::testing::conv_layer;
using snf::testing::weight_from;

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// A(3->4) feeding B(4->8), 1x1 kernels so weights are plain matrices.
std::pair<NetworkSpec, WeightArchive> chain_ab() {
  NetworkSpec s;
  s.input_shape = {3, 4, 4};
  s.layers = {conv_layer("A", kNetworkInput, 3, 4, 1, 1, 0), conv_layer("B", "A", 4, 8, 1, 1, 0)};
  s.output = "B";
  Eigen::MatrixXd a(4, 3), b(8, 4);
  a << 1, 1, 1, -0.1, 0.2, 0.2, 2, 2, 2, 0.3, -0.3, 0.4;  // l1 scores 3, 0.5, 6, 1
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) b(i, j) = 10.0 * static_cast<double>(i) + static_cast<double>(j);
  WeightArchive w;
  w.add(weight_from("A.weight", a));
  w.add(weight_from("B.weight", b));
  return {s, w};
}

Allocation counts(std::map<std::string, std::int64_t> m) {
  Allocation a;
  a.per_layer = std::move(m);
  return a;
}

}  // namespace

TEST_CASE("no-op plan") {
  for (const auto& name : scaffold_templates()) {
    const auto m = scaffold(name, 2);
    const auto net = validate_network(m.spec, m.archive);
    const auto plan = build_plan(net, m.archive, full_allocation(net), CriterionKind::l1());
    CHECK(plan.achieved == 0.0);
    CHECK(plan.flops_after == plan.flops_before);
    for (const auto& [layer, lp] : plan.layers) CHECK(lp.removed.empty());
    const auto pruned = apply_plan(net, m.archive, plan);
    CHECK(pruned.archive == m.archive);
    CHECK(pruned.spec == m.spec);

    const auto rows = parse_csv(report(net, plan).csv);
    for (std::size_t r = 1; r + 1 < rows.size(); ++r) {
      CHECK(rows[r][1] == rows[r][2]);
      CHECK(rows[r][4] == rows[r][5]);
    }
  }
}

TEST_CASE("kept filters follow the criterion and slicing follows the kept set") {
  const auto [spec, archive] = chain_ab();
  const auto net = validate_network(spec, archive);
  const auto plan = build_plan(net, archive, counts({{"A", 2}, {"B", 8}}), CriterionKind::l1());
  CHECK(plan.layers.at("A").kept == std::vector<std::int64_t>{0, 2});
  CHECK(plan.layers.at("A").removed == std::vector<std::int64_t>{1, 3});
  CHECK(plan.layers.at("B").removed.empty());

  const auto pruned = apply_plan(net, archive, plan);
  const auto& a = pruned.archive.at("A.weight");
  const auto& b = pruned.archive.at("B.weight");
  CHECK(a.shape == std::vector<std::int64_t>{2, 3, 1, 1});
  CHECK(b.shape == std::vector<std::int64_t>{8, 2, 1, 1});
  CHECK(a.data == std::vector<float>{1, 1, 1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) {
    CHECK(b.data[static_cast<std::size_t>(2 * i)] == static_cast<float>(10 * i));
    CHECK(b.data[static_cast<std::size_t>(2 * i + 1)] == static_cast<float>(10 * i + 2));
  }
  CHECK(pruned.spec.layers[0].out_channels == 2);
  CHECK(pruned.spec.layers[1].in_channels == 2);
  CHECK_NOTHROW(validate_network(pruned.spec, pruned.archive));
}

TEST_CASE("coupled layers share kept sets and BN vectors are sliced") {
  const auto m = scaffold("toy-residual", 4);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  const auto search = search_beta(spectra, net, 0.4);
  for (auto kind : {CriterionKind::l1(), CriterionKind::l2(), CriterionKind::geometric_median(), CriterionKind::random(5)}) {
    const auto plan = build_plan(net, m.archive, search.allocation, kind, 0.4);
    CHECK_NOTHROW(check_plan(net, plan));
    for (const auto& [group, members] : net.coupling_groups()) {
      const auto& first = plan.layers.at(net.layer(members.front()).name).kept;
      for (auto i : members) CHECK(plan.layers.at(net.layer(i).name).kept == first);
    }
    const auto pruned = apply_plan(net, m.archive, plan);
    const auto pn = validate_network(pruned.spec, pruned.archive);
    const auto d = static_cast<std::int64_t>(plan.layers.at("stem").kept.size());
    CHECK(pruned.archive.at("stem_bn.running_var").shape == std::vector<std::int64_t>{d});
    CHECK(flops(pn).total == plan.flops_after);
  }
}

TEST_CASE("plan invariants and apply properties on scaffolds") {
  for (const auto& name : scaffold_templates()) {
    const auto m = scaffold(name, 6);
    const auto net = validate_network(m.spec, m.archive);
    const auto spectra = compute_spectra(net, m.archive);
    for (double theta : {0.2, 0.45}) {
      const auto search = search_beta(spectra, net, theta);
      const auto plan = build_plan(net, m.archive, search.allocation, CriterionKind::l2(), theta);
      CHECK(plan.beta == search.beta);
      CHECK(plan.achieved == doctest::Approx(search.achieved).epsilon(1e-15));
      CHECK(std::abs(plan.achieved - (1.0 - static_cast<double>(plan.flops_after) / static_cast<double>(plan.flops_before))) <=
            1e-12);
      for (const auto& [layer, lp] : plan.layers) {
        const auto n = net.layer(net.index_of(layer)).out_channels;
        std::set<std::int64_t> all(lp.kept.begin(), lp.kept.end());
        all.insert(lp.removed.begin(), lp.removed.end());
        CHECK(all.size() == static_cast<std::size_t>(n));
        CHECK(lp.kept.size() + lp.removed.size() == static_cast<std::size_t>(n));
        CHECK(!lp.kept.empty());
        const auto i = net.index_of(layer);
        const bool grouped = net.layer(i).coupling_group.has_value();
        if (!grouped && spectra.at(layer).has_energy()) CHECK(lp.achieved_layer_threshold >= *plan.beta);
      }
      const auto pruned = apply_plan(net, m.archive, plan);
      const auto pn = validate_network(pruned.spec, pruned.archive);
      CHECK(flops(pn).total == plan.flops_after);

      // Second application as a no-op on the pruned net is the identity.
      const auto again = apply_plan(pn, pruned.archive, build_plan(pn, pruned.archive, full_allocation(pn), CriterionKind::l1()));
      CHECK(again.archive == pruned.archive);
      CHECK(again.spec == pruned.spec);
    }
  }
}

TEST_CASE("zero-filter forward equivalence") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto name = scaffold_templates()[seed % 2];
    const auto m = scaffold(name, seed);
    const auto net = validate_network(m.spec, m.archive);
    const auto spectra = compute_spectra(net, m.archive);
    const auto plan = build_plan(net, m.archive, search_beta(spectra, net, 0.3).allocation, CriterionKind::random(seed));
    const auto zeroed = snf::testing::zero_removed(net, m.archive, plan);
    const auto pruned = apply_plan(net, zeroed, plan);
    const auto pn = validate_network(pruned.spec, pruned.archive);
    std::mt19937_64 rng(seed);
    const auto x = snf::testing::random_input(rng, net.spec().input_shape);
    const auto y0 = forward_eval(net, zeroed, x);
    const auto y1 = forward_eval(pn, pruned.archive, x);
    REQUIRE(y0.shape == y1.shape);
    CHECK((y0.data - y1.data).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("plan validation and errors") {
  const auto [spec, archive] = chain_ab();
  const auto net = validate_network(spec, archive);
  auto plan = build_plan(net, archive, counts({{"A", 2}}), CriterionKind::l1());
  CHECK_NOTHROW(check_plan(net, plan));

  auto bad = plan;
  bad.layers["A"].removed = {1};
  CHECK_THROWS_AS(check_plan(net, bad), ValidationError);
  bad = plan;
  bad.layers["ghost"] = plan.layers["A"];
  CHECK_THROWS_AS(apply_plan(net, archive, bad), ValidationError);
  CHECK_THROWS_AS(build_plan(net, archive, counts({{"A", 9}}), CriterionKind::l1()), ValidationError);
}

TEST_CASE("report totals and CSV round trip") {
  const auto m = scaffold("toy-plain", 8);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  const auto plan = build_plan(net, m.archive, search_beta(spectra, net, 0.5).allocation, CriterionKind::l1(), 0.5);
  const auto rep = report(net, plan);
  const auto rows = parse_csv(rep.csv);
  REQUIRE(rows.size() >= 3);
  CHECK(rows.front() == std::vector<std::string>{"layer", "N", "d", "threshold", "macs_before", "macs_after"});
  const auto& total = rows.back();
  CHECK(total[0] == "total");
  CHECK(std::stod(total[3]) == plan.achieved);
  CHECK(std::stoll(total[4]) == plan.flops_before);
  CHECK(std::stoll(total[5]) == plan.flops_after);
  std::int64_t before = 0, after = 0;
  for (std::size_t r = 1; r + 1 < rows.size(); ++r) {
    const auto& row = rows[r];
    before += std::stoll(row[4]);
    after += std::stoll(row[5]);
    if (auto it = plan.layers.find(row[0]); it != plan.layers.end()) {
      CHECK(std::stoll(row[2]) == static_cast<std::int64_t>(it->second.kept.size()));
      CHECK(std::stod(row[3]) == it->second.achieved_layer_threshold);
    }
  }
  CHECK(before == plan.flops_before);
  CHECK(after == plan.flops_after);
  CHECK(rep.text.find("total") != std::string::npos);
}

TEST_CASE("plan JSON round trip") {
  const auto m = scaffold("toy-residual", 9);
  const auto net = validate_network(m.spec, m.archive);
  const auto spectra = compute_spectra(net, m.archive);
  const auto plan = build_plan(net, m.archive, search_beta(spectra, net, 0.3).allocation, CriterionKind::l1(), 0.3);
  const auto text = dump_plan(plan);
  CHECK(plan_from_json(nlohmann::json::parse(text)) == plan);
  CHECK(dump_plan(plan_from_json(nlohmann::json::parse(text))) == text);
  const auto doc = nlohmann::json::parse(text);
  for (const char* key : {"theta_target", "beta", "strategy", "flops_before", "flops_after", "achieved", "layers"})
    CHECK_MESSAGE(doc.contains(key), key);
  const auto& layer = doc["layers"].begin().value();
  for (const char* key : {"kept", "removed", "achieved_layer_threshold"}) CHECK_MESSAGE(layer.contains(key), key);

  auto uniform = plan;
  uniform.beta.reset();
  uniform.strategy = Strategy::uniform;
  CHECK(nlohmann::json::parse(dump_plan(uniform))["beta"].is_null());
  CHECK(plan_from_json(nlohmann::json::parse(dump_plan(uniform))) == uniform);
  CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse(R"({"layers":3})")), FormatError);
}

TEST_CASE("scaffolds") {
  for (const auto& name : scaffold_templates()) {
    const auto a = scaffold(name, 11), b = scaffold(name, 11);
    CHECK(a.archive == b.archive);
    CHECK(a.spec == b.spec);
    CHECK_FALSE(scaffold(name, 12).archive == a.archive);
    CHECK_NOTHROW(validate_network(a.spec, a.archive));
  }
  // Hand-summed ResNet-56 MACs: 125,485,056 in 3x3 convs, 262,144 in the two
  // 1x1 projections, 640 in the classifier.
  const auto r = scaffold("resnet56-shape", 0);
  const auto total = flops(Network(r.spec)).total;
  CHECK(total == 125'747'840);
  CHECK(std::abs(static_cast<double>(total) - 125e6) <= 0.02 * 125e6);
  CHECK_THROWS_AS(scaffold("vgg16", 0), DomainError);
}
