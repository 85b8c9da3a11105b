#include "snf/criteria.hpp"

#include <algorithm>
#include <numeric>

namespace snf {

Criterion criterion_from_string(const std::string& text) {
  if (text == "l1") return Criterion::l1;
  if (text == "l2") return Criterion::l2;
  if (text == "gm" || text == "geometric_median") return Criterion::geometric_median;
  if (text == "random") return Criterion::random;
  throw DomainError("unknown criterion '" + text + "'");
}

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::l1: return "l1";
    case Criterion::l2: return "l2";
    case Criterion::geometric_median: return "gm";
    case Criterion::random: return "random";
  }
  return "?";
}

std::vector<std::int64_t> select_kept(std::span<const double> scores, std::int64_t d) {
  const auto n = static_cast<std::int64_t>(scores.size());
  if (d < 1 || d > n) throw DomainError("select_kept: d out of range");
  std::vector<std::int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(d));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::int64_t> select_kept_grouped(std::span<const FilterMatrix<double>> members, const CriterionKind& c,
                                              std::int64_t d) {
  if (members.empty()) throw DomainError("select_kept_grouped: empty group");
  VectorX<double> total = VectorX<double>::Zero(members.front().rows());
  for (const auto& m : members) {
    if (m.rows() != total.size()) throw ValidationError("select_kept_grouped: members differ in filter count");
    total += score_filters(m, c);
  }
  return select_kept(total, d);
}

}  // namespace snf
