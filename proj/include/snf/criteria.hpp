#ifndef SNF_CRITERIA_HPP
#define SNF_CRITERIA_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "snf/random.hpp"
#include "snf/spectrum.hpp"

namespace snf {

enum class Criterion { l1, l2, geometric_median, random };

struct CriterionKind {
  Criterion kind = Criterion::l1;
  std::uint64_t seed = 0;  // random only

  static CriterionKind l1() { return {Criterion::l1, 0}; }
  static CriterionKind l2() { return {Criterion::l2, 0}; }
  static CriterionKind geometric_median() { return {Criterion::geometric_median, 0}; }
  static CriterionKind random(std::uint64_t seed) { return {Criterion::random, seed}; }
};

/// Accepts l1, l2, gm (or geometric_median), random.
Criterion criterion_from_string(const std::string& text);
std::string to_string(Criterion c);

/// Importance per filter row; larger means more worth keeping. Geometric
/// median scores are distance sums to every other filter, so the most
/// replaceable filters score lowest.
template <typename Scalar>
VectorX<Scalar> score_filters(const FilterMatrix<Scalar>& m, const CriterionKind& c) {
  if (m.centered) throw DomainError("score_filters: criteria operate on raw (uncentered) weights");
  const auto n = m.rows();
  VectorX<Scalar> scores(n);
  switch (c.kind) {
    case Criterion::l1:
      scores = m.values.cwiseAbs().rowwise().sum();
      break;
    case Criterion::l2:
      scores = m.values.rowwise().norm();
      break;
    case Criterion::geometric_median:
      scores.setZero();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
          const Scalar dist = (m.values.row(i) - m.values.row(j)).norm();
          scores(i) += dist;
          scores(j) += dist;
        }
      break;
    case Criterion::random: {
      SplitMix64 rng(c.seed);
      for (Eigen::Index i = 0; i < n; ++i) scores(i) = static_cast<Scalar>(rng.unit());
      break;
    }
  }
  return scores;
}

/// Indices of the d largest scores (ties toward the lower index), ascending.
std::vector<std::int64_t> select_kept(std::span<const double> scores, std::int64_t d);

inline std::vector<std::int64_t> select_kept(const VectorX<double>& scores, std::int64_t d) {
  return select_kept(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), d);
}

/// Scores each member, sums positionally, then selects.
std::vector<std::int64_t> select_kept_grouped(std::span<const FilterMatrix<double>> members, const CriterionKind& c,
                                              std::int64_t d);

}  // namespace snf

#endif  // SNF_CRITERIA_HPP
