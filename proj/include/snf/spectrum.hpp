#ifndef SNF_SPECTRUM_HPP
#define SNF_SPECTRUM_HPP

// Per-layer PCA over flattened filters.
//
// A layer's N filters are flattened into the rows of an N x D matrix
// (D = in_channels * kh * kw), centered by the mean filter, and the
// eigenvalues of the N x N Gram matrix M M^T are the PCA energies. The
// reserved count for a threshold beta is the smallest d whose leading
// eigenvalues cover at least beta of the total energy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Jacobi>

#include "snf/error.hpp"
#include "snf/tensor_io.hpp"

namespace snf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar = double>
struct FilterMatrix {
  std::string layer;
  MatrixX<Scalar> values;  // one filter per row
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean;
  bool centered = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Flattens a [N, C, kh, kw] conv weight or a [N, D] linear weight into N rows.
template <typename Scalar = double>
FilterMatrix<Scalar> build_filter_matrix(const TensorRecord& weight) {
  if (weight.shape.size() != 4 && weight.shape.size() != 2)
    throw ValidationError("tensor '" + weight.name + "' is neither a conv nor a linear weight");
  weight.check();
  const auto n = weight.shape[0];
  const auto d = weight.numel() / n;
  FilterMatrix<Scalar> m;
  m.layer = weight.name;
  m.values = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                 weight.data.data(), n, d)
                 .template cast<Scalar>();
  return m;
}

template <typename Scalar>
FilterMatrix<Scalar> center(FilterMatrix<Scalar> m) {
  if (m.centered) return m;
  m.mean = m.values.colwise().mean();
  m.values.rowwise() -= m.mean;
  m.centered = true;
  return m;
}

template <typename Scalar>
struct EigenDecomposition {
  VectorX<Scalar> eigenvalues;                                   // descending
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectors;  // orthonormal columns
  int sweeps = 0;
};

inline constexpr int kJacobiSweeps = 30;

/// Cyclic Jacobi rotations on a symmetric matrix. Converged when the
/// off-diagonal Frobenius norm falls below 1e-12 * ||G||_F.
template <typename Derived>
EigenDecomposition<typename Derived::Scalar> symmetric_eigen(const Eigen::MatrixBase<Derived>& g) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (g.rows() != g.cols()) throw DomainError("symmetric_eigen: matrix is not square");
  const Eigen::Index n = g.rows();

  Matrix a = g;
  const Scalar norm = a.norm();
  if ((a - a.transpose()).norm() > Scalar(1e-9) * std::max(norm, Scalar(1)))
    throw DomainError("symmetric_eigen: matrix is not symmetric");
  a = (a + a.transpose()) / Scalar(2);

  Matrix v = Matrix::Identity(n, n);
  const Scalar tol = Scalar(1e-12) * norm;
  auto off_norm = [&] {
    Scalar s = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += 2 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (; off_norm() > tol; ++sweep) {
    if (sweep == kJacobiSweeps) throw NumericalError("symmetric_eigen: no convergence within the sweep budget");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == Scalar(0)) continue;
        Eigen::JacobiRotation<Scalar> rot;
        rot.makeJacobi(a, p, q);
        a.applyOnTheLeft(p, q, rot.adjoint());
        a.applyOnTheRight(p, q, rot);
        a(p, q) = a(q, p) = Scalar(0);
        v.applyOnTheRight(p, q, rot);
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });

  EigenDecomposition<Scalar> out;
  out.eigenvalues.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues(k) = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  out.sweeps = sweep;
  return out;
}

/// Cumulative ratios at or above this are recorded as exactly 1.
inline constexpr double kFullRatioTolerance = 1e-9;

template <typename Scalar = double>
struct LayerSpectrum {
  std::vector<Scalar> eigenvalues;       // descending, clamped at 0
  Scalar total = 0;                      // sum of eigenvalues
  std::vector<Scalar> cumulative_ratio;  // [k] covers the first k+1 eigenvalues

  std::int64_t size() const { return static_cast<std::int64_t>(eigenvalues.size()); }

  /// Fraction of energy covered by the first d eigenvalues (1 <= d <= N).
  Scalar ratio_at(std::int64_t d) const { return cumulative_ratio.at(static_cast<std::size_t>(d - 1)); }

  bool has_energy() const { return total > Scalar(1e-12) * static_cast<Scalar>(size()); }

  /// Builds ratios from descending, non-negative eigenvalues.
  static LayerSpectrum from_eigenvalues(std::vector<Scalar> values) {
    if (values.empty()) throw DomainError("spectrum needs at least one eigenvalue");
    LayerSpectrum s;
    s.eigenvalues = std::move(values);
    for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) {
      if (s.eigenvalues[i] < 0) throw DomainError("spectrum eigenvalues must be non-negative");
      if (i > 0 && s.eigenvalues[i] > s.eigenvalues[i - 1]) throw DomainError("spectrum must be sorted descending");
    }
    s.total = std::accumulate(s.eigenvalues.begin(), s.eigenvalues.end(), Scalar(0));
    s.cumulative_ratio.resize(s.eigenvalues.size());
    Scalar running = 0;
    for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) {
      running += s.eigenvalues[i];
      Scalar r = s.total > 0 ? running / s.total : Scalar(1);
      if (r >= Scalar(1 - kFullRatioTolerance)) r = Scalar(1);
      s.cumulative_ratio[i] = i > 0 ? std::max(r, s.cumulative_ratio[i - 1]) : r;
    }
    s.cumulative_ratio.back() = Scalar(1);
    return s;
  }
};

/// Eigenvalues of the Gram matrix of a centered filter matrix.
template <typename Scalar>
LayerSpectrum<Scalar> gram_spectrum(const FilterMatrix<Scalar>& m) {
  if (!m.centered) throw DomainError("gram_spectrum: filter matrix must be centered");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram = m.values * m.values.transpose();
  const auto eig = symmetric_eigen(gram);
  const Scalar trace = gram.trace();
  std::vector<Scalar> values(static_cast<std::size_t>(eig.eigenvalues.size()));
  for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
    Scalar lambda = eig.eigenvalues(k);
    if (lambda < 0) {
      if (lambda < Scalar(-1e-8) * trace) throw NumericalError("gram_spectrum: negative eigenvalue beyond floor");
      lambda = 0;
    }
    values[static_cast<std::size_t>(k)] = lambda;
  }
  return LayerSpectrum<Scalar>::from_eigenvalues(std::move(values));
}

/// Smallest d >= 1 whose cumulative ratio reaches beta; 1 for zero-energy layers.
template <typename Scalar>
std::int64_t reserved_count(const LayerSpectrum<Scalar>& s, double beta) {
  if (!s.has_energy()) return 1;
  const auto it = std::lower_bound(s.cumulative_ratio.begin(), s.cumulative_ratio.end(), static_cast<Scalar>(beta));
  if (it == s.cumulative_ratio.end()) return s.size();
  return static_cast<std::int64_t>(it - s.cumulative_ratio.begin()) + 1;
}

/// Energy left out by the leading d components: the sum of the trailing eigenvalues.
template <typename Scalar>
Scalar reconstruction_error(const LayerSpectrum<Scalar>& s, std::int64_t d) {
  if (d < 1 || d > s.size()) throw DomainError("reconstruction_error: d out of range");
  Scalar tail = 0;
  for (auto k = static_cast<std::size_t>(d); k < s.eigenvalues.size(); ++k) tail += s.eigenvalues[k];
  return tail;
}

template <typename Scalar>
Scalar reconstruction_error(const FilterMatrix<Scalar>& m, std::int64_t d) {
  return reconstruction_error(gram_spectrum(m), d);
}

/// Convenience: weight tensor -> centered filter matrix -> spectrum.
template <typename Scalar = double>
LayerSpectrum<Scalar> weight_spectrum(const TensorRecord& weight) {
  return gram_spectrum(center(build_filter_matrix<Scalar>(weight)));
}

}  // namespace snf

#endif  // SNF_SPECTRUM_HPP
