#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace bifctl {

using Vector = Eigen::VectorXd;

/// Compressed-row real sparse matrix.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// Builds a square matrix from triplets; duplicates are summed and the
/// result is compressed (sorted column indices, no duplicates).
SparseMatrix from_triplets(Eigen::Index n, const std::vector<Triplet>& triplets);

/// Sparse LU factorization (fill-reducing column ordering), reusable across
/// right-hand sides. Solves are read-only and may run concurrently.
///
/// Throws SingularMatrix when a pivot is exactly zero or the factors
/// contain non-finite values.
class SparseLu {
 public:
  explicit SparseLu(const SparseMatrix& a);
  ~SparseLu();
  SparseLu(SparseLu&&) noexcept;
  SparseLu& operator=(SparseLu&&) noexcept;

  Vector solve(const Vector& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  /// Solves A^T x = b with the same factorization.
  Vector solve_transpose(const Vector& b) const;

  Eigen::Index size() const { return n_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Eigen::Index n_ = 0;
};

/// One-shot factorize and solve.
Vector factor_solve(const SparseMatrix& a, const Vector& b);

struct EigenPair {
  double value = 0.0;
  Vector vector;
};

struct EigenOptions {
  int max_iterations = 500;
  double tolerance = 1e-8;
};

/// The n solutions of A x = mu B x with smallest |mu|, sorted by |mu|
/// ascending. A symmetric, B symmetric positive definite. Vectors are
/// B-normalized. Uses shift-invert subspace iteration at shift 0 with
/// B-orthonormalization and Rayleigh-Ritz projection.
///
/// Throws ConvergenceError if some residual ||A x - mu B x|| stays above
/// tolerance * ||x|| after max_iterations.
std::vector<EigenPair> smallest_eigenpairs(const SparseMatrix& a, const SparseMatrix& b, int n,
                                           const EigenOptions& options = {});

}  // namespace bifctl
