#include "bifctl/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>

#include "bifctl/error.hpp"

namespace bifctl {

SparseMatrix from_triplets(Eigen::Index n, const std::vector<Triplet>& triplets) {
  SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

struct SparseLu::Impl {
  using ColMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;
  Eigen::SparseLU<ColMatrix, Eigen::COLAMDOrdering<int>> lu;
};

SparseLu::SparseLu(const SparseMatrix& a) : impl_(std::make_unique<Impl>()), n_(a.rows()) {
  if (a.rows() != a.cols()) throw InvalidArgument("SparseLu: matrix is not square");
  for (Eigen::Index r = 0; r < a.outerSize(); ++r) {
    bool any = false;
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) {
      if (!std::isfinite(it.value())) {
        throw InvalidArgument("SparseLu: non-finite entry in row " + std::to_string(r));
      }
      any = any || it.value() != 0.0;
    }
    if (!any) throw SingularMatrix("SparseLu: row " + std::to_string(r) + " is zero", r);
  }
  Impl::ColMatrix col = a;
  col.makeCompressed();
  impl_->lu.analyzePattern(col);
  impl_->lu.factorize(col);
  if (impl_->lu.info() != Eigen::Success) {
    const std::string msg = impl_->lu.lastErrorMessage();
    // Eigen reports the failing column as "... column N" in its message.
    long row = -1;
    const auto pos = msg.find_last_of(' ');
    if (pos != std::string::npos) {
      try {
        row = std::stol(msg.substr(pos + 1));
      } catch (...) {
      }
    }
    throw SingularMatrix("SparseLu: numerically singular pivot: " + msg, row);
  }
}

SparseLu::~SparseLu() = default;
SparseLu::SparseLu(SparseLu&&) noexcept = default;
SparseLu& SparseLu::operator=(SparseLu&&) noexcept = default;

Vector SparseLu::solve(const Vector& b) const {
  if (b.size() != n_) throw InvalidArgument("SparseLu::solve: size mismatch");
  Vector x = impl_->lu.solve(b);
  if (!x.allFinite()) throw SingularMatrix("SparseLu::solve: non-finite solution", -1);
  return x;
}

Eigen::MatrixXd SparseLu::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != n_) throw InvalidArgument("SparseLu::solve: size mismatch");
  Eigen::MatrixXd x = impl_->lu.solve(b);
  if (!x.allFinite()) throw SingularMatrix("SparseLu::solve: non-finite solution", -1);
  return x;
}

Vector SparseLu::solve_transpose(const Vector& b) const {
  if (b.size() != n_) throw InvalidArgument("SparseLu::solve_transpose: size mismatch");
  Vector x = impl_->lu.transpose().solve(b);
  if (!x.allFinite()) throw SingularMatrix("SparseLu::solve_transpose: non-finite solution", -1);
  return x;
}

Vector factor_solve(const SparseMatrix& a, const Vector& b) { return SparseLu(a).solve(b); }

std::vector<EigenPair> smallest_eigenpairs(const SparseMatrix& a, const SparseMatrix& b, int n,
                                           const EigenOptions& options) {
  const Eigen::Index dim = a.rows();
  if (n < 1) throw InvalidArgument("smallest_eigenpairs: n must be at least 1");
  if (a.cols() != dim || b.rows() != dim || b.cols() != dim) {
    throw InvalidArgument("smallest_eigenpairs: size mismatch");
  }
  if (n > dim) throw InvalidArgument("smallest_eigenpairs: n exceeds problem dimension");

  const Eigen::Index block = std::min<Eigen::Index>(dim, std::max(2 * n, n + 4));
  const SparseLu lu(a);

  // Deterministic start block: smooth-ish pseudo-random columns.
  Eigen::MatrixXd x(dim, block);
  std::uint64_t state = 0x9e3779b97f4a7c15ULL;
  for (Eigen::Index j = 0; j < block; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      state = state * 6364136223846793005ULL + 1442695040888963407ULL;
      x(i, j) = static_cast<double>(state >> 11) / 9007199254740992.0 - 0.5;
    }
  }

  Eigen::VectorXd values(block);
  Eigen::VectorXd residuals = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> order(block);
  Eigen::MatrixXd ritz;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Eigen::MatrixXd y = lu.solve(Eigen::MatrixXd(b * x));

    // Rayleigh-Ritz on span(y).
    const Eigen::MatrixXd ay = a * y;
    const Eigen::MatrixXd by = b * y;
    Eigen::MatrixXd ap = y.transpose() * ay;
    Eigen::MatrixXd bp = y.transpose() * by;
    ap = 0.5 * (ap + ap.transpose()).eval();
    bp = 0.5 * (bp + bp.transpose()).eval();

    // B-orthonormalize the basis first to keep the projected problem well conditioned.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> bsolve(bp);
    const Eigen::VectorXd bvals = bsolve.eigenvalues();
    const double bmax = bvals.maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < bvals.size(); ++k) {
      if (bvals(k) > 1e-14 * bmax) keep.push_back(k);
    }
    Eigen::MatrixXd q(block, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      q.col(k) = bsolve.eigenvectors().col(keep[k]) / std::sqrt(bvals(keep[k]));
    }
    Eigen::MatrixXd small = q.transpose() * ap * q;
    small = 0.5 * (small + small.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> rr(small);
    const Eigen::Index found = rr.eigenvalues().size();
    if (found < n) throw ConvergenceError("smallest_eigenpairs: subspace collapsed");

    order.resize(found);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
      return std::abs(rr.eigenvalues()(i)) < std::abs(rr.eigenvalues()(j));
    });
    const Eigen::MatrixXd coeffs = q * rr.eigenvectors();
    ritz.resize(dim, found);
    values.resize(found);
    for (Eigen::Index k = 0; k < found; ++k) {
      ritz.col(k) = y * coeffs.col(order[k]);
      values(k) = rr.eigenvalues()(order[k]);
    }

    bool converged = true;
    for (int k = 0; k < n; ++k) {
      const Vector r = a * ritz.col(k) - values(k) * (b * ritz.col(k));
      residuals(k) = r.norm() / ritz.col(k).norm();
      converged = converged && residuals(k) <= options.tolerance;
    }
    if (converged) {
      std::vector<EigenPair> pairs;
      for (int k = 0; k < n; ++k) pairs.push_back({values(k), ritz.col(k)});
      return pairs;
    }
    x = ritz;
    if (x.cols() < block) {
      // Refill rank-deficient columns with fresh directions.
      Eigen::MatrixXd refill(dim, block);
      refill.leftCols(x.cols()) = x;
      for (Eigen::Index j = x.cols(); j < block; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) {
          state = state * 6364136223846793005ULL + 1442695040888963407ULL;
          refill(i, j) = static_cast<double>(state >> 11) / 9007199254740992.0 - 0.5;
        }
      }
      x = refill;
    }
  }
  std::ostringstream msg;
  msg << "smallest_eigenpairs: no convergence after " << options.max_iterations
      << " iterations; residuals:";
  for (int k = 0; k < n; ++k) msg << ' ' << residuals(k);
  throw ConvergenceError(msg.str());
}

}  // namespace bifctl
