#pragma once

#include <vector>

#include "bifctl/mesh.hpp"
#include "bifctl/sparse.hpp"

namespace bifctl {

/// Nodal coefficients of a piecewise-linear function, one per mesh vertex.
using Field = Vector;

/// Diffusion coefficient of -0.25 lap(u) - lambda u - u^3 + u^5.
inline constexpr double kDiffusion = 0.25;

/// Splits vertices into Dirichlet-constrained (on `outer` boundary edges)
/// and free degrees of freedom.
class DofMap {
 public:
  explicit DofMap(const TriMesh& mesh);

  int num_vertices() const { return static_cast<int>(free_index_.size()); }
  int num_free() const { return static_cast<int>(free_vertices_.size()); }
  bool is_dirichlet(int vertex) const { return free_index_[vertex] < 0; }
  int free_index(int vertex) const { return free_index_[vertex]; }
  const std::vector<int>& free_vertices() const { return free_vertices_; }

  Vector restrict_vector(const Vector& full) const;
  Vector prolong(const Vector& free) const;
  SparseMatrix restrict_matrix(const SparseMatrix& full) const;

 private:
  std::vector<int> free_index_;
  std::vector<int> free_vertices_;
};

/// Mass and stiffness over the full vertex set (no boundary conditions).
struct GramMatrices {
  SparseMatrix mass;
  SparseMatrix stiffness;
};

GramMatrices gram_matrices(const TriMesh& mesh);

/// P1 discretization of the cubic-quintic Allen-Cahn operator
///
///   F(u, lambda) = -0.25 lap(u) - lambda u - u^3 + u^5,  u = 0 on the boundary,
///
/// and the derivatives needed by Newton, Moore-Spence and the shape gradient.
/// Vectors and matrices are full-length (one entry per vertex); Dirichlet
/// rows hold identities so operators stay symmetric where the weak form is.
/// The cubic and quintic terms use a 7-point degree-5 triangle rule; the
/// linear terms use closed-form element matrices.
class AllenCahn {
 public:
  explicit AllenCahn(TriMesh mesh);

  const TriMesh& mesh() const { return mesh_; }
  const DofMap& dofs() const { return dofs_; }
  const SparseMatrix& mass() const { return gram_.mass; }
  const SparseMatrix& stiffness() const { return gram_.stiffness; }
  /// K + M, the Gram matrix of the full H1 inner product.
  const SparseMatrix& h1_gram() const { return h1_; }

  Vector residual(const Field& u, double lambda) const;
  SparseMatrix jacobian_u(const Field& u, double lambda) const;
  Vector residual_lambda(const Field& u) const;
  /// d/du of jacobian_u(u) * phi, Dirichlet rows zero.
  SparseMatrix second_derivative_matrix(const Field& u, const Field& phi) const;
  Vector mixed_derivative_action(const Field& phi) const;

  double h1_inner(const Field& a, const Field& b) const;
  double h1_norm(const Field& a) const;

  /// Gradient with respect to vertex coordinates of adjoint^T R_MS, where
  /// R_MS is the stacked Moore-Spence residual on free dofs
  /// [F(u, lambda); F_u(u, lambda) phi; ||phi||_U^2 - 1]. The adjoint is
  /// ordered (psi_u, psi_phi, psi_l) with length 2 * num_free + 1. Entries
  /// at fixed vertices are zero.
  VertexField coordinate_gradient(const Field& u, double lambda, const Field& phi,
                                  const Vector& adjoint) const;

 private:
  void check_size(const Vector& v, const char* what) const;

  TriMesh mesh_;
  DofMap dofs_;
  GramMatrices gram_;
  SparseMatrix h1_;
};

// Free-function forms. Each call rebuilds the discretization; loops should
// hold an AllenCahn instead.
Vector residual(const TriMesh& mesh, const Field& u, double lambda);
SparseMatrix jacobian_u(const TriMesh& mesh, const Field& u, double lambda);
Vector residual_lambda(const TriMesh& mesh, const Field& u);
SparseMatrix second_derivative_matrix(const TriMesh& mesh, const Field& u, const Field& phi);
Vector mixed_derivative_action(const TriMesh& mesh, const Field& phi);
double h1_inner(const TriMesh& mesh, const Field& a, const Field& b);
double h1_norm(const TriMesh& mesh, const Field& a);
VertexField coordinate_gradient(const TriMesh& mesh, const Field& u, double lambda,
                                const Field& phi, const Vector& adjoint);

/// Nodal interpolant of f.
template <typename F>
Field interpolate(const TriMesh& mesh, F&& f) {
  Field out(static_cast<Eigen::Index>(mesh.num_vertices()));
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    out(static_cast<Eigen::Index>(v)) = f(mesh.vertices()[v]);
  }
  return out;
}

/// Value of the piecewise-linear field at point p; throws InvalidArgument if
/// p lies outside the mesh.
double evaluate_at(const TriMesh& mesh, const Field& u, Vec2 p);

/// Symmetric 7-point rule exact for degree-5 polynomials on triangles.
/// Barycentric coordinates and weights (weights sum to one).
struct QuadraturePoint {
  double l0, l1, l2, weight;
};
const std::vector<QuadraturePoint>& degree5_rule();

}  // namespace bifctl
