#include "bifctl/assembly.hpp"

#include <array>
#include <cmath>
#include <string>

#include "bifctl/error.hpp"

namespace bifctl {

namespace {

using Mat2 = Eigen::Matrix2d;
using Vec2d = Eigen::Vector2d;

// Reference gradients of the barycentric shape functions L0 = 1 - xi - eta,
// L1 = xi, L2 = eta.
const std::array<Vec2d, 3> kRefGrad = {Vec2d(-1.0, -1.0), Vec2d(1.0, 0.0), Vec2d(0.0, 1.0)};

struct Element {
  std::array<int, 3> v;
  double det;  // twice the area
  Mat2 inv;    // inverse of the affine-map Jacobian
  std::array<Vec2d, 3> grad;
};

Element make_element(const TriMesh& mesh, std::size_t t) {
  Element e;
  e.v = mesh.triangles()[t];
  const Vec2& x0 = mesh.vertices()[e.v[0]];
  const Vec2& x1 = mesh.vertices()[e.v[1]];
  const Vec2& x2 = mesh.vertices()[e.v[2]];
  Mat2 jac;
  jac << x1.x - x0.x, x2.x - x0.x, x1.y - x0.y, x2.y - x0.y;
  e.det = jac.determinant();
  e.inv = jac.inverse();
  for (int a = 0; a < 3; ++a) e.grad[a] = e.inv.transpose() * kRefGrad[a];
  return e;
}

std::array<double, 3> bary(const QuadraturePoint& q) { return {q.l0, q.l1, q.l2}; }

std::array<double, 3> gather(const Vector& f, const Element& e) {
  return {f(e.v[0]), f(e.v[1]), f(e.v[2])};
}

double at_point(const std::array<double, 3>& values, const std::array<double, 3>& l) {
  return values[0] * l[0] + values[1] * l[1] + values[2] * l[2];
}

}  // namespace

const std::vector<QuadraturePoint>& degree5_rule() {
  static const std::vector<QuadraturePoint> rule = [] {
    const double a1 = 0.059715871789770, b1 = 0.470142064105115, w1 = 0.132394152788506;
    const double a2 = 0.797426985353087, b2 = 0.101286507323456, w2 = 0.125939180544827;
    return std::vector<QuadraturePoint>{
        {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225},
        {a1, b1, b1, w1}, {b1, a1, b1, w1}, {b1, b1, a1, w1},
        {a2, b2, b2, w2}, {b2, a2, b2, w2}, {b2, b2, a2, w2},
    };
  }();
  return rule;
}

// ---------------------------------------------------------------------------

DofMap::DofMap(const TriMesh& mesh) : free_index_(mesh.num_vertices(), -1) {
  const std::vector<bool> boundary = mesh.boundary_mask("outer");
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    if (boundary[v]) continue;
    free_index_[v] = static_cast<int>(free_vertices_.size());
    free_vertices_.push_back(static_cast<int>(v));
  }
}

Vector DofMap::restrict_vector(const Vector& full) const {
  if (full.size() != num_vertices()) throw InvalidArgument("DofMap::restrict_vector: size mismatch");
  Vector out(num_free());
  for (int i = 0; i < num_free(); ++i) out(i) = full(free_vertices_[i]);
  return out;
}

Vector DofMap::prolong(const Vector& free) const {
  if (free.size() != num_free()) throw InvalidArgument("DofMap::prolong: size mismatch");
  Vector out = Vector::Zero(num_vertices());
  for (int i = 0; i < num_free(); ++i) out(free_vertices_[i]) = free(i);
  return out;
}

SparseMatrix DofMap::restrict_matrix(const SparseMatrix& full) const {
  if (full.rows() != num_vertices() || full.cols() != num_vertices()) {
    throw InvalidArgument("DofMap::restrict_matrix: size mismatch");
  }
  std::vector<Triplet> trips;
  trips.reserve(full.nonZeros());
  for (int i = 0; i < num_free(); ++i) {
    for (SparseMatrix::InnerIterator it(full, free_vertices_[i]); it; ++it) {
      const int j = free_index_[it.col()];
      if (j >= 0) trips.emplace_back(i, j, it.value());
    }
  }
  return from_triplets(num_free(), trips);
}

// ---------------------------------------------------------------------------

GramMatrices gram_matrices(const TriMesh& mesh) {
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  std::vector<Triplet> mass, stiff;
  mass.reserve(9 * mesh.num_triangles());
  stiff.reserve(9 * mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Element e = make_element(mesh, t);
    const double area = 0.5 * e.det;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        mass.emplace_back(e.v[a], e.v[b], area / 12.0 * (a == b ? 2.0 : 1.0));
        stiff.emplace_back(e.v[a], e.v[b], area * e.grad[a].dot(e.grad[b]));
      }
    }
  }
  return {from_triplets(n, mass), from_triplets(n, stiff)};
}

AllenCahn::AllenCahn(TriMesh mesh)
    : mesh_(std::move(mesh)), dofs_(mesh_), gram_(gram_matrices(mesh_)) {
  h1_ = gram_.stiffness + gram_.mass;
  h1_.makeCompressed();
}

void AllenCahn::check_size(const Vector& v, const char* what) const {
  if (v.size() != static_cast<Eigen::Index>(mesh_.num_vertices())) {
    throw InvalidArgument(std::string(what) + ": field length " + std::to_string(v.size()) +
                          " does not match vertex count " + std::to_string(mesh_.num_vertices()));
  }
}

Vector AllenCahn::residual(const Field& u, double lambda) const {
  check_size(u, "residual");
  Vector r = Vector::Zero(u.size());
  const auto& rule = degree5_rule();
  for (std::size_t t = 0; t < mesh_.num_triangles(); ++t) {
    const Element e = make_element(mesh_, t);
    const double area = 0.5 * e.det;
    const auto ue = gather(u, e);
    const double usum = ue[0] + ue[1] + ue[2];
    std::array<double, 3> local{};
    for (int a = 0; a < 3; ++a) {
      double grad_term = 0.0;
      for (int b = 0; b < 3; ++b) grad_term += e.grad[a].dot(e.grad[b]) * ue[b];
      local[a] = kDiffusion * area * grad_term - lambda * area / 12.0 * (usum + ue[a]);
    }
    for (const QuadraturePoint& q : rule) {
      const auto l = bary(q);
      const double uq = at_point(ue, l);
      const double u3 = uq * uq * uq;
      const double f = -u3 + u3 * uq * uq;
      for (int a = 0; a < 3; ++a) local[a] += area * q.weight * f * l[a];
    }
    for (int a = 0; a < 3; ++a) r(e.v[a]) += local[a];
  }
  for (int v = 0; v < dofs_.num_vertices(); ++v) {
    if (dofs_.is_dirichlet(v)) r(v) = u(v);
  }
  return r;
}

SparseMatrix AllenCahn::jacobian_u(const Field& u, double lambda) const {
  check_size(u, "jacobian_u");
  std::vector<Triplet> trips;
  trips.reserve(9 * mesh_.num_triangles() + mesh_.num_vertices());
  const auto& rule = degree5_rule();
  for (std::size_t t = 0; t < mesh_.num_triangles(); ++t) {
    const Element e = make_element(mesh_, t);
    const double area = 0.5 * e.det;
    const auto ue = gather(u, e);
    double local[3][3];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        local[a][b] = kDiffusion * area * e.grad[a].dot(e.grad[b]) -
                      lambda * area / 12.0 * (a == b ? 2.0 : 1.0);
      }
    }
    for (const QuadraturePoint& q : rule) {
      const auto l = bary(q);
      const double uq = at_point(ue, l);
      const double u2 = uq * uq;
      const double df = -3.0 * u2 + 5.0 * u2 * u2;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) local[a][b] += area * q.weight * df * l[a] * l[b];
      }
    }
    for (int a = 0; a < 3; ++a) {
      if (dofs_.is_dirichlet(e.v[a])) continue;
      for (int b = 0; b < 3; ++b) {
        if (dofs_.is_dirichlet(e.v[b])) continue;
        trips.emplace_back(e.v[a], e.v[b], local[a][b]);
      }
    }
  }
  for (int v = 0; v < dofs_.num_vertices(); ++v) {
    if (dofs_.is_dirichlet(v)) trips.emplace_back(v, v, 1.0);
  }
  return from_triplets(u.size(), trips);
}

Vector AllenCahn::residual_lambda(const Field& u) const {
  check_size(u, "residual_lambda");
  Vector r = -(gram_.mass * u);
  for (int v = 0; v < dofs_.num_vertices(); ++v) {
    if (dofs_.is_dirichlet(v)) r(v) = 0.0;
  }
  return r;
}

SparseMatrix AllenCahn::second_derivative_matrix(const Field& u, const Field& phi) const {
  check_size(u, "second_derivative_matrix");
  check_size(phi, "second_derivative_matrix");
  std::vector<Triplet> trips;
  trips.reserve(9 * mesh_.num_triangles());
  const auto& rule = degree5_rule();
  for (std::size_t t = 0; t < mesh_.num_triangles(); ++t) {
    const Element e = make_element(mesh_, t);
    const double area = 0.5 * e.det;
    const auto ue = gather(u, e);
    auto pe = gather(phi, e);
    for (int a = 0; a < 3; ++a) {
      if (dofs_.is_dirichlet(e.v[a])) pe[a] = 0.0;
    }
    double local[3][3] = {};
    for (const QuadraturePoint& q : rule) {
      const auto l = bary(q);
      const double uq = at_point(ue, l);
      const double pq = at_point(pe, l);
      const double d2f = -6.0 * uq + 20.0 * uq * uq * uq;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) local[a][b] += area * q.weight * d2f * pq * l[a] * l[b];
      }
    }
    for (int a = 0; a < 3; ++a) {
      if (dofs_.is_dirichlet(e.v[a])) continue;
      for (int b = 0; b < 3; ++b) trips.emplace_back(e.v[a], e.v[b], local[a][b]);
    }
  }
  return from_triplets(u.size(), trips);
}

Vector AllenCahn::mixed_derivative_action(const Field& phi) const {
  check_size(phi, "mixed_derivative_action");
  return residual_lambda(phi);
}

double AllenCahn::h1_inner(const Field& a, const Field& b) const {
  check_size(a, "h1_inner");
  check_size(b, "h1_inner");
  return a.dot(h1_ * b);
}

double AllenCahn::h1_norm(const Field& a) const { return std::sqrt(std::max(0.0, h1_inner(a, a))); }

VertexField AllenCahn::coordinate_gradient(const Field& u, double lambda, const Field& phi,
                                           const Vector& adjoint) const {
  check_size(u, "coordinate_gradient");
  check_size(phi, "coordinate_gradient");
  const int nf = dofs_.num_free();
  if (adjoint.size() != 2 * nf + 1) {
    throw InvalidArgument("coordinate_gradient: adjoint length must be 2 * num_free + 1");
  }
  const Vector adj_u = dofs_.prolong(adjoint.head(nf));
  const Vector adj_phi = dofs_.prolong(adjoint.segment(nf, nf));
  const double adj_norm = adjoint(2 * nf);
  Vector phi_free = phi;
  for (int v = 0; v < dofs_.num_vertices(); ++v) {
    if (dofs_.is_dirichlet(v)) phi_free(v) = 0.0;
  }

  VertexField grad(mesh_.num_vertices());
  const auto& rule = degree5_rule();
  for (std::size_t t = 0; t < mesh_.num_triangles(); ++t) {
    const Element e = make_element(mesh_, t);
    const auto ue = gather(u, e);
    const auto pe = gather(phi_free, e);
    const auto au = gather(adj_u, e);
    const auto ap = gather(adj_phi, e);

    // The element's contribution to adjoint^T R is
    //   e(X) = 1/2 tr(S Q) + det * c,   S = det * inv * inv^T,
    // where Q collects the stiffness couplings in reference gradients and c
    // every term that scales with the element area only.
    Vec2d gu = Vec2d::Zero(), gp = Vec2d::Zero(), gau = Vec2d::Zero(), gap = Vec2d::Zero();
    for (int a = 0; a < 3; ++a) {
      gu += ue[a] * kRefGrad[a];
      gp += pe[a] * kRefGrad[a];
      gau += au[a] * kRefGrad[a];
      gap += ap[a] * kRefGrad[a];
    }
    const Mat2 q = kDiffusion * gu * gau.transpose() + kDiffusion * gp * gap.transpose() +
                   adj_norm * gp * gp.transpose();

    auto ref_mass = [](const std::array<double, 3>& x, const std::array<double, 3>& y) {
      const double sx = x[0] + x[1] + x[2];
      double s = 0.0;
      for (int a = 0; a < 3; ++a) s += y[a] * (sx + x[a]);
      return s / 24.0;
    };
    double c = -lambda * ref_mass(ue, au) - lambda * ref_mass(pe, ap) + adj_norm * ref_mass(pe, pe);
    for (const QuadraturePoint& qp : rule) {
      const auto l = bary(qp);
      const double uq = at_point(ue, l);
      const double pq = at_point(pe, l);
      const double u2 = uq * uq;
      const double f = -u2 * uq + u2 * u2 * uq;
      const double df = -3.0 * u2 + 5.0 * u2 * u2;
      c += 0.5 * qp.weight * (f * at_point(au, l) + df * pq * at_point(ap, l));
    }

    const Mat2& g = e.inv;
    const Mat2 ggt = g * g.transpose();
    const Mat2 z = e.det * (0.5 * ((ggt * q).trace() * g - ggt * q * g - ggt * q.transpose() * g) +
                            c * g);
    const Mat2 d = z.transpose();  // d(i, j) = de / dF(i, j)
    const Vec2 d1{d(0, 0), d(1, 0)};
    const Vec2 d2{d(0, 1), d(1, 1)};
    grad[e.v[1]] += d1;
    grad[e.v[2]] += d2;
    grad[e.v[0]] -= d1 + d2;
  }
  for (std::size_t v = 0; v < grad.size(); ++v) {
    if (mesh_.fixed_vertices()[v]) grad[v] = {0.0, 0.0};
  }
  return grad;
}

// ---------------------------------------------------------------------------

Vector residual(const TriMesh& mesh, const Field& u, double lambda) {
  return AllenCahn(mesh).residual(u, lambda);
}
SparseMatrix jacobian_u(const TriMesh& mesh, const Field& u, double lambda) {
  return AllenCahn(mesh).jacobian_u(u, lambda);
}
Vector residual_lambda(const TriMesh& mesh, const Field& u) {
  return AllenCahn(mesh).residual_lambda(u);
}
SparseMatrix second_derivative_matrix(const TriMesh& mesh, const Field& u, const Field& phi) {
  return AllenCahn(mesh).second_derivative_matrix(u, phi);
}
Vector mixed_derivative_action(const TriMesh& mesh, const Field& phi) {
  return AllenCahn(mesh).mixed_derivative_action(phi);
}
double h1_inner(const TriMesh& mesh, const Field& a, const Field& b) {
  return AllenCahn(mesh).h1_inner(a, b);
}
double h1_norm(const TriMesh& mesh, const Field& a) { return AllenCahn(mesh).h1_norm(a); }
VertexField coordinate_gradient(const TriMesh& mesh, const Field& u, double lambda,
                                const Field& phi, const Vector& adjoint) {
  return AllenCahn(mesh).coordinate_gradient(u, lambda, phi, adjoint);
}

double evaluate_at(const TriMesh& mesh, const Field& u, Vec2 p) {
  if (u.size() != static_cast<Eigen::Index>(mesh.num_vertices())) {
    throw InvalidArgument("evaluate_at: size mismatch");
  }
  const auto& x = mesh.vertices();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Triangle& tri = mesh.triangles()[t];
    const double area2 = 2.0 * mesh.signed_area(t);
    const double l1 = cross(p - x[tri[0]], x[tri[2]] - x[tri[0]]) / area2;
    const double l2 = cross(x[tri[1]] - x[tri[0]], p - x[tri[0]]) / area2;
    const double l0 = 1.0 - l1 - l2;
    const double tol = -1e-12;
    if (l0 >= tol && l1 >= tol && l2 >= tol) {
      return l0 * u(tri[0]) + l1 * u(tri[1]) + l2 * u(tri[2]);
    }
  }
  throw InvalidArgument("evaluate_at: point lies outside the mesh");
}

}  // namespace bifctl
