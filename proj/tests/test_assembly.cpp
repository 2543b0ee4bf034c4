#include <doctest.h>

#include <cmath>
#include <random>

#include "bifctl/assembly.hpp"
#include "bifctl/error.hpp"

using namespace bifctl;

namespace {

constexpr double kJ01 = 2.404825557695773;

Field smooth_field(const AllenCahn& p, double amp, double kx, double ky) {
  Field u = interpolate(p.mesh(), [&](Vec2 x) {
    return amp * (1.0 - x.x * x.x - x.y * x.y) * (1.0 + 0.3 * std::sin(kx * x.x) + 0.2 * std::cos(ky * x.y));
  });
  for (int v = 0; v < p.dofs().num_vertices(); ++v) {
    if (p.dofs().is_dirichlet(v)) u(v) = 0.0;
  }
  return u;
}

Field random_free_field(const AllenCahn& p, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Field f(p.dofs().num_vertices());
  for (int v = 0; v < f.size(); ++v) f(v) = p.dofs().is_dirichlet(v) ? 0.0 : u(rng);
  return f;
}

VertexField smooth_direction(const TriMesh& mesh, std::mt19937& rng) {
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  const double a = c(rng), b = c(rng), d = c(rng), e = c(rng), f = c(rng), g = c(rng);
  VertexField w(mesh.num_vertices());
  for (std::size_t v = 0; v < w.size(); ++v) {
    const Vec2 x = mesh.vertices()[v];
    w[v] = {a * std::sin(2.0 * x.y + b), d * std::cos(1.5 * x.x + e) + f * x.x * g};
  }
  return w;
}

TriMesh moved(const TriMesh& mesh, const VertexField& w, double s) {
  VertexField d = w;
  for (Vec2& v : d) v *= s;
  return apply_displacement(mesh, d);
}

// Stacked Moore-Spence residual assembled straight from the operator pieces.
Vector ms_stack(const AllenCahn& p, const Field& u, double lambda, const Field& phi) {
  const int n = p.dofs().num_free();
  Vector r(2 * n + 1);
  r.head(n) = p.dofs().restrict_vector(p.residual(u, lambda));
  r.segment(n, n) = p.dofs().restrict_vector(p.jacobian_u(u, lambda) * phi);
  r(2 * n) = p.h1_inner(phi, phi) - 1.0;
  return r;
}

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

}  // namespace

TEST_CASE("degree-5 rule integrates monomials exactly") {
  const auto& rule = degree5_rule();
  REQUIRE(rule.size() == 7);
  double wsum = 0.0;
  for (const auto& q : rule) wsum += q.weight;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
  for (int a = 0; a <= 5; ++a) {
    for (int b = 0; a + b <= 5; ++b) {
      double quad = 0.0;
      for (const auto& q : rule) quad += 0.5 * q.weight * std::pow(q.l1, a) * std::pow(q.l2, b);
      const double exact = factorial(a) * factorial(b) / factorial(a + b + 2);
      CHECK(quad == doctest::Approx(exact).epsilon(1e-13));
    }
  }
}

TEST_CASE("gram matrices") {
  const TriMesh mesh = gen_unit_disk(0.05);
  const GramMatrices g = gram_matrices(mesh);
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(mesh.num_vertices()));
  CHECK(ones.dot(g.mass * ones) == doctest::Approx(mesh.area()).epsilon(1e-12));
  CHECK((g.stiffness * ones).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((Eigen::MatrixXd(g.mass.topLeftCorner(50, 50)) -
         Eigen::MatrixXd(g.mass.topLeftCorner(50, 50)).transpose())
            .norm() < 1e-15);

  // First Dirichlet eigenvalue of the Laplacian on the unit disk is j01^2.
  const AllenCahn p(mesh);
  const auto pairs = smallest_eigenpairs(p.dofs().restrict_matrix(p.stiffness()),
                                         p.dofs().restrict_matrix(p.mass()), 1);
  CHECK(std::abs(pairs[0].value - kJ01 * kJ01) / (kJ01 * kJ01) < 0.01);

  // For the M-normalized eigenvector the H1 norm squared is 1 + mu.
  const Field v = p.dofs().prolong(pairs[0].vector);
  CHECK(p.h1_inner(v, v) == doctest::Approx(1.0 + pairs[0].value).epsilon(1e-9));
  CHECK(std::abs(p.h1_inner(v, v) - (1.0 + kJ01 * kJ01)) / (1.0 + kJ01 * kJ01) < 0.01);
}

TEST_CASE("h1 inner product is symmetric and bilinear") {
  const AllenCahn p(gen_unit_disk(0.2));
  std::mt19937 rng(11);
  const Field a = random_free_field(p, rng), b = random_free_field(p, rng), c = random_free_field(p, rng);
  CHECK(p.h1_inner(Field::Zero(a.size()), a) == 0.0);
  CHECK(p.h1_inner(a, b) == doctest::Approx(p.h1_inner(b, a)).epsilon(1e-13));
  CHECK(p.h1_inner(Field(2.0 * a + c), b) ==
        doctest::Approx(2.0 * p.h1_inner(a, b) + p.h1_inner(c, b)).epsilon(1e-12));
  CHECK(p.h1_norm(a) == doctest::Approx(std::sqrt(p.h1_inner(a, a))));
}

TEST_CASE("trivial branch and oddness") {
  const AllenCahn p(gen_unit_disk(0.15));
  const Field zero = Field::Zero(p.dofs().num_vertices());
  for (double lambda : {-3.0, 0.0, 1.4, 17.0}) {
    CHECK(p.residual(zero, lambda).cwiseAbs().maxCoeff() == 0.0);
  }
  const Field u = smooth_field(p, 0.8, 2.0, 3.0);
  const double lambda = 2.3;
  CHECK((p.residual(Field(-u), lambda) + p.residual(u, lambda)).norm() < 1e-13);
  CHECK(Eigen::MatrixXd(p.jacobian_u(Field(-u), lambda) - p.jacobian_u(u, lambda)).norm() < 1e-13);
}

TEST_CASE("jacobian_u is the derivative of the residual") {
  const AllenCahn p(gen_unit_disk(0.15));
  std::mt19937 rng(5);
  const Field u = smooth_field(p, 1.1, 1.7, 2.1);
  const double lambda = 1.9;
  const Vector jv_dir = random_free_field(p, rng);
  const Vector exact = p.jacobian_u(u, lambda) * jv_dir;
  auto fd_err = [&](double eps) {
    const Vector fd = (p.residual(Field(u + eps * jv_dir), lambda) - p.residual(Field(u - eps * jv_dir), lambda)) / (2 * eps);
    return (fd - exact).norm();
  };
  const double e1 = fd_err(1e-2), e2 = fd_err(5e-3);
  CHECK(e1 / e2 > 3.5);
  CHECK(e1 / e2 < 4.5);
  CHECK(e2 < 1e-4 * exact.norm());
}

TEST_CASE("second_derivative_matrix is the derivative of jacobian_u times phi") {
  const AllenCahn p(gen_unit_disk(0.15));
  std::mt19937 rng(8);
  const Field u = smooth_field(p, 0.9, 1.3, 2.6);
  const Field phi = random_free_field(p, rng);
  const Field dir = random_free_field(p, rng);
  const double lambda = 0.7;
  const Vector exact = p.second_derivative_matrix(u, phi) * dir;
  auto fd_err = [&](double eps) {
    const Vector fd = (p.jacobian_u(Field(u + eps * dir), lambda) * phi -
                       p.jacobian_u(Field(u - eps * dir), lambda) * phi) /
                      (2 * eps);
    return (fd - exact).norm();
  };
  const double e1 = fd_err(1e-2), e2 = fd_err(5e-3);
  CHECK(e1 / e2 > 3.5);
  CHECK(e1 / e2 < 4.5);

  // Vanishes on the trivial branch.
  CHECK(Eigen::MatrixXd(p.second_derivative_matrix(Field::Zero(u.size()), phi)).norm() == 0.0);
}

TEST_CASE("lambda derivatives are exact") {
  const AllenCahn p(gen_unit_disk(0.2));
  std::mt19937 rng(9);
  const Field u = smooth_field(p, 1.0, 1.0, 1.0);
  const Field phi = random_free_field(p, rng);
  const double lambda = 2.0, eps = 0.5;
  const Vector fd = (p.residual(u, lambda + eps) - p.residual(u, lambda - eps)) / (2 * eps);
  CHECK((fd - p.residual_lambda(u)).norm() < 1e-12);

  const Vector fd2 = (p.jacobian_u(u, lambda + eps) * phi - p.jacobian_u(u, lambda - eps) * phi) / (2 * eps);
  CHECK((fd2 - p.mixed_derivative_action(phi)).norm() < 1e-12);
  CHECK((p.mixed_derivative_action(phi) - p.residual_lambda(phi)).norm() == 0.0);
  CHECK(p.mixed_derivative_action(Field::Zero(u.size())).norm() == 0.0);
}

TEST_CASE("coordinate_gradient matches central differences over vertex coordinates") {
  const TriMesh mesh = gen_unit_disk(0.2);
  const AllenCahn p(mesh);
  std::mt19937 rng(21);
  const Field u = smooth_field(p, 1.2, 2.0, 1.0);
  const Field phi = smooth_field(p, 0.7, 1.0, 3.0);
  const double lambda = 1.7;
  const int n = p.dofs().num_free();
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Vector adjoint(2 * n + 1);
  for (int i = 0; i < adjoint.size(); ++i) adjoint(i) = dist(rng);

  const VertexField g = p.coordinate_gradient(u, lambda, phi, adjoint);
  auto functional = [&](const TriMesh& m) { return adjoint.dot(ms_stack(AllenCahn(m), u, lambda, phi)); };

  for (int trial = 0; trial < 10; ++trial) {
    const VertexField w = smooth_direction(mesh, rng);
    double exact = 0.0;
    for (std::size_t v = 0; v < w.size(); ++v) exact += dot(g[v], w[v]);
    auto err = [&](double eps) {
      const double fd = (functional(moved(mesh, w, eps)) - functional(moved(mesh, w, -eps))) / (2 * eps);
      return std::abs(fd - exact);
    };
    const double e1 = err(1e-3), e2 = err(5e-4);
    CHECK(e2 <= 1e-5 * std::max(1.0, std::abs(exact)));
    if (e2 > 1e-10) {
      CHECK(e1 / e2 > 3.0);
      CHECK(e1 / e2 < 5.0);
    }
  }

  CHECK_THROWS_AS(p.coordinate_gradient(u, lambda, phi, Vector::Zero(3)), InvalidArgument);
  for (const Vec2& v : p.coordinate_gradient(u, lambda, phi, Vector::Zero(2 * n + 1))) {
    CHECK(v == Vec2{});
  }
}

TEST_CASE("coordinate_gradient is translation invariant and zero on fixed vertices") {
  const TriMesh mesh = gen_unit_disk(0.2);
  const AllenCahn p(mesh);
  std::mt19937 rng(4);
  const Field u = smooth_field(p, 1.0, 2.0, 2.0);
  const Field phi = smooth_field(p, 1.0, 1.0, 1.0);
  const int n = p.dofs().num_free();
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Vector adjoint(2 * n + 1);
  for (int i = 0; i < adjoint.size(); ++i) adjoint(i) = dist(rng);

  const VertexField g = p.coordinate_gradient(u, 2.0, phi, adjoint);
  Vec2 total{};
  double scale = 0.0;
  for (const Vec2& v : g) {
    total += v;
    scale += std::abs(v.x) + std::abs(v.y);
  }
  CHECK(std::abs(total.x) < 1e-10 * scale);
  CHECK(std::abs(total.y) < 1e-10 * scale);

  std::vector<bool> fixed = mesh.boundary_mask();
  const AllenCahn pf(mesh.with_fixed(fixed));
  const VertexField gf = pf.coordinate_gradient(u, 2.0, phi, adjoint);
  for (std::size_t v = 0; v < gf.size(); ++v) {
    if (fixed[v]) {
      CHECK(gf[v] == Vec2{});
    } else {
      CHECK(gf[v] == g[v]);
    }
  }
}

TEST_CASE("dilation covariance of the linear operators") {
  const TriMesh mesh = gen_unit_disk(0.1);
  const double s = 1.7;
  VertexField d(mesh.num_vertices());
  for (std::size_t v = 0; v < d.size(); ++v) d[v] = (s - 1.0) * mesh.vertices()[v];
  const TriMesh big = apply_displacement(mesh, d);
  const GramMatrices g0 = gram_matrices(mesh), g1 = gram_matrices(big);
  CHECK(Eigen::MatrixXd(g1.stiffness - g0.stiffness).norm() < 1e-10);
  CHECK(Eigen::MatrixXd(g1.mass - s * s * g0.mass).norm() < 1e-12);

  const AllenCahn p0(mesh), p1(big);
  const auto e0 = smallest_eigenpairs(p0.dofs().restrict_matrix(SparseMatrix(kDiffusion * p0.stiffness())),
                                      p0.dofs().restrict_matrix(p0.mass()), 2);
  const auto e1 = smallest_eigenpairs(p1.dofs().restrict_matrix(SparseMatrix(kDiffusion * p1.stiffness())),
                                      p1.dofs().restrict_matrix(p1.mass()), 2);
  for (int k = 0; k < 2; ++k) CHECK(e1[k].value == doctest::Approx(e0[k].value / (s * s)).epsilon(1e-8));
}

TEST_CASE("size mismatches are rejected") {
  const AllenCahn p(gen_unit_disk(0.3));
  CHECK_THROWS_AS(p.residual(Field::Zero(2), 1.0), InvalidArgument);
  CHECK_THROWS_AS(p.jacobian_u(Field::Zero(2), 1.0), InvalidArgument);
  CHECK_THROWS_AS(p.h1_inner(Field::Zero(2), Field::Zero(2)), InvalidArgument);
}

TEST_CASE("evaluate_at interpolates linear functions exactly") {
  const TriMesh mesh = gen_unit_disk(0.2);
  const Field f = interpolate(mesh, [](Vec2 x) { return 2.0 * x.x - 3.0 * x.y + 0.5; });
  CHECK(evaluate_at(mesh, f, {0.3, -0.2}) == doctest::Approx(2.0 * 0.3 + 0.6 + 0.5));
  CHECK(evaluate_at(mesh, f, {0.0, 0.0}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(evaluate_at(mesh, f, {2.0, 0.0}), InvalidArgument);
}
