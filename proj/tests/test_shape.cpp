#include <doctest.h>

#include <cmath>
#include <random>

#include "bifctl/error.hpp"
#include "bifctl/shape.hpp"

using namespace bifctl;

namespace {

BranchPointState first_branch_point(const AllenCahn& p) {
  return ms_initialize(p, Field::Zero(p.dofs().num_vertices()), 1.3).selected;
}

VertexField smooth_direction(const TriMesh& mesh, int seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  const double a = c(rng), b = c(rng), d = c(rng), e = c(rng);
  VertexField w(mesh.num_vertices());
  for (std::size_t v = 0; v < w.size(); ++v) {
    const Vec2 x = mesh.vertices()[v];
    w[v] = {a * std::sin(1.7 * x.y + b) + 0.3 * x.x, d * std::cos(2.1 * x.x + e) - 0.2 * x.y};
  }
  return w;
}

// Quadratic form v^T A w of the inner-product matrix on flattened fields.
double form(const SparseMatrix& a, const VertexField& v, const VertexField& w) {
  Vector fv(2 * v.size()), fw(2 * w.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    fv(2 * i) = v[i].x;
    fv(2 * i + 1) = v[i].y;
    fw(2 * i) = w[i].x;
    fw(2 * i + 1) = w[i].y;
  }
  return fv.dot(a * fw);
}

}  // namespace

TEST_CASE("objective") {
  BranchPointState s;
  s.lambda = 3.0;
  CHECK(objective(s, 3.0) == 0.0);
  s.lambda = 18.0;
  CHECK(objective(s, 20.0) == 4.0);
  s.lambda = 1.4458;
  CHECK(objective(s, 20.0) == doctest::Approx((20.0 - 1.4458) * (20.0 - 1.4458)));
  CHECK(objective(s, 20.0) == doctest::Approx(344.26).epsilon(1e-4));
}

TEST_CASE("shape gradient vanishes at the target") {
  const AllenCahn p(gen_unit_disk(0.2));
  const BranchPointState s = first_branch_point(p);
  for (const Vec2& g : shape_gradient(p, s, s.lambda)) CHECK(g == Vec2{});
}

TEST_CASE("shape gradient passes the Taylor test") {
  const AllenCahn p(gen_unit_disk(0.1));
  const BranchPointState s = first_branch_point(p);
  for (int seed : {1, 2}) {
    const auto rem = taylor_remainders(p, s, 3.0, smooth_direction(p.mesh(), seed), 1e-2, 5);
    for (std::size_t k = 0; k + 1 < rem.size(); ++k) {
      CHECK(rem[k] / rem[k + 1] > 3.5);
      CHECK(rem[k] / rem[k + 1] < 4.5);
    }
  }
}

TEST_CASE("shrinking the disk raises the branch point") {
  const AllenCahn p(gen_unit_disk(0.1));
  const BranchPointState s = first_branch_point(p);
  VertexField inward(p.mesh().num_vertices());
  for (std::size_t v = 0; v < inward.size(); ++v) inward[v] = -1.0 * p.mesh().vertices()[v];
  CHECK(pairing(shape_gradient(p, s, 3.0), inward) < 0.0);

  // The dilation law predicts dlambda/ds = 2 lambda along x -> (1 - s) x.
  const VertexField g = shape_gradient(p, s, 3.0);
  const double dj = pairing(g, inward);
  const double predicted = 2.0 * (s.lambda - 3.0) * 2.0 * s.lambda;
  CHECK(dj == doctest::Approx(predicted).epsilon(1e-6));
}

TEST_CASE("riesz matrices are symmetric positive definite") {
  const TriMesh mesh = gen_unit_disk(0.3);
  for (InnerProductSpec ip : {InnerProductSpec{}, InnerProductSpec{InnerProductSpec::Kind::LinearElasticity, 1.0, 1.0},
                              InnerProductSpec{InnerProductSpec::Kind::LinearElasticity, 0.5, 3.0}}) {
    const Eigen::MatrixXd a = Eigen::MatrixXd(riesz_matrix(mesh, ip));
    CHECK((a - a.transpose()).norm() < 1e-13 * a.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("elasticity form of a rigid rotation has only the mass part") {
  const TriMesh mesh = gen_unit_disk(0.3);
  VertexField rot(mesh.num_vertices());
  for (std::size_t v = 0; v < rot.size(); ++v) rot[v] = {-mesh.vertices()[v].y, mesh.vertices()[v].x};
  const InnerProductSpec el{InnerProductSpec::Kind::LinearElasticity, 1.0, 1.0};
  // Rotation has zero strain and divergence, so only the L2 term remains;
  // the H1 form adds |D rot|^2 = 2 per unit area.
  const double l2 = form(riesz_matrix(mesh, el), rot, rot);
  const double h1_val = form(riesz_matrix(mesh, {}), rot, rot);
  CHECK(h1_val - l2 == doctest::Approx(2.0 * mesh.area()).epsilon(1e-10));
}

TEST_CASE("riesz_update solves the variational problem") {
  std::vector<bool> fixed = gen_unit_disk(0.2).boundary_mask();
  const TriMesh mesh = gen_unit_disk(0.2).with_fixed(fixed);
  VertexField g(mesh.num_vertices());
  for (std::size_t v = 0; v < g.size(); ++v) {
    if (!fixed[v]) g[v] = {std::sin(3.0 * v), std::cos(2.0 * v)};
  }
  for (const InnerProductSpec& ip :
       {InnerProductSpec{}, InnerProductSpec{InnerProductSpec::Kind::LinearElasticity, 2.0, 0.5}}) {
    const VertexField d = riesz_update(mesh, g, ip);
    const SparseMatrix a = riesz_matrix(mesh, ip);
    for (std::size_t v = 0; v < d.size(); ++v) {
      if (fixed[v]) CHECK(d[v] == Vec2{});
    }
    // (d, V) = -<g, V> for test fields V supported on free vertices.
    for (int trial = 0; trial < 5; ++trial) {
      VertexField w = smooth_direction(mesh, 40 + trial);
      for (std::size_t v = 0; v < w.size(); ++v) {
        if (fixed[v]) w[v] = {};
      }
      CHECK(form(a, d, w) == doctest::Approx(-pairing(g, w)).epsilon(1e-9));
    }
  }
  for (const Vec2& v : riesz_update(mesh, VertexField(mesh.num_vertices()), {})) CHECK(v == Vec2{});

  const TriMesh frozen = mesh.with_fixed(std::vector<bool>(mesh.num_vertices(), true));
  CHECK_THROWS_AS(riesz_update(frozen, g, {}), InvalidArgument);
}

TEST_CASE("integral functional gradient and the single descent step") {
  const TriMesh mesh = gen_unit_disk(0.05);
  auto f = [](Vec2 x) { return x.x * x.x + 2.25 * x.y * x.y - 1.0; };
  auto grad = [](Vec2 x) { return Vec2{2.0 * x.x, 4.5 * x.y}; };
  const VertexField g = integral_functional_gradient(mesh, f, grad);

  const VertexField w = smooth_direction(mesh, 9);
  auto moved = [&](double s) {
    VertexField d = w;
    for (Vec2& v : d) v *= s;
    return integral_functional(apply_displacement(mesh, d), f);
  };
  const double eps = 1e-4;
  CHECK((moved(eps) - moved(-eps)) / (2 * eps) == doctest::Approx(pairing(g, w)).epsilon(1e-6));

  const double j0 = integral_functional(mesh, f);
  VertexField step = riesz_update(mesh, g, {});
  for (Vec2& v : step) v *= 0.5;
  const double j1 = integral_functional(apply_displacement(mesh, step), f);
  CHECK(std::abs(j0 - (-0.59)) <= 0.05);
  CHECK(std::abs(j1 - (-1.01)) <= 0.05);
}

TEST_CASE("accept_step") {
  const AllenCahn p(gen_unit_disk(0.2));
  Field u = interpolate(p.mesh(), [](Vec2 x) { return 1.0 - x.x * x.x - x.y * x.y + 0.1 * x.x; });
  const Field zero = Field::Zero(u.size());
  CHECK(accept_step(u, u, p, 0.1));
  CHECK(accept_step(u, u, p.mesh(), 1e-6));
  CHECK_FALSE(accept_step(u, Field(-u), p, 0.1));
  CHECK_FALSE(accept_step(u, zero, p, 0.1));
  CHECK(accept_step(zero, zero, p, 0.1));
  CHECK(accept_step(u, Field(1.05 * u), p, 0.1));
}

TEST_CASE("optimize drives the first disk branch point to the target") {
  const AllenCahn p(gen_unit_disk(0.1));
  const BranchPointState s0 = first_branch_point(p);
  std::vector<TriMesh> meshes{p.mesh()};
  OptimizeOptions o;
  o.on_accept = [&](const ShapeIterate& it) { meshes.push_back(it.mesh); };
  const ShapeIterate it = optimize(p.mesh(), s0, 3.0, 1e-10, o);
  CHECK(it.objective_value <= 1e-10);
  CHECK(std::abs(it.state.lambda - 3.0) <= 1e-5);
  CHECK(it.accepted_steps <= 60);
  CHECK(it.objective_value == doctest::Approx(objective(it.state, 3.0)));

  double previous = objective(s0, 3.0);
  for (const HistoryRecord& r : it.history) {
    if (!r.accepted) continue;
    CHECK(r.objective <= previous);
    previous = r.objective;
  }
  // Each accepted mesh is an untangled image of its predecessor.
  for (std::size_t k = 1; k < meshes.size(); ++k) {
    VertexField d(meshes[k].num_vertices());
    for (std::size_t v = 0; v < d.size(); ++v) d[v] = meshes[k].vertices()[v] - meshes[k - 1].vertices()[v];
    CHECK(min_jacobian_ratio(meshes[k - 1], d) > kDefaultTangleThreshold);
    CHECK(meshes[k].triangles() == meshes[0].triangles());
  }
  const AllenCahn final_problem(it.mesh);
  const Vector r = ms_residual(final_problem, it.state);
  CHECK(r.norm() <= 1e-9);
}

TEST_CASE("optimize with the elasticity inner product and L-BFGS") {
  const AllenCahn p(gen_unit_disk(0.15));
  const BranchPointState s0 = first_branch_point(p);
  OptimizeOptions o;
  o.inner_product = {InnerProductSpec::Kind::LinearElasticity, 1.0, 1.0};
  o.lbfgs = true;
  const ShapeIterate it = optimize(p.mesh(), s0, 2.0, 1e-10, o);
  CHECK(std::abs(it.state.lambda - 2.0) <= 1e-5);
}

TEST_CASE("optimize edge cases") {
  const AllenCahn p(gen_unit_disk(0.2));
  const BranchPointState s0 = first_branch_point(p);

  const ShapeIterate same = optimize(p.mesh(), s0, s0.lambda, 1e-10);
  CHECK(same.history.empty());
  CHECK(same.accepted_steps == 0);
  CHECK(same.mesh == p.mesh());

  const TriMesh frozen = p.mesh().with_fixed(std::vector<bool>(p.mesh().num_vertices(), true));
  try {
    optimize(frozen, s0, 3.0, 1e-10);
    FAIL("expected a step-floor error");
  } catch (const OptimizationError& e) {
    CHECK(e.last().accepted_steps == 0);
    CHECK(std::string(e.what()).find("floor") != std::string::npos);
  }

  BranchPointState bad = s0;
  bad.lambda += 0.5;
  CHECK_THROWS_AS(optimize(p.mesh(), bad, 3.0, 1e-10), InvalidArgument);
}
