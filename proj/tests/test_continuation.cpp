#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "bifctl/continuation.hpp"
#include "bifctl/error.hpp"

using namespace bifctl;

namespace {

constexpr double kJ01 = 2.404825557695773;

Field zero_field(const AllenCahn& p) { return Field::Zero(p.dofs().num_vertices()); }

double free_residual(const AllenCahn& p, const Field& u, double lambda) {
  return p.dofs().restrict_vector(p.residual(u, lambda)).norm();
}

// Radially symmetric bump on the upper branch, zero on the boundary.
Field bump(const AllenCahn& p, double amp) {
  Field u = interpolate(p.mesh(), [&](Vec2 x) { return amp * std::cos(0.5 * std::numbers::pi * std::hypot(x.x, x.y)); });
  for (int v = 0; v < u.size(); ++v) {
    if (p.dofs().is_dirichlet(v)) u(v) = 0.0;
  }
  return u;
}

}  // namespace

TEST_CASE("newton converges on the trivial and first nontrivial branch") {
  const AllenCahn p(gen_unit_disk(0.15));
  CHECK(newton(p, zero_field(p), 0.7).norm() == 0.0);

  const Field u = newton(p, bump(p, 1.3), 2.0);
  CHECK(free_residual(p, u, 2.0) <= 1e-10);
  CHECK(p.h1_norm(u) > 1.0);

  // Z2 closure: the negated field is a solution too.
  CHECK(free_residual(p, Field(-u), 2.0) <= 1e-10);

  Field bad = bump(p, 1.0);
  for (int v = 0; v < bad.size(); ++v) {
    if (p.dofs().is_dirichlet(v)) {
      bad(v) = 0.5;
      break;
    }
  }
  CHECK_THROWS_AS(newton(p, bad, 2.0), InvalidArgument);
}

TEST_CASE("deflation steers Newton away from known solutions") {
  const AllenCahn p(gen_unit_disk(0.15));
  const double lambda = 2.0;
  const Field zero = zero_field(p);
  const Field upper = newton(p, bump(p, 1.3), lambda);

  // Starting on a deflated solution is singular.
  CHECK_THROWS_AS(newton(p, upper, lambda, {1e-10, 30, 8}, {upper}), DeflationSingularity);

  // From the same seed with the first solution deflated, Newton either finds
  // a different solution or fails; it never returns the deflated one.
  try {
    const Field other = newton(p, bump(p, 1.3), lambda, {1e-10, 50, 8}, {zero, upper});
    CHECK(free_residual(p, other, lambda) <= 1e-10);
    CHECK(p.h1_norm(Field(other - upper)) > 1e-3);
    CHECK(p.h1_norm(other) > 1e-3);
  } catch (const ConvergenceError&) {
    CHECK(true);
  }
}

TEST_CASE("arclength on the trivial branch is a straight line") {
  const AllenCahn p(gen_unit_disk(0.2));
  const Branch b = arclength_continue(p, zero_field(p), 0.5, 0.1, 10);
  REQUIRE(b.samples.size() == 11);
  CHECK(b.folds.empty());
  for (std::size_t k = 0; k < b.samples.size(); ++k) {
    CHECK(b.samples[k].lambda == doctest::Approx(0.5 + 0.1 * k).epsilon(1e-9));
    CHECK(b.samples[k].u.norm() == 0.0);
  }
  CHECK_THROWS_AS(arclength_continue(p, zero_field(p), 0.5, 0.0, 10), InvalidArgument);
  CHECK_THROWS_AS(arclength_continue(p, bump(p, 1.0), 0.5, 0.1, 10), InvalidArgument);
}

TEST_CASE("first disk branch traced backwards has one fold below the branch point") {
  const AllenCahn p(gen_unit_disk(0.1));
  const Field u = newton(p, bump(p, 1.3), 2.0);
  ArclengthOptions opts;
  opts.stop_norm = 0.05;
  opts.lambda_min = 0.0;
  opts.lambda_max = 4.0;
  const Branch b = arclength_continue(p, u, 2.0, -0.05, 400, opts);
  CHECK(b.end_reason == "reached trivial branch");
  REQUIRE(b.folds.size() == 1);
  const FoldPoint& f = b.folds[0];
  CHECK(f.lambda < 0.25 * kJ01 * kJ01);
  CHECK(f.localization <= 1e-4);
  CHECK(std::abs(f.slope) <= 1e-3);
  CHECK(free_residual(p, f.u, f.lambda) <= 1e-9);

  for (const BranchSample& s : b.samples) {
    CHECK(free_residual(p, s.u, s.lambda) <= 1e-9);
    CHECK(s.diagnostic == doctest::Approx(p.h1_norm(s.u)));
  }
  // The branch ends where it meets u = 0, at the branch point.
  CHECK(std::abs(b.samples.back().lambda - 0.25 * kJ01 * kJ01) / (0.25 * kJ01 * kJ01) < 0.02);
}

TEST_CASE("deflated continuation on the disk") {
  const AllenCahn p(gen_unit_disk(0.15));
  DeflatedContinuationOptions o;
  o.lambda_start = 0.0;
  o.lambda_end = 2.5;
  o.dlambda = 0.1;
  const Diagram d = deflated_continuation(p, o);
  REQUIRE(!d.branches.empty());
  CHECK(d.branches[0].trivial);

  const auto births = distinct_births(d);
  REQUIRE(births.size() == 1);
  CHECK(std::abs(births[0] - 0.25 * kJ01 * kJ01) / (0.25 * kJ01 * kJ01) < 0.02);

  // Nontrivial branches come in +/- pairs with a fold each.
  int nontrivial = 0;
  for (std::size_t i = 1; i < d.branches.size(); ++i) {
    const Branch& b = d.branches[i];
    ++nontrivial;
    CHECK(b.folds.size() == 1);
    REQUIRE(b.birth.has_value());
    CHECK(*b.birth == doctest::Approx(births[0]).epsilon(1e-6));
    for (const BranchSample& s : b.samples) {
      CHECK(free_residual(p, s.u, s.lambda) <= 1e-9);
      CHECK(free_residual(p, Field(-s.u), s.lambda) <= 1e-9);
    }
  }
  CHECK(nontrivial == 2);
  const Branch& a = d.branches[1];
  const Branch& b = d.branches[2];
  CHECK(a.samples.size() == b.samples.size());
  CHECK(p.h1_norm(Field(a.samples[3].u + b.samples[3].u)) < 1e-6);

  const std::string csv = diagram_csv(d);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "branch_id,lambda,diagnostic,is_fold");
  CHECK(csv.find(",1\n") != std::string::npos);
}

TEST_CASE("branch births follow the dilation law") {
  const TriMesh mesh = gen_unit_disk(0.1);
  const double s = 0.8;
  VertexField dil(mesh.num_vertices());
  for (std::size_t v = 0; v < dil.size(); ++v) dil[v] = (s - 1.0) * mesh.vertices()[v];
  const AllenCahn p0(mesh), p1(apply_displacement(mesh, dil));

  DeflatedContinuationOptions o;
  o.lambda_start = 0.0;
  o.lambda_end = 4.0;
  o.max_branches = 0;
  o.arclength_complement = false;
  const auto b0 = distinct_births(deflated_continuation(p0, o));
  o.lambda_end = 4.0 / (s * s);
  const auto b1 = distinct_births(deflated_continuation(p1, o));
  REQUIRE(b0.size() >= 2);
  REQUIRE(b1.size() >= 2);
  for (int k = 0; k < 2; ++k) CHECK(std::abs(b1[k] * s * s - b0[k]) / b0[k] < 0.01);
}

TEST_CASE("a birth on a sweep grid point is still found") {
  const AllenCahn p(gen_unit_disk(0.15));
  const double first = ms_initialize(p, zero_field(p), 1.3).selected.lambda;
  DeflatedContinuationOptions o;
  o.lambda_start = first - 0.2;
  o.lambda_end = first + 0.25;
  o.dlambda = 0.1;
  o.max_branches = 0;
  o.arclength_complement = false;
  const auto births = distinct_births(deflated_continuation(p, o));
  REQUIRE(births.size() == 1);
  CHECK(births[0] == doctest::Approx(first).epsilon(1e-8));
}

TEST_CASE("deflated continuation validates options") {
  const AllenCahn p(gen_unit_disk(0.3));
  DeflatedContinuationOptions o;
  o.dlambda = 0.0;
  CHECK_THROWS_AS(deflated_continuation(p, o), InvalidArgument);
  o.dlambda = 0.1;
  o.lambda_start = 2.0;
  o.lambda_end = 1.0;
  CHECK_THROWS_AS(deflated_continuation(p, o), InvalidArgument);
}

TEST_CASE("point-value diagnostic") {
  const AllenCahn p(gen_unit_disk(0.2));
  Diagnostic d;
  d.kind = Diagnostic::Kind::PointValue;
  d.point = {0.0, 0.0};
  const Field u = interpolate(p.mesh(), [](Vec2 x) { return 2.0 + x.x; });
  CHECK(d(p, u) == doctest::Approx(2.0));
  CHECK(d.describe() == "u(0, 0)");
  CHECK(Diagnostic{}.describe() == "h1_norm(u)");
}
