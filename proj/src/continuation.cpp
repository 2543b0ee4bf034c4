#include "bifctl/continuation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bifctl {

double Diagnostic::operator()(const AllenCahn& problem, const Field& u) const {
  switch (kind) {
    case Kind::H1Norm:
      return problem.h1_norm(u);
    case Kind::PointValue:
      return evaluate_at(problem.mesh(), u, point);
  }
  return 0.0;
}

std::string Diagnostic::describe() const {
  if (kind == Kind::H1Norm) return "h1_norm(u)";
  std::ostringstream out;
  out << "u(" << point.x << ", " << point.y << ")";
  return out.str();
}

// ---------------------------------------------------------------------------
// Newton with deflation

namespace {

struct DeflationState {
  double factor = 1.0;
  std::vector<double> distances;
};

DeflationState deflation_state(const AllenCahn& problem, const Field& u,
                               const std::vector<Field>& set, const Deflation& d) {
  DeflationState s;
  for (const Field& known : set) {
    const double dist = problem.h1_norm(Field(u - known));
    s.distances.push_back(dist);
    s.factor *= std::pow(dist, -d.power) + d.shift;
  }
  return s;
}

double free_residual_norm(const AllenCahn& problem, const Field& u, double lambda) {
  return problem.dofs().restrict_vector(problem.residual(u, lambda)).norm();
}

}  // namespace

Field newton(const AllenCahn& problem, const Field& u0, double lambda, const NewtonOptions& options,
             const std::vector<Field>& deflation_set, const Deflation& deflation) {
  const DofMap& dofs = problem.dofs();
  if (u0.size() != dofs.num_vertices()) throw InvalidArgument("newton: initial guess size mismatch");
  for (int v = 0; v < dofs.num_vertices(); ++v) {
    if (dofs.is_dirichlet(v) && u0(v) != 0.0) {
      throw InvalidArgument("newton: initial guess violates the Dirichlet condition");
    }
  }
  for (const Field& known : deflation_set) {
    if (known.size() != u0.size()) throw InvalidArgument("newton: deflation set size mismatch");
  }

  const double singular = 1e-12;
  Field u = u0;
  Vector f = dofs.restrict_vector(problem.residual(u, lambda));
  DeflationState defl = deflation_state(problem, u, deflation_set, deflation);

  for (int it = 0; it <= options.max_iterations; ++it) {
    for (double dist : defl.distances) {
      if (dist <= singular) {
        throw DeflationSingularity("newton: iterate coincides with a deflated solution");
      }
    }
    const double fnorm = f.norm();
    if (fnorm <= options.tolerance) return u;
    if (it == options.max_iterations) break;

    const SparseLu lu(dofs.restrict_matrix(problem.jacobian_u(u, lambda)));
    Field step = dofs.prolong(lu.solve(Vector(-f)));
    if (!deflation_set.empty()) {
      // Newton step of M(u) F(u) = 0 is a scalar multiple of the plain step.
      double directional = 0.0;
      for (std::size_t i = 0; i < deflation_set.size(); ++i) {
        const double d = defl.distances[i];
        const double grad = problem.h1_inner(Field(u - deflation_set[i]), step);
        directional += -deflation.power * std::pow(d, -deflation.power - 2.0) * grad /
                       (std::pow(d, -deflation.power) + deflation.shift);
      }
      const double denom = 1.0 - directional;
      if (std::abs(denom) > 1e-14 && std::isfinite(denom)) step /= denom;
    }

    const double merit = defl.factor * fnorm;
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      Field trial = u + scale * step;
      Vector ft = dofs.restrict_vector(problem.residual(trial, lambda));
      DeflationState dt = deflation_state(problem, trial, deflation_set, deflation);
      const double nt = ft.norm();
      if (std::isfinite(nt) && (dt.factor * nt < merit || nt <= options.tolerance)) {
        u = std::move(trial);
        f = std::move(ft);
        defl = std::move(dt);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "newton: backtracking failed at iteration " << it << ", residual " << fnorm;
      throw ConvergenceError(msg.str());
    }
  }
  std::ostringstream msg;
  msg << "newton: no convergence in " << options.max_iterations << " iterations at lambda "
      << lambda << ", residual " << f.norm();
  throw ConvergenceError(msg.str());
}

// ---------------------------------------------------------------------------
// Pseudo-arclength continuation

namespace {

// A point (u_free, lambda) on the solution curve and tangent-like directions.
struct CurvePoint {
  Vector u;
  double lambda = 0.0;
};

class ArcSolver {
 public:
  ArcSolver(const AllenCahn& problem, const ArclengthOptions& options)
      : problem_(problem),
        dofs_(problem.dofs()),
        gram_(dofs_.restrict_matrix(problem.h1_gram())),
        options_(options) {}

  double dot(const CurvePoint& a, const CurvePoint& b) const {
    return a.u.dot(gram_ * b.u) + a.lambda * b.lambda;
  }
  double norm(const CurvePoint& a) const { return std::sqrt(std::max(0.0, dot(a, a))); }

  static CurvePoint axpy(const CurvePoint& y, double s, const CurvePoint& t) {
    return {y.u + s * t.u, y.lambda + s * t.lambda};
  }
  static CurvePoint diff(const CurvePoint& a, const CurvePoint& b) {
    return {a.u - b.u, a.lambda - b.lambda};
  }

  Field full(const CurvePoint& y) const { return dofs_.prolong(y.u); }

  SparseMatrix bordered(const CurvePoint& y, const CurvePoint& dir) const {
    const Field u = full(y);
    const SparseMatrix j = dofs_.restrict_matrix(problem_.jacobian_u(u, y.lambda));
    const Vector fl = dofs_.restrict_vector(problem_.residual_lambda(u));
    const Vector row = gram_ * dir.u;
    const int n = dofs_.num_free();
    std::vector<Triplet> trips;
    trips.reserve(j.nonZeros() + 2 * n + 1);
    for (Eigen::Index r = 0; r < j.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(j, r); it; ++it) {
        trips.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (int i = 0; i < n; ++i) {
      trips.emplace_back(i, n, fl(i));
      trips.emplace_back(n, i, row(i));
    }
    trips.emplace_back(n, n, dir.lambda);
    return from_triplets(n + 1, trips);
  }

  // Unit tangent at y, oriented so that <tangent, ref> > 0.
  CurvePoint tangent(const CurvePoint& y, const CurvePoint& ref) const {
    const int n = dofs_.num_free();
    Vector rhs = Vector::Zero(n + 1);
    rhs(n) = 1.0;
    const Vector sol = SparseLu(bordered(y, ref)).solve(rhs);
    CurvePoint t{sol.head(n), sol(n)};
    const double len = norm(t);
    t.u /= len;
    t.lambda /= len;
    return t;
  }

  // Newton on F(u, lambda) = 0, <dir, y - anchor> = h from the predictor.
  CurvePoint correct(const CurvePoint& anchor, const CurvePoint& dir, double h) const {
    const int n = dofs_.num_free();
    CurvePoint y = axpy(anchor, h, dir);
    auto system = [&](const CurvePoint& p) {
      Vector r(n + 1);
      r.head(n) = dofs_.restrict_vector(problem_.residual(full(p), p.lambda));
      r(n) = dot(dir, diff(p, anchor)) - h;
      return r;
    };
    Vector r = system(y);
    const NewtonOptions& nopt = options_.newton;
    for (int it = 0; it <= nopt.max_iterations; ++it) {
      if (r.head(n).norm() <= nopt.tolerance && std::abs(r(n)) <= 1e-10 * std::max(1.0, h)) {
        return y;
      }
      if (it == nopt.max_iterations) break;
      const Vector step = SparseLu(bordered(y, dir)).solve(Vector(-r));
      const CurvePoint dy{step.head(n), step(n)};
      double scale = 1.0;
      bool accepted = false;
      for (int k = 0; k <= nopt.max_halvings; ++k, scale *= 0.5) {
        CurvePoint trial = axpy(y, scale, dy);
        Vector rt = system(trial);
        if (std::isfinite(rt.norm()) && rt.norm() < r.norm()) {
          y = std::move(trial);
          r = std::move(rt);
          accepted = true;
          break;
        }
      }
      if (!accepted) throw ConvergenceError("arclength corrector: backtracking failed");
    }
    throw ConvergenceError("arclength corrector: no convergence");
  }

  // Bisection on the sign of dlambda/ds between a and b.
  FoldPoint localize_fold(CurvePoint a, CurvePoint ta, CurvePoint b, CurvePoint tb) const {
    for (int iter = 0; iter < 60; ++iter) {
      const double d = norm(diff(b, a));
      const double width = std::max(std::abs(ta.lambda), std::abs(tb.lambda)) * d;
      const double slope = std::min(std::abs(ta.lambda), std::abs(tb.lambda));
      if (width <= options_.fold_tolerance && slope <= options_.fold_slope) break;
      CurvePoint sec = diff(b, a);
      sec.u /= d;
      sec.lambda /= d;
      const CurvePoint mid = correct(a, sec, 0.5 * d);
      const CurvePoint tm = tangent(mid, sec);
      if ((tm.lambda > 0.0) == (ta.lambda > 0.0)) {
        a = mid;
        ta = tm;
      } else {
        b = mid;
        tb = tm;
      }
    }
    const bool use_a = std::abs(ta.lambda) <= std::abs(tb.lambda);
    const CurvePoint& p = use_a ? a : b;
    FoldPoint fold;
    fold.lambda = p.lambda;
    fold.u = full(p);
    fold.diagnostic = options_.diagnostic(problem_, fold.u);
    fold.localization = std::max(std::abs(ta.lambda), std::abs(tb.lambda)) * norm(diff(b, a));
    fold.slope = use_a ? ta.lambda : tb.lambda;
    return fold;
  }

  BranchSample sample(const CurvePoint& y) const {
    BranchSample s;
    s.lambda = y.lambda;
    s.u = full(y);
    s.diagnostic = options_.diagnostic(problem_, s.u);
    return s;
  }

  const DofMap& dofs() const { return dofs_; }
  const SparseMatrix& gram() const { return gram_; }

 private:
  const AllenCahn& problem_;
  const DofMap& dofs_;
  SparseMatrix gram_;
  const ArclengthOptions& options_;
};

}  // namespace

Branch arclength_continue(const AllenCahn& problem, const Field& u0, double lambda0, double ds,
                          int n_steps, const ArclengthOptions& options) {
  if (!(ds != 0.0) || !std::isfinite(ds)) throw InvalidArgument("arclength_continue: ds must be nonzero");
  if (n_steps < 0) throw InvalidArgument("arclength_continue: n_steps must be non-negative");
  if (u0.size() != problem.dofs().num_vertices()) {
    throw InvalidArgument("arclength_continue: initial field size mismatch");
  }
  if (free_residual_norm(problem, u0, lambda0) > 10.0 * options.newton.tolerance) {
    throw InvalidArgument("arclength_continue: initial point does not solve the PDE");
  }

  const ArcSolver solver(problem, options);
  const int n = problem.dofs().num_free();
  CurvePoint y{problem.dofs().restrict_vector(u0), lambda0};
  CurvePoint lambda_axis{Vector::Zero(n), 1.0};
  CurvePoint tangent = solver.tangent(y, lambda_axis);
  if (ds < 0.0) {
    tangent.u = -tangent.u;
    tangent.lambda = -tangent.lambda;
  }
  CurvePoint direction = tangent;

  Branch branch;
  branch.samples.push_back(solver.sample(y));
  const double h_max = std::abs(ds);
  double h = h_max;

  for (int step = 0; step < n_steps; ++step) {
    CurvePoint next;
    bool ok = false;
    for (int k = 0; k <= options.max_step_halvings; ++k) {
      try {
        next = solver.correct(y, direction, h);
        ok = true;
        break;
      } catch (const Error&) {
        h *= 0.5;
      }
    }
    if (!ok) {
      branch.end_reason = "corrector failed";
      return branch;
    }
    const CurvePoint next_tangent = solver.tangent(next, direction);
    if (tangent.lambda != 0.0 && next_tangent.lambda != 0.0 &&
        (tangent.lambda > 0.0) != (next_tangent.lambda > 0.0)) {
      try {
        branch.folds.push_back(solver.localize_fold(y, tangent, next, next_tangent));
      } catch (const Error&) {
        FoldPoint rough;
        rough.lambda = std::abs(tangent.lambda) < std::abs(next_tangent.lambda) ? y.lambda : next.lambda;
        rough.u = solver.full(next);
        rough.diagnostic = options.diagnostic(problem, rough.u);
        rough.localization = std::abs(next.lambda - y.lambda);
        rough.slope = next_tangent.lambda;
        branch.folds.push_back(std::move(rough));
      }
    }

    CurvePoint secant = ArcSolver::diff(next, y);
    const double len = solver.norm(secant);
    secant.u /= len;
    secant.lambda /= len;
    direction = secant;
    tangent = next_tangent;
    y = next;
    h = std::min(h_max, 2.0 * h);

    if (y.lambda < options.lambda_min || y.lambda > options.lambda_max) {
      branch.end_reason = "left lambda range";
      return branch;
    }
    branch.samples.push_back(solver.sample(y));
    if (options.stop_norm > 0.0 && problem.h1_norm(branch.samples.back().u) < options.stop_norm) {
      branch.end_reason = "reached trivial branch";
      return branch;
    }
  }
  branch.end_reason = "step limit";
  return branch;
}

// ---------------------------------------------------------------------------
// Deflated continuation

namespace {

struct Piece {
  Branch branch;
  Field previous;  // solution at the previous lambda step
  bool active = true;
};

double curve_distance(const AllenCahn& problem, const BranchSample& a, const BranchSample& b) {
  const double du = problem.h1_norm(Field(a.u - b.u));
  return std::hypot(du, a.lambda - b.lambda);
}

}  // namespace

Diagram deflated_continuation(const AllenCahn& problem, const DeflatedContinuationOptions& options) {
  if (!(options.dlambda > 0.0)) throw InvalidArgument("deflated_continuation: dlambda must be positive");
  if (options.lambda_end < options.lambda_start) {
    throw InvalidArgument("deflated_continuation: lambda_end is below lambda_start");
  }
  if (options.max_branches < 0 || options.seed_modes < 0) {
    throw InvalidArgument("deflated_continuation: counts must be non-negative");
  }

  const DofMap& dofs = problem.dofs();
  const int nv = dofs.num_vertices();
  const Field zero = Field::Zero(nv);
  const SparseMatrix mass_free = dofs.restrict_matrix(problem.mass());
  const double trivial_tol = 1e-8;

  Diagram diagram;
  diagram.lambda_min = options.lambda_start;
  diagram.lambda_max = options.lambda_end;
  diagram.diagnostic = options.diagnostic.describe();

  Branch trivial;
  trivial.trivial = true;
  std::vector<Piece> pieces;

  const int steps =
      static_cast<int>(std::floor((options.lambda_end - options.lambda_start) / options.dlambda + 1e-9));
  // Last lambda whose eigenvalues were computed; births are sought above it.
  std::optional<double> lambda_prev;
  for (int k = 0; k <= steps; ++k) {
    const double lambda = options.lambda_start + k * options.dlambda;
    trivial.samples.push_back({lambda, options.diagnostic(problem, zero), zero});
    std::vector<Field> found{zero};

    auto is_new = [&](const Field& u) {
      const double norm = problem.h1_norm(u);
      if (norm <= trivial_tol) return false;
      for (const Field& known : found) {
        if (problem.h1_norm(Field(u - known)) <= 1e-6 * std::max(1.0, norm)) return false;
      }
      return true;
    };

    // Continue known branches.
    for (Piece& piece : pieces) {
      if (!piece.active) continue;
      try {
        Field u = newton(problem, piece.previous, lambda, options.newton, found, options.deflation);
        if (!is_new(u)) {
          piece.active = false;
          piece.branch.end_reason = "merged";
          continue;
        }
        piece.branch.samples.push_back({lambda, options.diagnostic(problem, u), u});
        found.push_back(u);
      } catch (const Error&) {
        piece.active = false;
        piece.branch.end_reason = "continuation failed";
      }
    }

    // Eigenpairs of the linearization on the trivial branch: births and seeds.
    std::vector<Field> seeds;
    for (const Piece& piece : pieces) seeds.push_back(piece.previous);
    if (options.seed_modes > 0) {
      try {
        const SparseMatrix a = dofs.restrict_matrix(problem.jacobian_u(zero, lambda));
        const auto pairs =
            smallest_eigenpairs(a, mass_free, std::min(options.seed_modes, dofs.num_free()));
        for (const EigenPair& pair : pairs) {
          Field phi = dofs.prolong(pair.vector);
          phi /= problem.h1_norm(phi);
          seeds.push_back(options.seed_eps * phi);
          seeds.push_back(-options.seed_eps * phi);
          const double estimate = lambda + pair.value;
          if (lambda_prev && estimate > *lambda_prev && estimate <= lambda + 1e-12) {
            try {
              const BranchPointState bp = ms_solve(problem, {zero, estimate, phi});
              const bool duplicate =
                  std::any_of(diagram.births.begin(), diagram.births.end(), [&](double b) {
                    return std::abs(b - bp.lambda) <= 1e-9 * (1.0 + std::abs(b));
                  });
              if (!duplicate) diagram.births.push_back(bp.lambda);
            } catch (const Error&) {
              diagram.births.push_back(estimate);
            }
          }
        }
        lambda_prev = lambda;
      } catch (const Error&) {
        // Singular linearization exactly at a grid point; skip seeding here.
      }
    }

    // Discover new branches.
    for (const Field& seed : seeds) {
      for (int attempt = 0; attempt < options.attempts_per_seed; ++attempt) {
        if (static_cast<int>(pieces.size()) >= options.max_branches) break;
        try {
          Field u = newton(problem, seed, lambda, options.newton, found, options.deflation);
          if (!is_new(u)) break;
          Piece piece;
          piece.branch.samples.push_back({lambda, options.diagnostic(problem, u), u});
          piece.previous = u;
          found.push_back(u);
          pieces.push_back(std::move(piece));
        } catch (const Error&) {
          break;
        }
      }
    }
    for (Piece& piece : pieces) {
      if (piece.active && !piece.branch.samples.empty()) piece.previous = piece.branch.samples.back().u;
    }
  }
  std::sort(diagram.births.begin(), diagram.births.end());
  diagram.branches.push_back(std::move(trivial));

  if (!options.arclength_complement) {
    for (Piece& piece : pieces) diagram.branches.push_back(std::move(piece.branch));
    return diagram;
  }

  ArclengthOptions arc;
  arc.newton = options.newton;
  arc.lambda_min = options.lambda_start;
  arc.lambda_max = options.lambda_end;
  arc.stop_norm = options.trivial_norm;
  arc.diagnostic = options.diagnostic;

  auto nearest_birth = [&](double lambda) -> std::optional<double> {
    std::optional<double> best;
    for (double b : diagram.births) {
      if (!best || std::abs(b - lambda) < std::abs(*best - lambda)) best = b;
    }
    return best;
  };

  for (const Piece& piece : pieces) {
    const BranchSample& first = piece.branch.samples.front();
    bool covered = false;
    for (std::size_t f = 1; f < diagram.branches.size() && !covered; ++f) {
      for (const BranchSample& s : diagram.branches[f].samples) {
        if (curve_distance(problem, s, first) <= 2.0 * options.arclength_ds) {
          covered = true;
          break;
        }
      }
    }
    if (covered) continue;

    Branch forward, backward;
    try {
      forward = arclength_continue(problem, first.u, first.lambda, options.arclength_ds,
                                   options.arclength_steps, arc);
      backward = arclength_continue(problem, first.u, first.lambda, -options.arclength_ds,
                                    options.arclength_steps, arc);
    } catch (const Error&) {
      diagram.branches.push_back(piece.branch);
      continue;
    }
    Branch family;
    for (auto it = backward.samples.rbegin(); it + 1 != backward.samples.rend(); ++it) {
      family.samples.push_back(*it);
    }
    family.samples.insert(family.samples.end(), forward.samples.begin(), forward.samples.end());
    family.folds = backward.folds;
    family.folds.insert(family.folds.end(), forward.folds.begin(), forward.folds.end());
    for (const Branch* trace : {&backward, &forward}) {
      if (trace->end_reason == "reached trivial branch") {
        family.birth = nearest_birth(trace->samples.back().lambda);
        if (!family.birth) family.birth = trace->samples.back().lambda;
      }
    }
    family.end_reason = backward.end_reason + " / " + forward.end_reason;
    diagram.branches.push_back(std::move(family));
  }
  return diagram;
}

std::vector<double> distinct_births(const Diagram& diagram, double relative) {
  std::vector<double> sorted = diagram.births;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  std::vector<int> counts;
  for (double b : sorted) {
    if (!out.empty() && std::abs(b - out.back()) <= relative * std::abs(out.back())) {
      // Running mean of the cluster.
      out.back() = (out.back() * counts.back() + b) / (counts.back() + 1);
      ++counts.back();
    } else {
      out.push_back(b);
      counts.push_back(1);
    }
  }
  return out;
}

std::string diagram_csv(const Diagram& diagram) {
  std::ostringstream out;
  out << "branch_id,lambda,diagnostic,is_fold\n";
  char line[128];
  for (std::size_t b = 0; b < diagram.branches.size(); ++b) {
    const Branch& branch = diagram.branches[b];
    for (const BranchSample& s : branch.samples) {
      std::snprintf(line, sizeof line, "%zu,%.12g,%.12g,0\n", b, s.lambda, s.diagnostic);
      out << line;
    }
    for (const FoldPoint& f : branch.folds) {
      std::snprintf(line, sizeof line, "%zu,%.12g,%.12g,1\n", b, f.lambda, f.diagnostic);
      out << line;
    }
  }
  return out.str();
}

void write_diagram_csv(const Diagram& diagram, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_diagram_csv: cannot open " + path.string());
  out << diagram_csv(diagram);
}

}  // namespace bifctl
