#include "bifctl/shape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <memory>
#include <sstream>

namespace bifctl {

namespace {

Vector flatten(const VertexField& f) {
  Vector out(2 * static_cast<Eigen::Index>(f.size()));
  for (std::size_t v = 0; v < f.size(); ++v) {
    out(2 * v) = f[v].x;
    out(2 * v + 1) = f[v].y;
  }
  return out;
}

VertexField unflatten(const Vector& x) {
  VertexField out(static_cast<std::size_t>(x.size() / 2));
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = {x(2 * v), x(2 * v + 1)};
  return out;
}

void check_field(const TriMesh& mesh, const VertexField& f, const char* what) {
  if (f.size() != mesh.num_vertices()) {
    throw InvalidArgument(std::string(what) + ": vertex field does not match mesh");
  }
}

// Gradients of the barycentric coordinates and the area of triangle t.
struct ElementGeometry {
  std::array<Vec2, 3> grad;
  double area;
};

ElementGeometry geometry(const TriMesh& mesh, std::size_t t) {
  const Triangle& tri = mesh.triangles()[t];
  const auto& x = mesh.vertices();
  ElementGeometry g;
  g.area = mesh.signed_area(t);
  for (int a = 0; a < 3; ++a) {
    const Vec2 e = x[tri[(a + 2) % 3]] - x[tri[(a + 1) % 3]];
    g.grad[a] = {-e.y / (2.0 * g.area), e.x / (2.0 * g.area)};
  }
  return g;
}

}  // namespace

double objective(const BranchPointState& state, double lambda_star) {
  const double d = state.lambda - lambda_star;
  return d * d;
}

VertexField shape_gradient(const AllenCahn& problem, const BranchPointState& state,
                           double lambda_star) {
  const int nf = problem.dofs().num_free();
  const double dj = 2.0 * (state.lambda - lambda_star);
  if (dj == 0.0) return VertexField(problem.mesh().num_vertices());
  Vector rhs = Vector::Zero(2 * nf + 1);
  rhs(nf) = -dj;
  const Vector adjoint = SparseLu(ms_jacobian(problem, state)).solve_transpose(rhs);
  return problem.coordinate_gradient(state.u, state.lambda, state.phi, adjoint);
}

VertexField shape_gradient(const TriMesh& mesh, const BranchPointState& state, double lambda_star) {
  return shape_gradient(AllenCahn(mesh), state, lambda_star);
}

SparseMatrix riesz_matrix(const TriMesh& mesh, const InnerProductSpec& ip) {
  if (ip.kind == InnerProductSpec::Kind::LinearElasticity && (ip.mu <= 0.0 || ip.lambda < 0.0)) {
    throw InvalidArgument("riesz_matrix: elasticity needs mu > 0 and lambda >= 0");
  }
  std::vector<Triplet> trips;
  trips.reserve(mesh.num_triangles() * 36);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Triangle& tri = mesh.triangles()[t];
    const ElementGeometry g = geometry(mesh, t);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double mass = g.area * (i == j ? 2.0 : 1.0) / 12.0;
        const Vec2 gi = g.grad[i], gj = g.grad[j];
        const double gi_c[2] = {gi.x, gi.y};
        const double gj_c[2] = {gj.x, gj.y};
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            double value = 0.0;
            if (ip.kind == InnerProductSpec::Kind::H1Vector) {
              if (a == b) value = g.area * dot(gi, gj) + mass;
            } else {
              value = g.area * (ip.mu * ((a == b ? dot(gi, gj) : 0.0) + gi_c[b] * gj_c[a]) +
                                ip.lambda * gi_c[a] * gj_c[b]);
              if (a == b) value += mass;
            }
            if (value != 0.0) trips.emplace_back(2 * tri[i] + a, 2 * tri[j] + b, value);
          }
        }
      }
    }
  }
  return from_triplets(2 * static_cast<Eigen::Index>(mesh.num_vertices()), trips);
}

namespace {

// Riesz solve on the free coordinates with a prebuilt Gram matrix.
class RieszSolver {
 public:
  RieszSolver(const TriMesh& mesh, const InnerProductSpec& ip) : gram_(riesz_matrix(mesh, ip)) {
    const auto& fixed = mesh.fixed_vertices();
    index_.assign(2 * mesh.num_vertices(), -1);
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
      if (fixed[v]) continue;
      for (int c = 0; c < 2; ++c) {
        index_[2 * v + c] = static_cast<int>(free_.size());
        free_.push_back(static_cast<int>(2 * v + c));
      }
    }
    if (free_.empty()) return;
    std::vector<Triplet> trips;
    for (Eigen::Index r = 0; r < gram_.outerSize(); ++r) {
      if (index_[r] < 0) continue;
      for (SparseMatrix::InnerIterator it(gram_, r); it; ++it) {
        if (index_[it.col()] >= 0) trips.emplace_back(index_[r], index_[it.col()], it.value());
      }
    }
    lu_ = std::make_unique<SparseLu>(from_triplets(static_cast<Eigen::Index>(free_.size()), trips));
  }

  bool empty() const { return free_.empty(); }

  // Returns x with A x = rhs on free coordinates and zeros elsewhere.
  Vector solve(const Vector& rhs) const {
    if (free_.empty()) return Vector::Zero(rhs.size());
    Vector b(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t i = 0; i < free_.size(); ++i) b(i) = rhs(free_[i]);
    const Vector x = lu_->solve(b);
    Vector out = Vector::Zero(rhs.size());
    for (std::size_t i = 0; i < free_.size(); ++i) out(free_[i]) = x(i);
    return out;
  }

  double inner(const Vector& a, const Vector& b) const { return a.dot(gram_ * b); }

 private:
  SparseMatrix gram_;
  std::vector<int> index_;
  std::vector<int> free_;
  std::unique_ptr<SparseLu> lu_;
};

}  // namespace

VertexField riesz_update(const TriMesh& mesh, const VertexField& g, const InnerProductSpec& ip) {
  check_field(mesh, g, "riesz_update");
  const RieszSolver solver(mesh, ip);
  if (solver.empty()) throw InvalidArgument("riesz_update: every vertex is fixed");
  return unflatten(solver.solve(-flatten(g)));
}

bool accept_step(const Field& u_prev_on_new_mesh, const Field& u_new, const AllenCahn& problem_new,
                 double C) {
  return problem_new.h1_norm(Field(u_prev_on_new_mesh - u_new)) <= C * problem_new.h1_norm(u_new);
}

bool accept_step(const Field& u_prev_on_new_mesh, const Field& u_new, const TriMesh& mesh_new,
                 double C) {
  return accept_step(u_prev_on_new_mesh, u_new, AllenCahn(mesh_new), C);
}

double pairing(const VertexField& g, const VertexField& w) {
  if (g.size() != w.size()) throw InvalidArgument("pairing: size mismatch");
  double s = 0.0;
  for (std::size_t v = 0; v < g.size(); ++v) s += dot(g[v], w[v]);
  return s;
}

std::vector<double> taylor_remainders(const AllenCahn& problem, const BranchPointState& state,
                                      double lambda_star, const VertexField& direction, double s0,
                                      int levels, const NewtonOptions& newton) {
  const TriMesh& mesh = problem.mesh();
  check_field(mesh, direction, "taylor_remainders");
  const double j0 = objective(state, lambda_star);
  const double slope = pairing(shape_gradient(problem, state, lambda_star), direction);
  std::vector<double> out;
  double s = s0;
  for (int k = 0; k < levels; ++k, s *= 0.5) {
    VertexField d = direction;
    for (Vec2& v : d) v *= s;
    const AllenCahn moved(apply_displacement(mesh, d));
    const BranchPointState st = ms_solve(moved, state, newton);
    out.push_back(std::abs(objective(st, lambda_star) - j0 - s * slope));
  }
  return out;
}

namespace {

// Smooth deterministic direction for the pre-flight check, zero on fixed vertices.
VertexField preflight_direction(const TriMesh& mesh) {
  VertexField w(mesh.num_vertices());
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    if (mesh.fixed_vertices()[v]) continue;
    const Vec2 p = mesh.vertices()[v];
    w[v] = {std::sin(1.3 * p.x + 0.7 * p.y + 0.3), std::cos(0.9 * p.x - 1.1 * p.y + 0.5)};
  }
  return w;
}

double mesh_diameter(const TriMesh& mesh) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const Vec2& p : mesh.vertices()) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  return std::hypot(hi_x - lo_x, hi_y - lo_y);
}

void preflight(const AllenCahn& problem, const BranchPointState& state, double lambda_star,
               const NewtonOptions& newton) {
  const VertexField w = preflight_direction(problem.mesh());
  if (pairing(w, w) == 0.0) return;
  const double s0 = 1e-2 * mesh_diameter(problem.mesh());
  const auto rem = taylor_remainders(problem, state, lambda_star, w, s0, 4, newton);
  // Remainders at roundoff level carry no order information.
  const double j_scale = std::max(1.0, objective(state, lambda_star));
  if (rem.front() <= 1e-11 * j_scale) return;
  double worst = 1e300;
  for (std::size_t k = 0; k + 1 < rem.size(); ++k) worst = std::min(worst, rem[k] / rem[k + 1]);
  if (worst < 3.0) {
    std::ostringstream msg;
    msg << "optimize: shape gradient failed the pre-flight Taylor check (remainder ratio " << worst
        << ")";
    throw ConvergenceError(msg.str());
  }
}

// Limited-memory BFGS two-loop recursion in the Riesz inner product.
class Lbfgs {
 public:
  explicit Lbfgs(int memory) : memory_(memory) {}

  void reset() {
    s_.clear();
    y_.clear();
  }

  void push(Vector s, Vector y, const RieszSolver& ip) {
    const double sy = ip.inner(s, y);
    if (!(sy > 0.0)) return;
    s_.push_back(std::move(s));
    y_.push_back(std::move(y));
    if (static_cast<int>(s_.size()) > memory_) {
      s_.pop_front();
      y_.pop_front();
    }
  }

  // Returns H * r for the Riesz gradient r.
  Vector apply(const Vector& r, const RieszSolver& ip) const {
    Vector q = r;
    std::vector<double> alpha(s_.size());
    for (std::size_t i = s_.size(); i-- > 0;) {
      alpha[i] = ip.inner(s_[i], q) / ip.inner(y_[i], s_[i]);
      q -= alpha[i] * y_[i];
    }
    if (!s_.empty()) q *= ip.inner(s_.back(), y_.back()) / ip.inner(y_.back(), y_.back());
    for (std::size_t i = 0; i < s_.size(); ++i) {
      const double beta = ip.inner(y_[i], q) / ip.inner(y_[i], s_[i]);
      q += (alpha[i] - beta) * s_[i];
    }
    return q;
  }

 private:
  int memory_;
  std::deque<Vector> s_, y_;
};

}  // namespace

ShapeIterate optimize(const TriMesh& mesh0, const BranchPointState& state0, double lambda_star,
                      double epsilon, const OptimizeOptions& options) {
  if (!(options.initial_step > 0.0) || options.initial_step > options.max_step) {
    throw InvalidArgument("optimize: need 0 < initial_step <= max_step");
  }
  if (options.C <= 0.0) throw InvalidArgument("optimize: C must be positive");

  ShapeIterate it{mesh0, state0, objective(state0, lambda_star), options.initial_step, {}, 0, 0};
  if (it.objective_value <= epsilon) return it;

  auto problem = std::make_unique<AllenCahn>(mesh0);
  {
    const Vector r = ms_residual(*problem, state0);
    if (r.norm() > std::max(1e-8, 10.0 * options.newton.tolerance)) {
      throw InvalidArgument("optimize: initial state is not a converged Moore-Spence solution");
    }
  }
  if (options.preflight) preflight(*problem, it.state, lambda_star, options.newton);

  auto riesz = std::make_unique<RieszSolver>(it.mesh, options.inner_product);
  Lbfgs memory(options.lbfgs_memory);
  Vector riesz_grad;  // A^-1 g at the current iterate
  Vector direction;
  bool need_direction = true;
  double s = options.initial_step;

  for (int attempt = 1; attempt <= options.max_iterations; ++attempt) {
    if (need_direction) {
      const VertexField g = shape_gradient(*problem, it.state, lambda_star);
      riesz_grad = riesz->solve(flatten(g));
      direction = -riesz_grad;
      if (options.lbfgs) {
        direction = -memory.apply(riesz_grad, *riesz);
        if (riesz->inner(direction, riesz_grad) >= 0.0) {
          memory.reset();
          direction = -riesz_grad;
        }
      }
      if (direction.norm() == 0.0) {
        // No admissible descent direction: every step length is rejected.
        throw OptimizationError(
            "optimize: step length fell below the floor (no admissible descent direction)", it);
      }
      need_direction = false;
    }

    HistoryRecord rec;
    rec.iteration = attempt;
    rec.step = s;
    rec.objective = it.objective_value;
    rec.lambda = it.state.lambda;

    const VertexField disp = unflatten(s * direction);
    BranchPointState trial_state;
    std::unique_ptr<AllenCahn> trial_problem;
    if (min_jacobian_ratio(it.mesh, disp) <= options.tangle_threshold) {
      rec.reason = "tangled";
    } else {
      trial_problem = std::make_unique<AllenCahn>(apply_displacement(it.mesh, disp));
      try {
        trial_state = ms_solve(*trial_problem, it.state, options.newton);
        rec.objective = objective(trial_state, lambda_star);
        rec.lambda = trial_state.lambda;
        if (!accept_step(it.state.u, trial_state.u, *trial_problem, options.C)) {
          rec.reason = "branch";
        } else if (rec.objective > it.objective_value) {
          rec.reason = "increase";
        }
      } catch (const Error&) {
        rec.reason = "newton";
      }
    }

    if (!rec.reason.empty()) {
      rec.accepted = false;
      it.history.push_back(rec);
      ++it.rejected_steps;
      s *= 0.5;
      it.step_length = s;
      if (s < options.step_floor) {
        throw OptimizationError("optimize: step length fell below the floor without acceptance", it);
      }
      continue;
    }

    rec.accepted = true;
    it.history.push_back(rec);
    ++it.accepted_steps;
    problem = std::move(trial_problem);
    it.mesh = problem->mesh();
    it.state = std::move(trial_state);
    it.objective_value = rec.objective;
    riesz = std::make_unique<RieszSolver>(it.mesh, options.inner_product);
    if (options.lbfgs) {
      const Vector step = s * direction;
      const Vector old_grad = riesz_grad;
      riesz_grad = riesz->solve(flatten(shape_gradient(*problem, it.state, lambda_star)));
      memory.push(step, riesz_grad - old_grad, *riesz);
    }
    need_direction = true;
    s = std::min(options.max_step, s * options.growth);
    it.step_length = s;
    if (options.on_accept) options.on_accept(it);
    if (it.objective_value <= epsilon) return it;
  }
  throw OptimizationError("optimize: iteration cap reached", it);
}

double integral_functional(const TriMesh& mesh, const std::function<double(Vec2)>& f) {
  const auto& rule = degree5_rule();
  const auto& x = mesh.vertices();
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Triangle& tri = mesh.triangles()[t];
    double local = 0.0;
    for (const QuadraturePoint& q : rule) {
      const Vec2 p = q.l0 * x[tri[0]] + q.l1 * x[tri[1]] + q.l2 * x[tri[2]];
      local += q.weight * f(p);
    }
    total += mesh.signed_area(t) * local;
  }
  return total;
}

VertexField integral_functional_gradient(const TriMesh& mesh, const std::function<double(Vec2)>& f,
                                         const std::function<Vec2(Vec2)>& grad_f) {
  const auto& rule = degree5_rule();
  const auto& x = mesh.vertices();
  VertexField g(mesh.num_vertices());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Triangle& tri = mesh.triangles()[t];
    const double area = mesh.signed_area(t);
    double mean = 0.0;
    std::array<Vec2, 3> moved{};
    for (const QuadraturePoint& q : rule) {
      const Vec2 p = q.l0 * x[tri[0]] + q.l1 * x[tri[1]] + q.l2 * x[tri[2]];
      mean += q.weight * f(p);
      const Vec2 df = grad_f(p);
      const double l[3] = {q.l0, q.l1, q.l2};
      for (int a = 0; a < 3; ++a) moved[a] += (q.weight * l[a]) * df;
    }
    for (int a = 0; a < 3; ++a) {
      const Vec2 next = x[tri[(a + 1) % 3]];
      const Vec2 prev = x[tri[(a + 2) % 3]];
      const Vec2 darea{0.5 * (next.y - prev.y), 0.5 * (prev.x - next.x)};
      g[tri[a]] += mean * darea + area * moved[a];
    }
  }
  for (std::size_t v = 0; v < g.size(); ++v) {
    if (mesh.fixed_vertices()[v]) g[v] = {};
  }
  return g;
}

}  // namespace bifctl
