#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bifctl/assembly.hpp"
#include "bifctl/error.hpp"
#include "bifctl/mesh.hpp"
#include "bifctl/moore_spence.hpp"

namespace bifctl {

/// Vector-valued inner product used to turn shape derivatives into
/// displacements.
struct InnerProductSpec {
  enum class Kind { H1Vector, LinearElasticity };
  Kind kind = Kind::H1Vector;
  double mu = 1.0;      // elasticity shear modulus
  double lambda = 1.0;  // elasticity first Lame parameter
};

/// (lambda - lambda_star)^2.
double objective(const BranchPointState& state, double lambda_star);

/// Derivative of the objective with respect to vertex coordinates, through
/// the discrete adjoint of the Moore-Spence system. Zero at fixed vertices.
VertexField shape_gradient(const AllenCahn& problem, const BranchPointState& state,
                           double lambda_star);
VertexField shape_gradient(const TriMesh& mesh, const BranchPointState& state, double lambda_star);

/// Gram matrix of the inner product on all 2 * num_vertices coordinates,
/// unknown 2 v + c for component c of vertex v.
SparseMatrix riesz_matrix(const TriMesh& mesh, const InnerProductSpec& ip);

/// Solves (dT, V)_ip = -<g, V> for all V vanishing on fixed vertices.
/// Throws InvalidArgument if every vertex is fixed.
VertexField riesz_update(const TriMesh& mesh, const VertexField& g, const InnerProductSpec& ip);

/// h1_norm(u_prev - u_new) <= C * h1_norm(u_new) on mesh_new.
bool accept_step(const Field& u_prev_on_new_mesh, const Field& u_new, const AllenCahn& problem_new,
                 double C);
bool accept_step(const Field& u_prev_on_new_mesh, const Field& u_new, const TriMesh& mesh_new,
                 double C);

/// Euclidean pairing sum_v g_v . w_v.
double pairing(const VertexField& g, const VertexField& w);

/// Remainders |J(s) - J(0) - s <g, W>| for s = s0, s0/2, ..., where J(s) is the
/// objective after re-solving Moore-Spence on the mesh moved by s W.
std::vector<double> taylor_remainders(const AllenCahn& problem, const BranchPointState& state,
                                      double lambda_star, const VertexField& direction, double s0,
                                      int levels, const NewtonOptions& newton = {});

struct HistoryRecord {
  int iteration = 0;
  double objective = 0.0;  // candidate objective (current objective when not evaluated)
  double lambda = 0.0;
  double step = 0.0;
  bool accepted = false;
  std::string reason;  // empty when accepted
};

struct ShapeIterate {
  TriMesh mesh;
  BranchPointState state;
  double objective_value = 0.0;
  double step_length = 0.0;
  std::vector<HistoryRecord> history;
  int accepted_steps = 0;
  int rejected_steps = 0;
};

struct OptimizeOptions {
  double C = 0.1;
  InnerProductSpec inner_product;
  double tangle_threshold = kDefaultTangleThreshold;
  double initial_step = 0.5;
  double max_step = 1.0;
  double growth = 1.5;
  double step_floor = 1e-8;
  int max_iterations = 200;  // attempted steps, accepted or not
  bool lbfgs = false;
  int lbfgs_memory = 10;
  bool preflight = true;
  NewtonOptions newton;
  /// Called after every accepted step.
  std::function<void(const ShapeIterate&)> on_accept;
};

/// Thrown when optimize stops without reaching the tolerance; carries the
/// last accepted iterate.
class OptimizationError : public ConvergenceError {
 public:
  OptimizationError(const std::string& what, ShapeIterate last)
      : ConvergenceError(what), last_(std::move(last)) {}
  const ShapeIterate& last() const { return last_; }

 private:
  ShapeIterate last_;
};

/// Moves the mesh until (lambda - lambda_star)^2 <= epsilon. Steepest descent
/// in the Riesz metric (or L-BFGS when options.lbfgs), step length grown by
/// options.growth on acceptance and halved on rejection. A trial step is
/// rejected when the displacement tangles the mesh, Moore-Spence Newton fails,
/// the state jumps to another branch (accept_step with options.C), or the
/// objective increases. Rejection reasons: "tangled", "newton", "branch",
/// "increase".
ShapeIterate optimize(const TriMesh& mesh0, const BranchPointState& state0, double lambda_star,
                      double epsilon, const OptimizeOptions& options = {});

/// Integral of f over the mesh with the degree-5 rule and its derivative with
/// respect to vertex coordinates (zero at fixed vertices).
double integral_functional(const TriMesh& mesh, const std::function<double(Vec2)>& f);
VertexField integral_functional_gradient(const TriMesh& mesh, const std::function<double(Vec2)>& f,
                                         const std::function<Vec2(Vec2)>& grad_f);

}  // namespace bifctl
