#include "bifctl/moore_spence.hpp"

#include <cmath>
#include <sstream>

#include "bifctl/error.hpp"

namespace bifctl {

namespace {

void check_state(const AllenCahn& problem, const BranchPointState& s, const char* what) {
  const auto n = static_cast<Eigen::Index>(problem.mesh().num_vertices());
  if (s.u.size() != n || s.phi.size() != n) {
    throw InvalidArgument(std::string(what) + ": state fields do not match mesh vertex count");
  }
}

void add_block(std::vector<Triplet>& trips, const SparseMatrix& block, Eigen::Index row0,
               Eigen::Index col0) {
  for (Eigen::Index r = 0; r < block.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(block, r); it; ++it) {
      trips.emplace_back(row0 + it.row(), col0 + it.col(), it.value());
    }
  }
}

void fix_sign(Field& phi) {
  Eigen::Index imax = 0;
  phi.cwiseAbs().maxCoeff(&imax);
  if (phi(imax) < 0.0) phi = -phi;
}

}  // namespace

Vector pack_state(const DofMap& dofs, const BranchPointState& state) {
  const int n = dofs.num_free();
  Vector z(2 * n + 1);
  z.head(n) = dofs.restrict_vector(state.u);
  z(n) = state.lambda;
  z.tail(n) = dofs.restrict_vector(state.phi);
  return z;
}

BranchPointState unpack_state(const DofMap& dofs, const Vector& z) {
  const int n = dofs.num_free();
  if (z.size() != 2 * n + 1) throw InvalidArgument("unpack_state: size mismatch");
  return {dofs.prolong(z.head(n)), z(n), dofs.prolong(z.tail(n))};
}

Vector ms_residual(const AllenCahn& problem, const BranchPointState& state) {
  check_state(problem, state, "ms_residual");
  const DofMap& dofs = problem.dofs();
  const int n = dofs.num_free();
  Vector r(2 * n + 1);
  r.head(n) = dofs.restrict_vector(problem.residual(state.u, state.lambda));
  r.segment(n, n) = dofs.restrict_vector(problem.jacobian_u(state.u, state.lambda) * state.phi);
  r(2 * n) = problem.h1_inner(state.phi, state.phi) - 1.0;
  return r;
}

SparseMatrix ms_jacobian(const AllenCahn& problem, const BranchPointState& state) {
  check_state(problem, state, "ms_jacobian");
  const DofMap& dofs = problem.dofs();
  const int n = dofs.num_free();

  const SparseMatrix fu = dofs.restrict_matrix(problem.jacobian_u(state.u, state.lambda));
  const SparseMatrix fuu = dofs.restrict_matrix(problem.second_derivative_matrix(state.u, state.phi));
  const Vector fl = dofs.restrict_vector(problem.residual_lambda(state.u));
  const Vector ful = dofs.restrict_vector(problem.mixed_derivative_action(state.phi));
  const Vector gphi = dofs.restrict_vector(problem.h1_gram() * state.phi);

  std::vector<Triplet> trips;
  trips.reserve(2 * fu.nonZeros() + fuu.nonZeros() + 3 * n);
  add_block(trips, fu, 0, 0);
  add_block(trips, fuu, n, 0);
  add_block(trips, fu, n, n + 1);
  for (int i = 0; i < n; ++i) {
    trips.emplace_back(i, n, fl(i));
    trips.emplace_back(n + i, n, ful(i));
    trips.emplace_back(2 * n, n + 1 + i, 2.0 * gphi(i));
  }
  return from_triplets(2 * n + 1, trips);
}

BranchPointState ms_solve(const AllenCahn& problem, BranchPointState guess,
                          const NewtonOptions& options) {
  check_state(problem, guess, "ms_solve");
  if (problem.h1_norm(guess.phi) < 0.1) {
    throw InvalidArgument("ms_solve: initial null-vector guess has U-norm below 0.1");
  }
  const DofMap& dofs = problem.dofs();
  BranchPointState state = guess;
  Vector r = ms_residual(problem, state);
  double norm = r.norm();

  for (int it = 0; it <= options.max_iterations; ++it) {
    if (norm <= options.tolerance) {
      fix_sign(state.phi);
      return state;
    }
    if (it == options.max_iterations) break;
    const SparseLu lu(ms_jacobian(problem, state));
    const Vector dz = lu.solve(Vector(-r));
    const Vector z = pack_state(dofs, state);

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
      BranchPointState trial = unpack_state(dofs, z + step * dz);
      Vector rt = ms_residual(problem, trial);
      const double nt = rt.norm();
      if (std::isfinite(nt) && (nt < norm || nt <= options.tolerance)) {
        state = std::move(trial);
        r = std::move(rt);
        norm = nt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "ms_solve: backtracking failed at iteration " << it << ", residual " << norm;
      throw ConvergenceError(msg.str());
    }
  }
  std::ostringstream msg;
  msg << "ms_solve: no convergence in " << options.max_iterations << " iterations, residual "
      << norm;
  throw ConvergenceError(msg.str());
}

MsInitialization ms_initialize(const AllenCahn& problem, const Field& u_seed, double lambda_seed,
                               int n, const NewtonOptions& options) {
  if (n < 1) throw InvalidArgument("ms_initialize: n must be at least 1");
  const DofMap& dofs = problem.dofs();
  if (u_seed.size() != dofs.num_vertices()) {
    throw InvalidArgument("ms_initialize: seed field does not match mesh vertex count");
  }
  const double feasibility = dofs.restrict_vector(problem.residual(u_seed, lambda_seed)).norm();
  if (feasibility > std::max(1e-8, 10.0 * options.tolerance)) {
    std::ostringstream msg;
    msg << "ms_initialize: seed is not a solution (residual " << feasibility << ")";
    throw InvalidArgument(msg.str());
  }

  const SparseMatrix a = dofs.restrict_matrix(problem.jacobian_u(u_seed, lambda_seed));
  const SparseMatrix b = dofs.restrict_matrix(problem.mass());
  const auto pairs = smallest_eigenpairs(a, b, std::min(n, dofs.num_free()));

  MsInitialization out;
  for (const EigenPair& pair : pairs) {
    MsCandidate cand;
    cand.mu = pair.value;
    Field phi = dofs.prolong(pair.vector);
    phi /= problem.h1_norm(phi);
    try {
      cand.state = ms_solve(problem, {u_seed, lambda_seed, phi}, options);
      cand.converged = true;
      cand.distance = problem.h1_norm(Field(u_seed - cand.state.u));
    } catch (const Error& e) {
      cand.message = e.what();
    }
    out.candidates.push_back(std::move(cand));
  }

  const double scale = std::max(1.0, problem.h1_norm(u_seed));
  bool found = false;
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    const MsCandidate& c = out.candidates[i];
    if (!c.converged) continue;
    if (!found) {
      out.selected_index = i;
      found = true;
      continue;
    }
    const MsCandidate& best = out.candidates[out.selected_index];
    const double tie = 1e-8 * scale;
    bool better = false;
    if (c.distance < best.distance - tie) {
      better = true;
    } else if (std::abs(c.distance - best.distance) <= tie) {
      const double dc = std::abs(c.state.lambda - lambda_seed);
      const double db = std::abs(best.state.lambda - lambda_seed);
      if (dc < db - 1e-12) {
        better = true;
      } else if (std::abs(dc - db) <= 1e-12 && c.state.lambda < best.state.lambda) {
        better = true;
      }
    }
    if (better) out.selected_index = i;
  }
  if (!found) {
    std::ostringstream msg;
    msg << "ms_initialize: all " << out.candidates.size() << " Moore-Spence solves failed";
    for (const auto& c : out.candidates) msg << "\n  mu=" << c.mu << ": " << c.message;
    throw ConvergenceError(msg.str());
  }
  out.selected = out.candidates[out.selected_index].state;
  return out;
}

Vector ms_residual(const TriMesh& mesh, const BranchPointState& state) {
  return ms_residual(AllenCahn(mesh), state);
}
SparseMatrix ms_jacobian(const TriMesh& mesh, const BranchPointState& state) {
  return ms_jacobian(AllenCahn(mesh), state);
}
BranchPointState ms_solve(const TriMesh& mesh, BranchPointState guess, const NewtonOptions& options) {
  return ms_solve(AllenCahn(mesh), std::move(guess), options);
}
MsInitialization ms_initialize(const TriMesh& mesh, const Field& u_seed, double lambda_seed, int n,
                               const NewtonOptions& options) {
  return ms_initialize(AllenCahn(mesh), u_seed, lambda_seed, n, options);
}

}  // namespace bifctl
