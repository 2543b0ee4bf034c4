#pragma once

#include <string>
#include <vector>

#include "bifctl/assembly.hpp"

namespace bifctl {

/// A solution (u, lambda, phi) of the Moore-Spence system
///
///   F(u, lambda) = 0,   F_u(u, lambda) phi = 0,   ||phi||_U^2 = 1,
///
/// i.e. a simple singular point with its null vector. Fields are full length.
struct BranchPointState {
  Field u;
  double lambda = 0.0;
  Field phi;
};

struct NewtonOptions {
  double tolerance = 1e-9;
  int max_iterations = 50;
  int max_halvings = 8;
};

/// Stacked unknown (u_free, lambda, phi_free) of length 2 * num_free + 1.
Vector pack_state(const DofMap& dofs, const BranchPointState& state);
BranchPointState unpack_state(const DofMap& dofs, const Vector& z);

/// [F(u, lambda); F_u(u, lambda) phi; h1(phi, phi) - 1] on free dofs.
Vector ms_residual(const AllenCahn& problem, const BranchPointState& state);

/// Bordered Jacobian, rows (u-eq, phi-eq, norm-eq) by columns (du, dlambda, dphi):
///
///   [ F_u        F_lambda      0          ]
///   [ F_uu[.]phi F_ulambda phi F_u        ]
///   [ 0          0             2 (phi, .)_U ]
SparseMatrix ms_jacobian(const AllenCahn& problem, const BranchPointState& state);

/// Newton on the Moore-Spence system with residual-monotone backtracking.
/// The returned phi has its largest-magnitude coefficient positive.
///
/// Throws InvalidArgument if h1_norm(guess.phi) < 0.1, SingularMatrix if the
/// bordered matrix cannot be factored, ConvergenceError otherwise.
BranchPointState ms_solve(const AllenCahn& problem, BranchPointState guess,
                          const NewtonOptions& options = {});

struct MsCandidate {
  double mu = 0.0;  // eigenvalue used as seed
  bool converged = false;
  BranchPointState state;
  double distance = 0.0;  // h1_norm(u_seed - u)
  std::string message;
};

struct MsInitialization {
  BranchPointState selected;
  std::size_t selected_index = 0;
  std::vector<MsCandidate> candidates;
};

/// Seeds Moore-Spence solves from the n smallest-|mu| eigenpairs of
/// F_u(u_seed, lambda_seed) x = mu M x and returns the converged solution
/// closest to u_seed in the U-norm. Ties (equal distance to within 1e-8
/// relative) go to the candidate whose lambda is closest to lambda_seed, then
/// to the smaller lambda.
MsInitialization ms_initialize(const AllenCahn& problem, const Field& u_seed, double lambda_seed,
                               int n = 5, const NewtonOptions& options = {});

// Mesh-level conveniences.
Vector ms_residual(const TriMesh& mesh, const BranchPointState& state);
SparseMatrix ms_jacobian(const TriMesh& mesh, const BranchPointState& state);
BranchPointState ms_solve(const TriMesh& mesh, BranchPointState guess,
                          const NewtonOptions& options = {});
MsInitialization ms_initialize(const TriMesh& mesh, const Field& u_seed, double lambda_seed,
                               int n = 5, const NewtonOptions& options = {});

}  // namespace bifctl
