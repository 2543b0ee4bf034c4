#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bifctl/assembly.hpp"
#include "bifctl/error.hpp"
#include "bifctl/moore_spence.hpp"

namespace bifctl {

/// Newton iterate came within roundoff of a deflated solution.
class DeflationSingularity : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

/// Scalar used as the vertical axis of a bifurcation diagram.
struct Diagnostic {
  enum class Kind { H1Norm, PointValue };
  Kind kind = Kind::H1Norm;
  Vec2 point{};

  double operator()(const AllenCahn& problem, const Field& u) const;
  std::string describe() const;
};

/// Shifted deflation M(u) = prod_i (||u - u_i||_U^-power + shift).
struct Deflation {
  double power = 2.0;
  double shift = 1.0;
};

/// Solves F(u, lambda) = 0 by Newton's method with residual-monotone
/// backtracking (factor 1/2, at most options.max_halvings). With a non-empty
/// deflation set the residual is premultiplied by the deflation operator so
/// known solutions repel the iteration. Converges when the undeflated
/// free-entry residual norm is at most options.tolerance.
///
/// Throws ConvergenceError (or DeflationSingularity) on failure.
Field newton(const AllenCahn& problem, const Field& u0, double lambda,
             const NewtonOptions& options = {1e-10, 50, 8},
             const std::vector<Field>& deflation_set = {}, const Deflation& deflation = {});

struct BranchSample {
  double lambda = 0.0;
  double diagnostic = 0.0;
  Field u;
};

struct FoldPoint {
  double lambda = 0.0;
  double diagnostic = 0.0;
  Field u;
  double localization = 0.0;  // bound on |lambda - lambda_fold|
  double slope = 0.0;         // dlambda/ds at the reported point
};

struct Branch {
  std::vector<BranchSample> samples;
  std::vector<FoldPoint> folds;
  bool trivial = false;
  std::optional<double> birth;  // lambda where the branch meets the trivial branch
  std::string end_reason;
};

struct ArclengthOptions {
  NewtonOptions newton{1e-10, 20, 8};
  double lambda_min = -std::numeric_limits<double>::infinity();
  double lambda_max = std::numeric_limits<double>::infinity();
  /// Stop once h1_norm(u) falls below this (branch reached u = 0). 0 disables.
  double stop_norm = 0.0;
  double fold_tolerance = 1e-4;
  double fold_slope = 1e-3;
  int max_step_halvings = 8;
  Diagnostic diagnostic;
};

/// Pseudo-arclength continuation from a solution (u0, lambda0). The sign of
/// ds picks the initial direction (ds > 0: lambda increasing). Arclength is
/// measured in the U-norm for u plus |dlambda|. Uses a secant predictor and
/// a Keller orthogonality constraint; folds are flagged where the
/// lambda-component of the tangent changes sign and are localized by
/// bisection. A corrector failure halves the step up to max_step_halvings
/// times, then returns the partial branch.
Branch arclength_continue(const AllenCahn& problem, const Field& u0, double lambda0, double ds,
                          int n_steps, const ArclengthOptions& options = {});

struct Diagram {
  std::vector<Branch> branches;  // branch 0 is the trivial branch
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  std::string diagnostic;
  std::vector<double> births;  // bifurcation points on the trivial branch
};

struct DeflatedContinuationOptions {
  double lambda_start = 0.0;
  double lambda_end = 1.0;
  double dlambda = 0.1;
  int max_branches = 16;
  int seed_modes = 4;
  double seed_eps = 1e-2;
  int attempts_per_seed = 3;
  NewtonOptions newton{1e-10, 30, 8};
  Deflation deflation;
  Diagnostic diagnostic;
  bool arclength_complement = true;
  double arclength_ds = 0.05;
  int arclength_steps = 400;
  double trivial_norm = 0.05;
};

/// Bifurcation diagram by deflated continuation in lambda, complemented with
/// arclength continuation through folds. Births on the trivial branch are
/// found from zero crossings of the eigenvalues of F_u(0, lambda) and
/// localized with the Moore-Spence system.
Diagram deflated_continuation(const AllenCahn& problem, const DeflatedContinuationOptions& options);

/// Births merged when within `relative` of each other.
std::vector<double> distinct_births(const Diagram& diagram, double relative = 0.01);

/// CSV with header branch_id,lambda,diagnostic,is_fold.
std::string diagram_csv(const Diagram& diagram);
void write_diagram_csv(const Diagram& diagram, const std::filesystem::path& path);

}  // namespace bifctl
