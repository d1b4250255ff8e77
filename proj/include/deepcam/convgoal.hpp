#pragma once

#include "deepcam/objectives.hpp"
#include "deepcam/subspace.hpp"
#include "deepcam/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <utility>

namespace deepcam {

struct OptimizerConfig {
  int max_batch_iters = 100;  // conjugate gradient iterations per batch
  int num_batches = 10;
  double beta = 0.5;        // line-search shrink factor
  double c1 = 1e-4;         // Armijo sufficient-decrease constant
  double eps_halt = 1e-4;   // relative per-batch decrease below which we stop
  int max_backtracks = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_batch_iters < 1 || num_batches < 1)
      throw ValidationError("OptimizerConfig: iteration/batch counts must be >= 1");
    if (beta <= 0 || beta >= 1) throw ValidationError("OptimizerConfig: beta in (0,1) required");
    if (c1 <= 0 || c1 >= 1) throw ValidationError("OptimizerConfig: c1 in (0,1) required");
  }
};

/// Everything the learner needs besides the iterate itself. IPAD problems
/// carry the small-patch data and the super-patch subspace machinery; CAD
/// problems additionally carry the (yhat, e) pair for the joint term.
struct LearnProblem {
  Matrix sparsity_data;  // n x N2
  InfoTerm info;
  Matrix V;  // n x r orthonormal basis the atoms must be orthogonal to
  Matrix P;  // n x n projection/restructure matrix
  ObjectiveConfig weights;
  bool has_joint = false;
  Matrix joint_yhat, joint_e;  // n x N2, aligned with sparsity_data columns

  void validate() const;
};

struct ObjectiveBreakdown {
  double f = 0, g = 0, h = 0, l = 0, p = 0;
  bool barrier = false;
};

struct IterationRecord {
  int batch = 0;
  int iter = 0;
  ObjectiveBreakdown terms;
  double step = 0;
};
using IterCallback = std::function<void(const IterationRecord&, const Matrix& omega)>;

/// Objective terms (and optionally the assembled gradient) on one column
/// range of the data.
ObjectiveBreakdown evaluate_objective(const Matrix& omega, const LearnProblem& prob,
                                      Index col_begin, Index col_count,
                                      Matrix* grad = nullptr);
inline ObjectiveBreakdown evaluate_objective(const Matrix& omega, const LearnProblem& prob,
                                             Matrix* grad = nullptr) {
  return evaluate_objective(omega, prob, 0, prob.sparsity_data.cols(), grad);
}

/// Map rows onto the feasible set: project onto V-perp, renormalize, twice.
/// Rows that vanish under the projection are re-randomized within V-perp.
Matrix retract(Matrix omega, const Matrix& V, std::mt19937_64& rng);

/// Polak-Ribiere+ coefficient with nonnegativity clamp.
double pr_plus_coefficient(const Matrix& grad_now, const Matrix& grad_prev);

/// Conjugate direction from the current/previous projected gradients and the
/// transported previous direction; restarts to steepest descent whenever the
/// combination is not a descent direction.
Matrix cg_direction(const Matrix& grad_now, const Matrix& grad_prev,
                    const Matrix& dir_prev_transported, bool first);

struct LineSearchResult {
  bool accepted = false;
  double alpha = 0;
  double f = 0;
  Matrix omega;
};

/// Largest alpha = beta^k satisfying the Armijo condition against the
/// supplied evaluation of alpha -> (f(retract(omega + alpha dir)), iterate).
LineSearchResult backtracking_search(
    double f0, double slope, const OptimizerConfig& cfg,
    const std::function<std::pair<double, Matrix>(double)>& probe);

/// ConvGOAL+ (batched geometric conjugate gradient over the oblique-type
/// feasible set). Returns the learned dictionary; the callback, when given,
/// sees every accepted iterate.
Matrix learn_dictionary(const Matrix& omega0, const LearnProblem& prob,
                        const OptimizerConfig& cfg, std::ostream* log = nullptr,
                        const IterCallback& cb = {});

/// Generic rank of the convolutional dictionary operator for this geometry
/// and atom count, measured on a random (seeded) probe dictionary.
Index conv_dict_rank(const PatchGeom& g, Index num_atoms, std::uint64_t seed);

/// Assemble the learning problem for an information-preserving dictionary
/// from super-patch data xs (l x N1, window geometry g) and small-patch
/// data x (n x N2). The subspace basis is truncated to the operator's
/// generic achievable rank when the estimated signal rank exceeds it.
LearnProblem make_ipad_problem(const Matrix& xs, const PatchGeom& g, const Matrix& x,
                               Index num_atoms, const ObjectiveConfig& weights,
                               double subspace_energy, std::uint64_t seed,
                               std::ostream* log = nullptr);

/// Assemble the CAD learning problem over middle-resolution data yhat and
/// residual data e (both n' x N2). The feasible set forces zero-mean rows;
/// the information term and row-space projection come from yhat.
LearnProblem make_cad_problem(const Matrix& yhat, const Matrix& e, Index num_atoms,
                              const ObjectiveConfig& weights, double subspace_energy,
                              std::uint64_t seed, std::ostream* log = nullptr);

/// Gaussian init retracted onto the feasible set.
Matrix random_dictionary(Index rows, Index cols, const Matrix& V, std::mt19937_64& rng);

}  // namespace deepcam
