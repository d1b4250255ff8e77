#pragma once

#include "deepcam/structured_ops.hpp"
#include "deepcam/types.hpp"

#include <vector>

namespace deepcam {

/// Weights of the learning objective f = g + kappa*h + upsilon*l (+ mu*p).
struct ObjectiveConfig {
  double nu = 0;       // sparsity sharpness, > 0
  double kappa = 0;    // information-preservation weight
  double upsilon = 0;  // linear-dependence barrier weight
  double mu = 0;       // joint-sparsity weight (CAD only)

  void validate() const {
    if (nu <= 0) throw ValidationError("ObjectiveConfig: nu must be positive");
    if (kappa < 0 || upsilon < 0 || mu < 0)
      throw ValidationError("ObjectiveConfig: negative regularization weight");
  }
};

/// Value and gradient of one objective term with respect to the compact
/// dictionary. `barrier` marks a +inf value whose gradient carries no
/// information (the optimizer treats the point as infeasible).
struct ValueGrad {
  double value = 0;
  Matrix grad;
  bool barrier = false;
};

/// Precomputed machinery of the information-preservation term: the right
/// dual matrices R(w_i, n) of the K signal-subspace basis vectors, plus the
/// total convolutional row count q = out_positions * m.
class InfoTerm {
public:
  InfoTerm() = default;
  /// Build from the subspace basis W (l x K) under window geometry g.
  InfoTerm(const Matrix& W, const PatchGeom& g, Index num_atoms);

  Index K() const { return static_cast<Index>(right_duals_.size()); }
  Index atom_len() const { return K() ? right_duals_[0].cols() : 0; }
  double q() const { return q_; }
  const Matrix& right_dual(Index i) const { return right_duals_[i]; }
  /// Gram block Sigma_i = R(w_i)^T R(w_i).
  Matrix gram(Index i) const { return right_duals_[i].transpose() * right_duals_[i]; }

  /// Q matrix with columns vec(R(w_i) Omega^T), size q x K.
  Matrix assemble_q(const Matrix& omega) const;

private:
  std::vector<Matrix> right_duals_;
  double q_ = 0;
};

/// Log-square sparsity g(Omega) over the columns of x (n x N2).
ValueGrad sparsity_value_grad(const Matrix& omega, const Matrix& x, double nu);

/// Information preservation h(Omega) = -log det((1/q) Q^T Q) / (K log K).
/// Returns a +inf barrier when Q^T Q is numerically singular.
ValueGrad info_value_grad(const Matrix& omega, const InfoTerm& info);

/// Pairwise linear-dependence log barrier l(Omega).
ValueGrad barrier_value_grad(const Matrix& omega);

/// Joint sparsity p(Psi) over aligned columns of yhat and e.
ValueGrad joint_sparsity_value_grad(const Matrix& psi, const Matrix& yhat,
                                    const Matrix& e, double nu);

/// Per-atom scale of the response distribution: sample standard deviation
/// of omega_j^T x_i over the columns of x. Zero-variance atoms yield 0.
Vector laplacian_scales(const Matrix& omega, const Matrix& x);

}  // namespace deepcam
