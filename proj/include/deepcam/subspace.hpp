#pragma once

#include "deepcam/structured_ops.hpp"
#include "deepcam/types.hpp"

#include <cstdint>

namespace deepcam {

/// Orthonormal split of R^dim into the signal subspace of a data matrix
/// (columns W, rank K) and its orthogonal complement (columns U).
struct SubspaceBasis {
  Matrix W;  // dim x K
  Matrix U;  // dim x (dim - K)
  Index K = 0;
};

/// Leading eigen-directions of data*data^T capturing at least `energy` of
/// the squared-singular-value mass. Columns beyond `max_columns` are
/// uniformly subsampled (seeded) before the Gram matrix is formed.
SubspaceBasis signal_subspace(const Matrix& data, double energy = 0.9999,
                              Index max_columns = 50'000, std::uint64_t seed = 0);

/// P_S = I - U U^T for orthonormal U (the pseudo-inverse of U^T is U).
Matrix complement_projector(const Matrix& U);

/// Joint projection-and-restructure matrix P (n x n) for 1-D Toeplitz
/// operators: row j is the average, over the leading n positions, of the
/// j-th-diagonal entries of T(w^T, l) P_S^T expressed through the right
/// dual rows of P_S. Fixed 1/n denominator; positions that do not exist
/// for short signals are dropped from the sum but not from the count.
Matrix averaged_projector(const Matrix& p_s, Index n);

/// 2-D generalization: entries tied to the same filter coefficient are
/// averaged over all output positions of the window geometry.
Matrix averaged_projector(const Matrix& p_s, const PatchGeom& g);

/// Projector onto the tangent direction set at a unit atom w of the sphere
/// intersected with V-perp, composed with the restructure matrix P:
/// P_w = P (I - Q^+ Q) with Q = [2w, V]^T.
Matrix tangent_projector(const Vector& w, const Matrix& V, const Matrix& P);

/// (I - Q^+ Q) g without forming the n x n projector.
Vector tangent_project(const Vector& w, const Matrix& V, const Vector& g);

}  // namespace deepcam
