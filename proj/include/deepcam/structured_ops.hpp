#pragma once

#include "deepcam/tensor.hpp"
#include "deepcam/types.hpp"

namespace deepcam {

// Conventions used throughout:
//  * "convolution" is valid-mode cross-correlation (no kernel flip, no
//    padding): out[i] = sum_j w(j) * x(i + j). This matches the operator
//    definition that places coefficient j on the j-th upper diagonal and
//    the usual CNN convention.
//  * vec() is column-stacking; for a rows x cols x channels tensor the
//    order is y fastest, then x, then channel (see FeatureTensor).

/// Geometry of one signal viewed through a sliding window.
/// side == 0 means a plain 1-D signal of length `len` with window length
/// `win`; otherwise the signal is a side x side x channels tensor and the
/// window is win x win x channels.
struct PatchGeom {
  Index len = 0;       // total signal length l
  Index win = 0;       // window length n (1-D) or window side (2-D)
  Index side = 0;      // spatial side of the signal (0 for 1-D)
  Index channels = 1;  // channels of the signal (2-D only)

  static PatchGeom one_d(Index l, Index n) { return {l, n, 0, 1}; }
  static PatchGeom two_d(Index side, Index win, Index channels) {
    return {side * side * channels, win, side, channels};
  }

  bool is_2d() const { return side > 0; }
  Index out_side() const { return side - win + 1; }
  Index out_positions() const {
    return is_2d() ? out_side() * out_side() : len - win + 1;
  }
  Index atom_len() const { return is_2d() ? win * win * channels : win; }

  void validate() const {
    if (win < 1) throw ValidationError("PatchGeom: window must be positive");
    if (is_2d()) {
      if (len != side * side * channels)
        throw ValidationError("PatchGeom: len does not match side/channels");
      if (side < win)
        throw ValidationError("PatchGeom: signal side smaller than window");
    } else if (len < win) {
      throw ValidationError("PatchGeom: signal shorter than window");
    }
  }
};

/// A convolutional filter given by its coefficient vector. side == 0 means
/// a 1-D filter of length coeffs.size(); otherwise coeffs has length
/// side*side*channels laid out in canonical vec order.
struct FilterAtom {
  Vector coeffs;
  Index side = 0;
  Index channels = 1;

  static FilterAtom one_d(Vector w) { return {std::move(w), 0, 1}; }
  static FilterAtom two_d(Vector w, Index side, Index channels = 1);

  bool is_2d() const { return side > 0; }
  Index length() const { return coeffs.size(); }
  void validate() const;
};

double soft_threshold(double v, double lambda);
Vector soft_threshold(const Vector& v, double lambda);
Matrix soft_threshold(const Matrix& v, double lambda);
/// Per-row thresholds broadcast across columns (the lambda (x) 1 pattern).
Matrix soft_threshold_rows(const Matrix& v, const Vector& lambda);

/// Column-stacking vectorization and its exact inverse.
Vector vec(const Matrix& a);
Matrix mat(const Vector& v, Index rows, Index cols);

/// T(w^T, l) x: valid sliding inner product of a 1-D atom with a signal.
Vector toeplitz_apply(const Vector& atom, const Vector& x);

/// Right dual matrix R(x, n) (1-D) or its im2row generalization (2-D):
/// row r is the window of x seen by output position r, so that
/// right_dual(x, g) * w == the stacked valid convolution of w with x.
Matrix right_dual(const Vector& x, const PatchGeom& g);
inline Matrix right_dual(const Vector& x, Index n) {
  return right_dual(x, PatchGeom::one_d(x.size(), n));
}

/// R(x, n) * atom without forming the Toeplitz operator.
Vector right_dual_apply(const Vector& x, const Vector& atom);

/// Valid 2-D convolution of a (win x win x channels) filter with a tensor.
Matrix conv2d_valid(const FilterAtom& filter, const FeatureTensor& x);

/// H(Omega, l) x: stacked application of every row atom of omega (m x n)
/// to the signal x under geometry g; output length out_positions * m with
/// atom-major blocks.
Vector conv_dict_apply(const Matrix& omega, const Vector& x, const PatchGeom& g);

/// Batched conv_dict_apply over the columns of xs.
Matrix conv_dict_features(const Matrix& omega, const Matrix& xs, const PatchGeom& g);

// ---------------------------------------------------------------------------
// Explicit materializations. Test and verification use only: they build the
// dense structured operators from their index definitions, independently of
// the sliding-window application paths above. Capped at 1e6 entries.
// ---------------------------------------------------------------------------

/// Dense p x l Toeplitz operator with atom coefficient j on the j-th upper
/// diagonal.
Matrix materialize_toeplitz(const Vector& atom, Index l);

/// Dense out_positions x len operator for one atom under geometry g
/// (doubly-block-Toeplitz in the 2-D case).
Matrix materialize_operator(const Vector& atom, const PatchGeom& g);

/// Dense q x l convolutional analysis dictionary: the vertical stack of the
/// per-atom operators of omega's rows.
Matrix materialize_conv_dict(const Matrix& omega, const PatchGeom& g);

}  // namespace deepcam
