#include "deepcam/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace deepcam {

SubspaceBasis signal_subspace(const Matrix& data, double energy, Index max_columns,
                              std::uint64_t seed) {
  if (data.cols() < 1) throw ValidationError("signal_subspace: empty data matrix");
  if (energy <= 0 || energy > 1) throw ValidationError("signal_subspace: energy in (0,1] required");
  const Index dim = data.rows();

  Matrix gram;
  if (data.cols() > max_columns) {
    std::mt19937_64 rng(seed);
    std::vector<Index> idx(data.cols());
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix sub(dim, max_columns);
    for (Index k = 0; k < max_columns; ++k) sub.col(k) = data.col(idx[k]);
    gram = sub * sub.transpose();
  } else {
    gram = data * data.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("signal_subspace: eigensolver failed");

  // Eigenvalues ascending; work from the largest down.
  Vector ev = eig.eigenvalues().cwiseMax(0.0);
  const double total = ev.sum();
  if (total <= 0) throw ValidationError("signal_subspace: zero data matrix");

  Index k = 0;
  double acc = 0;
  while (k < dim && acc < energy * total) {
    acc += ev[dim - 1 - k];
    ++k;
  }

  SubspaceBasis basis;
  basis.K = k;
  basis.W.resize(dim, k);
  basis.U.resize(dim, dim - k);
  for (Index i = 0; i < k; ++i) basis.W.col(i) = eig.eigenvectors().col(dim - 1 - i);
  for (Index i = 0; i < dim - k; ++i) basis.U.col(i) = eig.eigenvectors().col(dim - k - 1 - i);
  return basis;
}

Matrix complement_projector(const Matrix& U) {
  const Index l = U.rows();
  if (U.cols() > 0) {
    const Matrix g = U.transpose() * U;
    if ((g - Matrix::Identity(U.cols(), U.cols())).cwiseAbs().maxCoeff() > 1e-8)
      throw ValidationError("complement_projector: U columns not orthonormal");
  }
  return Matrix::Identity(l, l) - U * U.transpose();
}

Matrix averaged_projector(const Matrix& p_s, Index n) {
  const Index l = p_s.rows();
  if (p_s.cols() != l) throw ValidationError("averaged_projector: P_S must be square");
  if (l < n) throw ValidationError("averaged_projector: l < n");
  const Index p = l - n + 1;
  Matrix out = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index t = 0; t < n; ++t) {
      // t-th diagonal position uses row j+t of P_S windowed at offset t.
      if (j + t >= l || t >= p) continue;
      out.row(j) += p_s.row(j + t).segment(t, n);
    }
    out.row(j) /= static_cast<double>(n);
  }
  return out;
}

Matrix averaged_projector(const Matrix& p_s, const PatchGeom& g) {
  g.validate();
  if (!g.is_2d()) return averaged_projector(p_s, g.win);
  if (p_s.rows() != g.len || p_s.cols() != g.len)
    throw ValidationError("averaged_projector: P_S size does not match geometry");
  const Index n = g.atom_len();
  const Index s = g.side, w = g.win, os = g.out_side();
  const Index positions = g.out_positions();
  Matrix out = Matrix::Zero(n, n);
  for (Index rx = 0; rx < os; ++rx)
    for (Index ry = 0; ry < os; ++ry) {
      Index j = 0;
      for (Index c = 0; c < g.channels; ++c)
        for (Index wx = 0; wx < w; ++wx)
          for (Index wy = 0; wy < w; ++wy) {
            const Index input = c * s * s + (rx + wx) * s + (ry + wy);
            // Window of the P_S row seen from this output position.
            Index jj = 0;
            for (Index cc = 0; cc < g.channels; ++cc)
              for (Index vx = 0; vx < w; ++vx)
                for (Index vy = 0; vy < w; ++vy)
                  out(j, jj++) += p_s(input, cc * s * s + (rx + vx) * s + (ry + vy));
            ++j;
          }
    }
  return out / static_cast<double>(positions);
}

namespace {

// Rows of Q = [2w, V]^T stacked; pseudo-inverse via SVD with relative
// cutoff 1e-10 * sigma_max.
Matrix stack_q(const Vector& w, const Matrix& V) {
  Matrix q(1 + V.cols(), w.size());
  q.row(0) = 2.0 * w.transpose();
  for (Index i = 0; i < V.cols(); ++i) q.row(1 + i) = V.col(i).transpose();
  return q;
}

Matrix pinv(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() ? sv[0] : 0.0);
  Vector inv = sv.unaryExpr([cutoff](double s) { return s > cutoff ? 1.0 / s : 0.0; });
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

Matrix tangent_projector(const Vector& w, const Matrix& V, const Matrix& P) {
  if (w.norm() < 1e-12) throw ValidationError("tangent_projector: zero atom");
  if (std::abs(w.norm() - 1.0) > 1e-8)
    throw ValidationError("tangent_projector: atom not unit-norm");
  const Index n = w.size();
  const Matrix q = stack_q(w, V);
  return P * (Matrix::Identity(n, n) - pinv(q) * q);
}

Vector tangent_project(const Vector& w, const Matrix& V, const Vector& g) {
  if (w.norm() < 1e-12) throw ValidationError("tangent_project: zero atom");
  const Matrix q = stack_q(w, V);
  return g - pinv(q) * (q * g);
}

}  // namespace deepcam
