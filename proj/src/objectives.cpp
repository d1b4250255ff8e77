#include "deepcam/objectives.hpp"

#include <cmath>
#include <limits>

namespace deepcam {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

InfoTerm::InfoTerm(const Matrix& W, const PatchGeom& g, Index num_atoms) {
  g.validate();
  if (W.rows() != g.len) throw ValidationError("InfoTerm: basis rows do not match geometry");
  right_duals_.reserve(W.cols());
  for (Index i = 0; i < W.cols(); ++i)
    right_duals_.push_back(deepcam::right_dual(W.col(i), g));
  q_ = static_cast<double>(g.out_positions() * num_atoms);
}

Matrix InfoTerm::assemble_q(const Matrix& omega) const {
  const Index k = K();
  if (k == 0) throw ValidationError("InfoTerm: empty basis");
  if (omega.cols() != atom_len()) throw ValidationError("InfoTerm: atom length mismatch");
  const Index rows = right_duals_[0].rows() * omega.rows();
  Matrix q(rows, k);
  for (Index i = 0; i < k; ++i) q.col(i) = vec(right_duals_[i] * omega.transpose());
  return q;
}

ValueGrad sparsity_value_grad(const Matrix& omega, const Matrix& x, double nu) {
  if (nu <= 0) throw ValidationError("sparsity_value_grad: nu must be positive");
  if (omega.cols() != x.rows()) throw ValidationError("sparsity_value_grad: dimension mismatch");
  if (x.cols() < 1) throw ValidationError("sparsity_value_grad: empty data");
  const Index m = omega.rows();
  const double c = 1.0 / (static_cast<double>(x.cols()) * static_cast<double>(m) *
                          std::log1p(nu));
  const Matrix resp = omega * x;  // m x N2
  double value = 0;
  Matrix weighted(m, x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < m; ++i) {
      const double r = resp(i, j);
      const double den = 1.0 + nu * r * r;
      value += std::log(den);
      weighted(i, j) = 2.0 * nu * r / den;
    }
  ValueGrad out;
  out.value = c * value;
  out.grad = c * (weighted * x.transpose());
  return out;
}

ValueGrad info_value_grad(const Matrix& omega, const InfoTerm& info) {
  const Index k = info.K();
  if (k == 0) throw ValidationError("info_value_grad: empty info term");
  const double denom =
      k >= 2 ? static_cast<double>(k) * std::log(static_cast<double>(k)) : 1.0;

  const Matrix q = info.assemble_q(omega);
  const Matrix sigma_q = q.transpose() * q;

  ValueGrad out;
  out.grad = Matrix::Zero(omega.rows(), omega.cols());
  if (q.rows() < k) {
    out.value = kInf;
    out.barrier = true;
    return out;
  }

  Eigen::LLT<Matrix> llt(sigma_q);
  if (llt.info() != Eigen::Success) {
    out.value = kInf;
    out.barrier = true;
    return out;
  }
  const Matrix lfac = llt.matrixL();
  double logdet = 0;
  for (Index i = 0; i < k; ++i) {
    if (lfac(i, i) <= 0) {
      out.value = kInf;
      out.barrier = true;
      return out;
    }
    logdet += 2.0 * std::log(lfac(i, i));
  }
  logdet -= static_cast<double>(k) * std::log(info.q());
  out.value = -logdet / denom;

  // grad = -(2/denom) sum_{i,j} (Sigma_Q^-1)_{ij} Omega R_i^T R_j, computed
  // as D = Q Sigma_Q^-1 column-blocked back into matrices: col j of D is
  // vec(sum_i A_ij R_i Omega^T).
  const Matrix d = llt.solve(q.transpose()).transpose();  // q.rows() x K
  const Index p = info.right_dual(0).rows();
  for (Index j = 0; j < k; ++j) {
    const Matrix dj = mat(d.col(j), p, omega.rows());
    out.grad.noalias() += dj.transpose() * info.right_dual(j);
  }
  out.grad *= -2.0 / denom;
  return out;
}

ValueGrad barrier_value_grad(const Matrix& omega) {
  const Index m = omega.rows();
  ValueGrad out;
  out.grad = Matrix::Zero(m, omega.cols());
  if (m < 2) return out;  // no pairs
  const double c = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
  const Matrix coh = omega * omega.transpose();
  double value = 0;
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j) {
      const double cc = coh(i, j);
      const double den = 1.0 - cc * cc;
      if (den <= 0) {
        out.value = kInf;
        out.barrier = true;
        out.grad.setZero();
        return out;
      }
      value -= std::log(den);
      const double w = 2.0 * cc / den;
      out.grad.row(i) += w * omega.row(j);
      out.grad.row(j) += w * omega.row(i);
    }
  out.value = c * value;
  out.grad *= c;
  return out;
}

ValueGrad joint_sparsity_value_grad(const Matrix& psi, const Matrix& yhat,
                                    const Matrix& e, double nu) {
  if (nu <= 0) throw ValidationError("joint_sparsity_value_grad: nu must be positive");
  if (yhat.rows() != e.rows() || yhat.cols() != e.cols())
    throw ValidationError("joint_sparsity_value_grad: yhat/e shape mismatch");
  if (psi.cols() != yhat.rows())
    throw ValidationError("joint_sparsity_value_grad: dimension mismatch");
  const Index dc = psi.rows(), n2 = yhat.cols();
  if (n2 < 1) throw ValidationError("joint_sparsity_value_grad: empty data");
  const double c = 1.0 / (static_cast<double>(n2) * static_cast<double>(dc) *
                          std::log1p(nu));
  const Matrix ra = psi * yhat;  // dc x N2
  const Matrix rb = psi * e;
  double value = 0;
  Matrix wa(dc, n2), wb(dc, n2);
  for (Index j = 0; j < n2; ++j)
    for (Index i = 0; i < dc; ++i) {
      const double a = ra(i, j), b = rb(i, j);
      const double u = a * a - b * b;
      const double den = 1.0 + nu * u * u;
      value += std::log(den);
      const double w = 4.0 * nu * u / den;
      wa(i, j) = w * a;
      wb(i, j) = -w * b;
    }
  ValueGrad out;
  out.value = c * value;
  out.grad = c * (wa * yhat.transpose() + wb * e.transpose());
  return out;
}

Vector laplacian_scales(const Matrix& omega, const Matrix& x) {
  if (omega.cols() != x.rows()) throw ValidationError("laplacian_scales: dimension mismatch");
  if (x.cols() < 2) throw ValidationError("laplacian_scales: at least two samples required");
  const Matrix resp = omega * x;
  const double n = static_cast<double>(x.cols());
  Vector out(omega.rows());
  for (Index i = 0; i < omega.rows(); ++i) {
    const double mean = resp.row(i).mean();
    const double ss = (resp.row(i).array() - mean).square().sum();
    out[i] = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace deepcam
