#include "deepcam/structured_ops.hpp"

#include <cmath>

namespace deepcam {

namespace {

constexpr Index kMaterializeCap = 1'000'000;

void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw ValidationError(std::string(what) + ": non-finite entries");
}

}  // namespace

FilterAtom FilterAtom::two_d(Vector w, Index side, Index channels) {
  FilterAtom a{std::move(w), side, channels};
  a.validate();
  return a;
}

void FilterAtom::validate() const {
  if (coeffs.size() == 0) throw ValidationError("FilterAtom: empty coefficients");
  if (!coeffs.allFinite()) throw ValidationError("FilterAtom: non-finite coefficients");
  if (is_2d() && coeffs.size() != side * side * channels)
    throw ValidationError("FilterAtom: coefficient count does not match side^2*channels");
}

double soft_threshold(double v, double lambda) {
  if (lambda < 0) throw ValidationError("soft_threshold: negative threshold");
  const double m = std::abs(v) - lambda;
  return m > 0 ? (v > 0 ? m : -m) : 0.0;
}

Vector soft_threshold(const Vector& v, double lambda) {
  if (lambda < 0) throw ValidationError("soft_threshold: negative threshold");
  return v.unaryExpr([lambda](double a) {
    const double m = std::abs(a) - lambda;
    return m > 0 ? (a > 0 ? m : -m) : 0.0;
  });
}

Matrix soft_threshold(const Matrix& v, double lambda) {
  if (lambda < 0) throw ValidationError("soft_threshold: negative threshold");
  return v.unaryExpr([lambda](double a) {
    const double m = std::abs(a) - lambda;
    return m > 0 ? (a > 0 ? m : -m) : 0.0;
  });
}

Matrix soft_threshold_rows(const Matrix& v, const Vector& lambda) {
  if (lambda.size() != v.rows())
    throw ValidationError("soft_threshold_rows: one threshold per row required");
  if (lambda.minCoeff() < 0) throw ValidationError("soft_threshold_rows: negative threshold");
  Matrix out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const double l = lambda[i];
    out.row(i) = v.row(i).unaryExpr([l](double a) {
      const double m = std::abs(a) - l;
      return m > 0 ? (a > 0 ? m : -m) : 0.0;
    });
  }
  return out;
}

Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

Matrix mat(const Vector& v, Index rows, Index cols) {
  if (rows * cols != v.size())
    throw ValidationError("mat: shape product does not match vector length");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Vector toeplitz_apply(const Vector& atom, const Vector& x) {
  const Index n = atom.size(), l = x.size();
  if (l < n) throw ValidationError("toeplitz_apply: signal shorter than atom");
  check_finite(atom, "toeplitz_apply atom");
  check_finite(x, "toeplitz_apply signal");
  const Index p = l - n + 1;
  Vector out(p);
  for (Index i = 0; i < p; ++i) {
    double acc = 0;
    for (Index j = 0; j < n; ++j) acc += atom[j] * x[i + j];
    out[i] = acc;
  }
  return out;
}

Matrix right_dual(const Vector& x, const PatchGeom& g) {
  g.validate();
  if (x.size() != g.len) throw ValidationError("right_dual: signal length mismatch");
  const Index p = g.out_positions(), n = g.atom_len();
  Matrix r(p, n);
  if (!g.is_2d()) {
    for (Index i = 0; i < p; ++i) r.row(i) = x.segment(i, n).transpose();
    return r;
  }
  const Index s = g.side, w = g.win, os = g.out_side();
  for (Index rx = 0; rx < os; ++rx)
    for (Index ry = 0; ry < os; ++ry) {
      const Index row = rx * os + ry;
      Index j = 0;
      for (Index c = 0; c < g.channels; ++c)
        for (Index wx = 0; wx < w; ++wx)
          for (Index wy = 0; wy < w; ++wy)
            r(row, j++) = x[c * s * s + (rx + wx) * s + (ry + wy)];
    }
  return r;
}

Vector right_dual_apply(const Vector& x, const Vector& atom) {
  const Index n = atom.size();
  if (x.size() < n) throw ValidationError("right_dual_apply: signal shorter than atom");
  return right_dual(x, PatchGeom::one_d(x.size(), n)) * atom;
}

Matrix conv2d_valid(const FilterAtom& filter, const FeatureTensor& x) {
  filter.validate();
  if (!filter.is_2d()) throw ValidationError("conv2d_valid: 2-D filter required");
  if (filter.channels != x.channels())
    throw ValidationError("conv2d_valid: channel count mismatch");
  if (x.rows() < filter.side || x.cols() < filter.side)
    throw ValidationError("conv2d_valid: input smaller than filter");
  const Index p = filter.side;
  const Index orows = x.rows() - p + 1, ocols = x.cols() - p + 1;
  Matrix out = Matrix::Zero(orows, ocols);
  // Accumulate shifted planes: one AXPY over the whole output per tap.
  for (Index c = 0; c < x.channels(); ++c) {
    const auto plane = x.channel(c);
    const auto k = mat(filter.coeffs.segment(c * p * p, p * p), p, p);
    for (Index wx = 0; wx < p; ++wx)
      for (Index wy = 0; wy < p; ++wy)
        out.noalias() += k(wy, wx) * plane.block(wy, wx, orows, ocols);
  }
  return out;
}

Vector conv_dict_apply(const Matrix& omega, const Vector& x, const PatchGeom& g) {
  g.validate();
  if (omega.cols() != g.atom_len())
    throw ValidationError("conv_dict_apply: atom length does not match geometry");
  const Matrix r = right_dual(x, g);
  const Matrix resp = r * omega.transpose();  // out_positions x m
  return vec(resp);                           // atom-major blocks
}

Matrix conv_dict_features(const Matrix& omega, const Matrix& xs, const PatchGeom& g) {
  g.validate();
  const Index q = g.out_positions() * omega.rows();
  Matrix out(q, xs.cols());
  for (Index k = 0; k < xs.cols(); ++k)
    out.col(k) = conv_dict_apply(omega, xs.col(k), g);
  return out;
}

Matrix materialize_toeplitz(const Vector& atom, Index l) {
  const Index n = atom.size();
  if (l < n) throw ValidationError("materialize_toeplitz: signal shorter than atom");
  const Index p = l - n + 1;
  if (p * l > kMaterializeCap) throw ValidationError("materialize_toeplitz: size cap exceeded");
  Matrix t = Matrix::Zero(p, l);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < n; ++j) t(i, i + j) = atom[j];
  return t;
}

Matrix materialize_operator(const Vector& atom, const PatchGeom& g) {
  g.validate();
  if (atom.size() != g.atom_len())
    throw ValidationError("materialize_operator: atom length mismatch");
  if (!g.is_2d()) return materialize_toeplitz(atom, g.len);
  const Index p = g.out_positions();
  if (p * g.len > kMaterializeCap)
    throw ValidationError("materialize_operator: size cap exceeded");
  Matrix t = Matrix::Zero(p, g.len);
  const Index s = g.side, w = g.win, os = g.out_side();
  for (Index rx = 0; rx < os; ++rx)
    for (Index ry = 0; ry < os; ++ry) {
      const Index row = rx * os + ry;
      Index j = 0;
      for (Index c = 0; c < g.channels; ++c)
        for (Index wx = 0; wx < w; ++wx)
          for (Index wy = 0; wy < w; ++wy)
            t(row, c * s * s + (rx + wx) * s + (ry + wy)) = atom[j++];
    }
  return t;
}

Matrix materialize_conv_dict(const Matrix& omega, const PatchGeom& g) {
  g.validate();
  const Index p = g.out_positions();
  if (p * omega.rows() * g.len > kMaterializeCap)
    throw ValidationError("materialize_conv_dict: size cap exceeded");
  Matrix h(p * omega.rows(), g.len);
  for (Index i = 0; i < omega.rows(); ++i)
    h.middleRows(i * p, p) = materialize_operator(omega.row(i).transpose(), g);
  return h;
}

}  // namespace deepcam
