#pragma once

#include "deepcam/types.hpp"

namespace deepcam {

/// Dense rows x cols x channels stack of 2-D feature maps.
///
/// Storage is one flat column-major buffer: element (y, x, c) lives at
/// index c*rows*cols + x*rows + y. The flat buffer therefore *is* the
/// canonical vectorization of the tensor (column-stacking per channel,
/// channels outermost), which keeps matrix and tensor views of the same
/// signal interchangeable without copying.
class FeatureTensor {
public:
  FeatureTensor() = default;

  FeatureTensor(Index rows, Index cols, Index channels)
      : rows_(rows), cols_(cols), channels_(channels) {
    if (rows < 1 || cols < 1 || channels < 1)
      throw ValidationError("FeatureTensor: dimensions must be positive");
    data_ = Vector::Zero(rows * cols * channels);
  }

  FeatureTensor(Vector flat, Index rows, Index cols, Index channels)
      : rows_(rows), cols_(cols), channels_(channels), data_(std::move(flat)) {
    if (rows < 1 || cols < 1 || channels < 1)
      throw ValidationError("FeatureTensor: dimensions must be positive");
    if (data_.size() != rows * cols * channels)
      throw ValidationError("FeatureTensor: flat size does not match shape");
  }

  static FeatureTensor from_matrix(const Matrix& m) {
    FeatureTensor t(m.rows(), m.cols(), 1);
    t.channel(0) = m;
    return t;
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index channels() const { return channels_; }
  Index size() const { return data_.size(); }

  double operator()(Index y, Index x, Index c) const {
    return data_[c * rows_ * cols_ + x * rows_ + y];
  }
  double& operator()(Index y, Index x, Index c) {
    return data_[c * rows_ * cols_ + x * rows_ + y];
  }

  Eigen::Map<Matrix> channel(Index c) {
    return Eigen::Map<Matrix>(data_.data() + c * rows_ * cols_, rows_, cols_);
  }
  Eigen::Map<const Matrix> channel(Index c) const {
    return Eigen::Map<const Matrix>(data_.data() + c * rows_ * cols_, rows_, cols_);
  }

  const Vector& flat() const { return data_; }
  Vector& flat() { return data_; }

  bool all_finite() const { return data_.allFinite(); }

private:
  Index rows_ = 0, cols_ = 0, channels_ = 0;
  Vector data_;
};

}  // namespace deepcam
