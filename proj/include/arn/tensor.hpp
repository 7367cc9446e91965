#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

#include "arn/core.hpp"

namespace arn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Batch of n feature grids in NHWC order. `data` has n*h*w rows and c
/// columns, so a batch with 1x1 spatial extent is exactly an n x c matrix and
/// sample i occupies one contiguous block of h*w*c doubles.
struct Tensor {
  int n = 0;
  Shape3 shape;
  Mat data;

  Tensor() = default;
  Tensor(int batch, Shape3 s) : n(batch), shape(s), data(Mat::Zero(static_cast<Eigen::Index>(batch) * s.h * s.w, s.c)) {}

  static Tensor from_matrix(const Mat& m) {
    Tensor t(static_cast<int>(m.rows()), Shape3{1, 1, static_cast<int>(m.cols())});
    t.data = m;
    return t;
  }

  [[nodiscard]] Eigen::Index rows_per_sample() const { return static_cast<Eigen::Index>(shape.h) * shape.w; }

  /// Flattened view: one row per sample, h*w*c columns.
  [[nodiscard]] Eigen::Map<const Mat> flat() const {
    return {data.data(), n, static_cast<Eigen::Index>(shape.size())};
  }
  Eigen::Map<Mat> flat() { return {data.data(), n, static_cast<Eigen::Index>(shape.size())}; }

  [[nodiscard]] Tensor slice(int begin, int count) const {
    Tensor t(count, shape);
    t.data = data.middleRows(begin * rows_per_sample(), count * rows_per_sample());
    return t;
  }

  [[nodiscard]] bool all_finite() const { return data.allFinite(); }
};

inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw UsageError("concat: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  Tensor t(a.n + b.n, a.shape);
  t.data.topRows(a.data.rows()) = a.data;
  t.data.bottomRows(b.data.rows()) = b.data;
  return t;
}

inline Tensor stack_images(std::span<const Image* const> images, Shape3 expected) {
  if (images.empty()) throw UsageError("empty image batch");
  Tensor t(static_cast<int>(images.size()), expected);
  auto flat = t.flat();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = *images[i];
    if (im.shape != expected)
      throw ConfigError("image shape " + im.shape.str() + " does not match configured " + expected.str());
    flat.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const RowVec>(im.values.data(), static_cast<Eigen::Index>(im.values.size()));
  }
  return t;
}

inline Tensor stack_images(const std::vector<Image>& images, Shape3 expected) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return stack_images(std::span<const Image* const>(ptrs), expected);
}

/// Rows scaled to unit L2 norm; rows with norm below eps are left unchanged.
inline Mat l2_normalize_rows(const Mat& m, double eps = 1e-12) {
  Mat out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double nrm = out.row(i).norm();
    if (nrm > eps) out.row(i) /= nrm;
  }
  return out;
}

/// Vector-Jacobian product of l2_normalize_rows at `m`.
inline Mat l2_normalize_rows_backward(const Mat& m, const Mat& grad_out, double eps = 1e-12) {
  Mat g = grad_out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double nrm = m.row(i).norm();
    if (nrm <= eps) continue;
    const RowVec u = m.row(i) / nrm;
    g.row(i) = (grad_out.row(i) - u * grad_out.row(i).dot(u)) / nrm;
  }
  return g;
}

}  // namespace arn
