#pragma once

// Training losses. Each function returns its value together with the
// gradient w.r.t. its differentiable inputs. Reductions are means over the
// batch (and over elements for reconstruction) so magnitudes do not depend on
// batch size or feature-map resolution.

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/tensor.hpp"

namespace arn {

inline constexpr double kLogEps = 1e-12;
inline constexpr double kNormEps = 1e-12;

struct ScalarWithGrad {
  double value = 0.0;
  Mat grad;
};

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of the true class. Probabilities are clamped
/// at kLogEps so a zero true-class probability gives a large finite loss.
inline ScalarWithGrad classification_loss(const Mat& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw UsageError("classification_loss: one label per row required");
  ScalarWithGrad out{0.0, Mat::Zero(probs.rows(), probs.cols())};
  const auto n = static_cast<double>(labels.size());
  if (labels.empty()) return out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols()) throw UsageError("classification_loss: label out of range");
    const auto r = static_cast<Eigen::Index>(i);
    const double p = probs(r, y);
    if (p > kLogEps) {
      out.value -= std::log(p);
      out.grad(r, y) = -1.0 / (n * p);
    } else {
      out.value -= std::log(kLogEps);
    }
  }
  out.value /= n;
  return out;
}

/// classification_loss(softmax(logits)) fused for stability; gradient is
/// w.r.t. the logits.
inline ScalarWithGrad softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw UsageError("softmax_cross_entropy: one label per row required");
  ScalarWithGrad out{0.0, Mat::Zero(logits.rows(), logits.cols())};
  if (labels.empty()) return out;
  const auto n = static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw UsageError("softmax_cross_entropy: label out of range");
    const double mx = logits.row(r).maxCoeff();
    const RowVec e = (logits.row(r).array() - mx).exp().matrix();
    const double z = e.sum();
    const double logp = logits(r, y) - mx - std::log(z);
    out.value -= std::max(logp, std::log(kLogEps));
    out.grad.row(r) = e / (z * n);
    out.grad(r, y) -= 1.0 / n;
  }
  out.value /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive
// ---------------------------------------------------------------------------

/// One unordered pair of rows; lambda is 1 for same identity, 0 otherwise.
struct Pair {
  int i = 0;
  int j = 0;
  int lambda = 0;
  friend bool operator==(const Pair&, const Pair&) = default;
};

/// All i < j pairs with lambda set by identity equality.
inline std::vector<Pair> make_pairs(const std::vector<int>& identities) {
  std::vector<Pair> pairs;
  const int n = static_cast<int>(identities.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      pairs.push_back({i, j, identities[static_cast<std::size_t>(i)] == identities[static_cast<std::size_t>(j)] ? 1 : 0});
  return pairs;
}

/// Contribution of one pair at Euclidean distance `dist`.
inline double contrastive_term(double dist, int lambda, double margin) {
  if (lambda == 1) return dist * dist;
  const double gap = std::max(0.0, margin - dist);
  return gap * gap;
}

struct ContrastiveResult {
  double value = 0.0;
  Mat grad;
  bool degenerate = false;  ///< empty pair list
};

/// Mean over pairs of  lambda * D^2 + (1 - lambda) * max(0, m - D)^2.
inline ContrastiveResult contrastive_loss(const Mat& embeddings, const std::vector<Pair>& pairs, double margin) {
  if (!(margin > 0.0)) throw ConfigError("contrastive_loss: margin must be positive");
  ContrastiveResult out{0.0, Mat::Zero(embeddings.rows(), embeddings.cols()), false};
  if (pairs.empty()) {
    std::cerr << "warning: contrastive_loss called with no pairs; returning 0\n";
    out.degenerate = true;
    return out;
  }
  const auto np = static_cast<double>(pairs.size());
  for (const Pair& p : pairs) {
    if (p.i < 0 || p.j < 0 || p.i >= embeddings.rows() || p.j >= embeddings.rows())
      throw UsageError("contrastive_loss: pair index out of range");
    const RowVec diff = embeddings.row(p.i) - embeddings.row(p.j);
    const double dist = diff.norm();
    out.value += contrastive_term(dist, p.lambda, margin);
    RowVec g;
    if (p.lambda == 1) {
      g = 2.0 * diff;
    } else if (dist < margin && dist > 0.0) {
      g = -2.0 * (margin - dist) / dist * diff;
    } else {
      continue;
    }
    out.grad.row(p.i) += g / np;
    out.grad.row(p.j) -= g / np;
  }
  out.value /= np;
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

struct ReconstructionResult {
  double value = 0.0;
  Mat grad_source;  ///< w.r.t. the source reconstruction
  Mat grad_target;  ///< w.r.t. the target reconstruction
};

/// Per-element mean squared error pooled over both domains. Either domain may
/// be empty. Gradients are taken w.r.t. the reconstructions only.
inline ReconstructionResult reconstruction_loss(const Tensor& x_source, const Tensor& xhat_source,
                                                const Tensor& x_target, const Tensor& xhat_target) {
  auto same = [](const Tensor& a, const Tensor& b) {
    return a.n == b.n && (a.n == 0 || a.shape == b.shape) && a.data.rows() == b.data.rows() &&
           a.data.cols() == b.data.cols();
  };
  if (!same(x_source, xhat_source)) throw UsageError("reconstruction_loss: source shape mismatch");
  if (!same(x_target, xhat_target)) throw UsageError("reconstruction_loss: target shape mismatch");
  const auto count = static_cast<double>(x_source.data.size() + x_target.data.size());
  ReconstructionResult out;
  if (count == 0) throw UsageError("reconstruction_loss: empty input");
  const Mat ds = xhat_source.data - x_source.data;
  const Mat dt = xhat_target.data - x_target.data;
  out.value = (ds.squaredNorm() + dt.squaredNorm()) / count;
  out.grad_source = 2.0 * ds / count;
  out.grad_target = 2.0 * dt / count;
  return out;
}

// ---------------------------------------------------------------------------
// Difference (orthogonality)
// ---------------------------------------------------------------------------

struct BatchEmbeddings {
  Mat shared_source;
  Mat private_source;
  Mat shared_target;
  Mat private_target;
};

struct DifferenceResult {
  double value = 0.0;
  BatchEmbeddings grad;
};

namespace detail {
/// ||A B^T||_F^2 (SamplePairs) or ||A^T B||_F^2 (FeatureCross) and their
/// gradients, with optional row normalization.
inline double cross_frobenius(const Mat& hc, const Mat& hp, bool normalize, DiffForm form, Mat& dhc, Mat& dhp) {
  if (hc.rows() != hp.rows()) throw UsageError("difference_loss: shared/private row counts differ");
  if (hc.cols() != hp.cols() && hc.rows() > 0) throw UsageError("difference_loss: shared/private widths differ");
  if (hc.rows() == 0) {
    dhc = Mat::Zero(hc.rows(), hc.cols());
    dhp = Mat::Zero(hp.rows(), hp.cols());
    return 0.0;
  }
  const Mat a = normalize ? l2_normalize_rows(hc, kNormEps) : hc;
  const Mat b = normalize ? l2_normalize_rows(hp, kNormEps) : hp;
  Mat da, db;
  double value;
  if (form == DiffForm::SamplePairs) {
    const Mat m = a * b.transpose();
    da = 2.0 * m * b;
    db = 2.0 * m.transpose() * a;
    value = m.squaredNorm();
  } else {
    const Mat m = a.transpose() * b;
    da = 2.0 * b * m.transpose();
    db = 2.0 * a * m;
    value = m.squaredNorm();
  }
  dhc = normalize ? l2_normalize_rows_backward(hc, da, kNormEps) : da;
  dhp = normalize ? l2_normalize_rows_backward(hp, db, kNormEps) : db;
  return value;
}
}  // namespace detail

/// Orthogonality penalty summed over both domains on (optionally)
/// row-normalized matrices. Rows with norm below kNormEps are left
/// unnormalized. The default form is zero exactly when every shared row is
/// orthogonal to every private row of the same domain.
inline DifferenceResult difference_loss(const BatchEmbeddings& e, bool normalize = true,
                                        DiffForm form = DiffForm::SamplePairs) {
  DifferenceResult out;
  out.value = detail::cross_frobenius(e.shared_source, e.private_source, normalize, form, out.grad.shared_source,
                                      out.grad.private_source) +
              detail::cross_frobenius(e.shared_target, e.private_target, normalize, form, out.grad.shared_target,
                                      out.grad.private_target);
  return out;
}

// ---------------------------------------------------------------------------
// Weighted total
// ---------------------------------------------------------------------------

struct LossTerms {
  double class_loss = 0.0;
  double ctrs_loss = 0.0;
  double rec_loss = 0.0;
  double diff_loss = 0.0;
};

struct LossReport {
  double class_loss = 0.0;
  double ctrs_loss = 0.0;
  double rec_loss = 0.0;
  double diff_loss = 0.0;
  double total = 0.0;
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// total = class + alpha * ctrs + beta * rec + gamma * diff; ablated terms are
/// reported as exactly 0. Throws NumericError naming the first non-finite
/// active term.
inline LossReport total_loss(const LossTerms& t, const LossWeights& w, const AblationFlags& f) {
  LossReport r;
  r.class_loss = f.use_class ? t.class_loss : 0.0;
  r.ctrs_loss = f.use_ctrs ? t.ctrs_loss : 0.0;
  r.rec_loss = f.use_rec ? t.rec_loss : 0.0;
  r.diff_loss = (f.use_diff && f.use_private) ? t.diff_loss : 0.0;
  const std::pair<const char*, double> named[] = {
      {"class", r.class_loss}, {"ctrs", r.ctrs_loss}, {"rec", r.rec_loss}, {"diff", r.diff_loss}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " loss");
  r.total = r.class_loss + w.alpha * r.ctrs_loss + w.beta * r.rec_loss + w.gamma * r.diff_loss;
  if (!std::isfinite(r.total)) throw NumericError("non-finite total loss");
  return r;
}

}  // namespace arn
