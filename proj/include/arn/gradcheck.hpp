#pragma once

// Central-difference verification of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/losses.hpp"
#include "arn/tensor.hpp"

namespace arn {

/// Scalar function of a matrix; writes the analytic gradient into `grad`
/// when it is non-null.
using DifferentiableFn = std::function<double(const Mat& x, Mat* grad)>;

struct GradCheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-4;
  std::size_t min_coordinates = 100;
  /// Gradients smaller than this in magnitude are compared absolutely.
  double abs_floor = 1e-6;
  /// True when the point lies too close to a non-differentiable kink; the
  /// checker then moves the point by small random steps until it does not.
  std::function<bool(const Mat&)> near_kink;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  double epsilon = 0.0;
  int kink_retries = 0;
  [[nodiscard]] bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

inline double relative_error(double analytic, double numeric, double abs_floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

/// Compares the analytic gradient with central differences on a random
/// subsample of at least `min_coordinates` coordinates (all of them when the
/// point is smaller). Returns the maximum relative error.
inline GradCheckResult finite_difference_check(const DifferentiableFn& fn, Mat point, Rng& rng,
                                               const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.epsilon = opt.epsilon;
  if (opt.near_kink) {
    while (opt.near_kink(point)) {
      if (++res.kink_retries > 1000) throw NumericError("gradient check: could not move away from kink");
      for (Eigen::Index i = 0; i < point.size(); ++i) point.data()[i] += 1e-2 * rng.normal();
    }
  }
  Mat analytic = Mat::Zero(point.rows(), point.cols());
  const double f0 = fn(point, &analytic);
  if (!std::isfinite(f0) || !analytic.allFinite()) throw NumericError("gradient check: non-finite value or gradient");

  std::vector<Eigen::Index> coords(static_cast<std::size_t>(point.size()));
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  rng.shuffle(coords.begin(), coords.end());
  const std::size_t take = std::min(coords.size(), std::max<std::size_t>(opt.min_coordinates, 0));
  coords.resize(take);

  Mat probe = point;
  for (Eigen::Index c : coords) {
    const double orig = probe.data()[c];
    probe.data()[c] = orig + opt.epsilon;
    const double fp = fn(probe, nullptr);
    probe.data()[c] = orig - opt.epsilon;
    const double fm = fn(probe, nullptr);
    probe.data()[c] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("gradient check: non-finite probe value");
    const double numeric = (fp - fm) / (2.0 * opt.epsilon);
    res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic.data()[c], numeric, opt.abs_floor));
  }
  res.coordinates = coords.size();
  return res;
}

// ---------------------------------------------------------------------------
// Per-loss checks at random float64 points
// ---------------------------------------------------------------------------

enum class LossKind { Classification, Contrastive, Reconstruction, Difference };

inline constexpr LossKind kAllLosses[] = {LossKind::Classification, LossKind::Contrastive, LossKind::Reconstruction,
                                         LossKind::Difference};

inline std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::Classification: return "classification";
    case LossKind::Contrastive: return "contrastive";
    case LossKind::Reconstruction: return "reconstruction";
    case LossKind::Difference: return "difference";
  }
  return "";
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Builds the function, starting point and kink predicate for one loss at a
/// given seed. `corrupt` adds a deliberate error to the analytic gradient,
/// which the checker must catch.
struct LossCheckCase {
  DifferentiableFn fn;
  Mat point;
  std::function<bool(const Mat&)> near_kink;
};

inline LossCheckCase make_loss_check_case(LossKind kind, std::uint64_t seed, bool corrupt = false) {
  Rng rng = Rng(seed).derive(loss_name(kind));
  const double bump = corrupt ? 1e-2 : 0.0;
  switch (kind) {
    case LossKind::Classification: {
      const int n = 12, k = 10;
      std::vector<int> labels(n);
      for (auto& y : labels) y = static_cast<int>(rng.index(k));
      return {[labels, bump](const Mat& logits, Mat* grad) {
                const auto r = softmax_cross_entropy(logits, labels);
                if (grad) *grad = r.grad.array() + bump;
                return r.value;
              },
              random_matrix(n, k, rng, 2.0), nullptr};
    }
    case LossKind::Contrastive: {
      const int n = 10, d = 12;
      std::vector<int> ids(n);
      for (auto& y : ids) y = static_cast<int>(rng.index(4));
      auto pairs = make_pairs(ids);
      const double margin = 1.0;
      auto kink = [pairs, margin](const Mat& e) {
        for (const Pair& p : pairs) {
          const double dist = (e.row(p.i) - e.row(p.j)).norm();
          if (p.lambda == 0 && std::abs(dist - margin) < 1e-3) return true;
        }
        return false;
      };
      return {[pairs, margin, bump](const Mat& e, Mat* grad) {
                const auto r = contrastive_loss(e, pairs, margin);
                if (grad) *grad = r.grad.array() + bump;
                return r.value;
              },
              // Scale so that distances straddle the margin.
              random_matrix(n, d, rng, 0.2), kink};
    }
    case LossKind::Reconstruction: {
      const Shape3 fm{3, 3, 4};
      Tensor xs(4, fm), xt(3, fm);
      xs.data = random_matrix(xs.data.rows(), xs.data.cols(), rng);
      xt.data = random_matrix(xt.data.rows(), xt.data.cols(), rng);
      const Eigen::Index rs = xs.data.rows();
      return {[xs, xt, rs, fm, bump](const Mat& stacked, Mat* grad) {
                Tensor hs(xs.n, fm), ht(xt.n, fm);
                hs.data = stacked.topRows(rs);
                ht.data = stacked.bottomRows(stacked.rows() - rs);
                const auto r = reconstruction_loss(xs, hs, xt, ht);
                if (grad) {
                  grad->resize(stacked.rows(), stacked.cols());
                  *grad << r.grad_source, r.grad_target;
                  grad->array() += bump;
                }
                return r.value;
              },
              random_matrix(xs.data.rows() + xt.data.rows(), fm.c, rng), nullptr};
    }
    case LossKind::Difference: {
      const int ns = 6, nt = 5, d = 8;
      // Stacked as [Hc_s; Hp_s; Hc_t; Hp_t].
      return {[ns, nt, bump](const Mat& s, Mat* grad) {
                BatchEmbeddings e{s.topRows(ns), s.middleRows(ns, ns), s.middleRows(2 * ns, nt),
                                  s.bottomRows(nt)};
                const auto r = difference_loss(e, true);
                if (grad) {
                  grad->resize(s.rows(), s.cols());
                  *grad << r.grad.shared_source, r.grad.private_source, r.grad.shared_target, r.grad.private_target;
                  grad->array() += bump;
                }
                return r.value;
              },
              random_matrix(2 * ns + 2 * nt, d, rng), nullptr};
    }
  }
  throw UsageError("unknown loss kind");
}

inline GradCheckResult check_loss_gradient(LossKind kind, std::uint64_t seed, const GradCheckOptions& base = {},
                                           bool corrupt = false) {
  auto c = make_loss_check_case(kind, seed, corrupt);
  GradCheckOptions opt = base;
  opt.near_kink = c.near_kink;
  Rng rng = Rng(seed).derive("coords").derive(loss_name(kind));
  return finite_difference_check(c.fn, c.point, rng, opt);
}

}  // namespace arn
