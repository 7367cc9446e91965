#pragma once

// Retrieval evaluation: shared-feature embedding, cosine ranking, CMC and mAP.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/network.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class Protocol { Plain, CrossCamera };

inline std::string_view protocol_name(Protocol p) { return p == Protocol::Plain ? "plain" : "cross_camera"; }

inline Protocol parse_protocol(std::string_view s) {
  if (s == "plain") return Protocol::Plain;
  if (s == "cross_camera") return Protocol::CrossCamera;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (expected plain or cross_camera)");
}

struct EmbeddingSet {
  Mat vectors;
  std::vector<int> identities;
  std::vector<int> cameras;
  bool normalized = false;

  [[nodiscard]] std::size_t size() const { return identities.size(); }
};

/// Row normalization with a fixed scalar summation order, so equal raw rows
/// normalize to bit-identical vectors wherever they sit in memory.
inline Mat normalize_rows_exact(const Mat& raw, double eps = 1e-12) {
  Mat out = raw;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double ss = 0.0;
    for (Eigen::Index k = 0; k < out.cols(); ++k) ss += out(i, k) * out(i, k);
    const double nrm = std::sqrt(ss);
    if (nrm > eps)
      for (Eigen::Index k = 0; k < out.cols(); ++k) out(i, k) /= nrm;
  }
  return out;
}

inline EmbeddingSet make_embedding_set(const Mat& raw, std::vector<int> identities, std::vector<int> cameras) {
  if (static_cast<std::size_t>(raw.rows()) != identities.size() || identities.size() != cameras.size())
    throw UsageError("embedding set: one identity and camera per row");
  return {normalize_rows_exact(raw), std::move(identities), std::move(cameras), true};
}

/// Shared features through E_I and E_C only, L2-normalized, inference mode.
inline EmbeddingSet embed(const std::vector<LabeledSample>& samples, ArnModel& model, int batch = 64) {
  Mat out(static_cast<Eigen::Index>(samples.size()), model.config().latent_dim);
  std::vector<int> ids, cams;
  for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(samples.size(), b + static_cast<std::size_t>(batch));
    std::vector<const Image*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&samples[i].image);
    const Tensor maps = model.extract_feature_map(stack_images(imgs, model.config().image_shape), Mode::Infer);
    out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        model.encode_shared(maps, Mode::Infer);
  }
  for (const auto& s : samples) {
    ids.push_back(s.identity);
    cams.push_back(s.camera);
  }
  return make_embedding_set(out, std::move(ids), std::move(cams));
}

/// Mean over samples of |cos(e_c, e_p)| with the domain's private encoder.
/// Zero when the model has no private encoders.
inline double mean_abs_shared_private_cosine(const std::vector<LabeledSample>& samples, ArnModel& model,
                                             Domain domain, int batch = 64) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(samples.size(), b + static_cast<std::size_t>(batch));
    std::vector<const Image*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&samples[i].image);
    const Tensor maps = model.extract_feature_map(stack_images(imgs, model.config().image_shape), Mode::Infer);
    const Mat c = model.encode_shared(maps, Mode::Infer);
    const Mat p = model.encode_private(maps, domain, Mode::Infer);
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      const double den = c.row(i).norm() * p.row(i).norm();
      total += den > 0.0 ? std::abs(c.row(i).dot(p.row(i))) / den : 0.0;
    }
  }
  return total / static_cast<double>(samples.size());
}

struct QueryRanking {
  std::vector<int> order;          ///< valid gallery indices, best first
  std::vector<double> similarity;  ///< aligned with order
  std::vector<char> matches;       ///< aligned with order: same identity
  [[nodiscard]] bool has_valid_gallery() const { return !order.empty(); }
  [[nodiscard]] bool has_match() const { return std::find(matches.begin(), matches.end(), 1) != matches.end(); }
};

struct RankingResult {
  std::vector<QueryRanking> queries;
  Protocol protocol = Protocol::Plain;
  bool fell_back = false;  ///< cross_camera requested on camera-less data
  int skipped = 0;         ///< queries excluded from averaging

  /// Queries that contribute to CMC and mAP.
  [[nodiscard]] std::vector<const QueryRanking*> scored() const {
    std::vector<const QueryRanking*> out;
    for (const auto& q : queries)
      if (q.has_match()) out.push_back(&q);
    return out;
  }
};

/// True when every sample in both sets carries the same camera id.
inline bool camera_less(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.cameras.empty() && b.cameras.empty()) return true;
  const int c0 = a.cameras.empty() ? b.cameras.front() : a.cameras.front();
  auto same = [c0](int c) { return c == c0; };
  return std::all_of(a.cameras.begin(), a.cameras.end(), same) && std::all_of(b.cameras.begin(), b.cameras.end(), same);
}

/// Dot-product similarity, descending, ties broken by ascending gallery index.
/// Under cross_camera, gallery items sharing identity and camera with the query
/// are removed from that query's list.
inline RankingResult rank(const EmbeddingSet& queries, const EmbeddingSet& gallery, Protocol protocol,
                          bool quiet = false) {
  if (!queries.normalized || !gallery.normalized) throw UsageError("rank: embeddings must be normalized");
  if (queries.vectors.cols() != gallery.vectors.cols() && queries.size() > 0 && gallery.size() > 0)
    throw UsageError("rank: embedding widths differ");
  RankingResult res;
  res.protocol = protocol;
  if (protocol == Protocol::CrossCamera && camera_less(queries, gallery)) {
    if (!quiet) std::cerr << "warning: cross_camera protocol on camera-less data; falling back to plain\n";
    res.protocol = Protocol::Plain;
    res.fell_back = true;
  }
  // Scalar loop so identical gallery rows always get bit-identical scores.
  const Eigen::Index d = queries.vectors.cols();
  Mat sims(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(gallery.size()));
  for (Eigen::Index i = 0; i < sims.rows(); ++i)
    for (Eigen::Index j = 0; j < sims.cols(); ++j) {
      const double* a = queries.vectors.row(i).data();
      const double* b = gallery.vectors.row(j).data();
      double s = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
      sims(i, j) = s;
    }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryRanking qr;
    const auto qi = static_cast<Eigen::Index>(q);
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const bool same_id = gallery.identities[g] == queries.identities[q];
      if (res.protocol == Protocol::CrossCamera && same_id && gallery.cameras[g] == queries.cameras[q]) continue;
      qr.order.push_back(static_cast<int>(g));
    }
    std::stable_sort(qr.order.begin(), qr.order.end(),
                     [&](int a, int b) { return sims(qi, a) > sims(qi, b); });
    for (int g : qr.order) {
      qr.similarity.push_back(sims(qi, g));
      qr.matches.push_back(gallery.identities[static_cast<std::size_t>(g)] == queries.identities[q] ? 1 : 0);
    }
    if (!qr.has_valid_gallery() && !quiet) std::cerr << "warning: query " << q << " has no valid gallery items\n";
    if (!qr.has_match()) ++res.skipped;
    res.queries.push_back(std::move(qr));
  }
  return res;
}

/// CMC[k-1] = fraction of scored queries whose first correct match is at rank <= k.
inline std::vector<double> cmc(const RankingResult& result, int max_rank) {
  if (max_rank < 1) throw UsageError("cmc: max_rank must be >= 1");
  std::vector<double> curve(static_cast<std::size_t>(max_rank), 0.0);
  const auto scored = result.scored();
  if (scored.empty()) return curve;
  for (const QueryRanking* q : scored) {
    const auto first = static_cast<int>(std::find(q->matches.begin(), q->matches.end(), 1) - q->matches.begin());
    for (int k = first; k < max_rank; ++k) curve[static_cast<std::size_t>(k)] += 1.0;
  }
  for (double& v : curve) v /= static_cast<double>(scored.size());
  return curve;
}

inline double average_precision(const QueryRanking& q) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t r = 0; r < q.matches.size(); ++r)
    if (q.matches[r]) {
      hits += 1.0;
      sum += hits / static_cast<double>(r + 1);
    }
  return hits > 0 ? sum / hits : 0.0;
}

inline double mean_average_precision(const RankingResult& result) {
  const auto scored = result.scored();
  if (scored.empty()) return 0.0;
  double total = 0.0;
  for (const QueryRanking* q : scored) total += average_precision(*q);
  return total / static_cast<double>(scored.size());
}

/// Expected AP of a uniformly random ordering of n items of which r are relevant.
inline double expected_random_ap(std::size_t n, std::size_t r) {
  if (n == 0 || r == 0) return 0.0;
  double harmonic = 0.0;
  for (std::size_t k = 1; k <= n; ++k) harmonic += 1.0 / static_cast<double>(k);
  const double nn = static_cast<double>(n);
  if (n == 1) return 1.0;
  return (harmonic + (static_cast<double>(r) - 1.0) / (nn - 1.0) * (nn - harmonic)) / nn;
}

/// Chance-level mAP for the query/gallery structure of `result`.
inline double expected_random_map(const RankingResult& result) {
  const auto scored = result.scored();
  if (scored.empty()) return 0.0;
  double total = 0.0;
  for (const QueryRanking* q : scored)
    total += expected_random_ap(q->order.size(),
                                static_cast<std::size_t>(std::count(q->matches.begin(), q->matches.end(), 1)));
  return total / static_cast<double>(scored.size());
}

struct Metrics {
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0, rank20 = 0.0;
  double mAP = 0.0;
  int num_queries = 0;
  Protocol protocol = Protocol::CrossCamera;
  std::vector<double> cmc_curve;
  double chance_mAP = 0.0;
};

inline Metrics metrics_from_ranking(const RankingResult& r, int curve_len = 50) {
  Metrics m;
  m.cmc_curve = cmc(r, std::max(20, curve_len));
  m.rank1 = m.cmc_curve[0];
  m.rank5 = m.cmc_curve[4];
  m.rank10 = m.cmc_curve[9];
  m.rank20 = m.cmc_curve[19];
  m.mAP = mean_average_precision(r);
  m.num_queries = static_cast<int>(r.scored().size());
  m.protocol = r.protocol;
  m.chance_mAP = expected_random_map(r);
  return m;
}

inline Metrics evaluate(ArnModel& model, const std::vector<LabeledSample>& query,
                        const std::vector<LabeledSample>& gallery, Protocol protocol, bool quiet = false) {
  const EmbeddingSet q = embed(query, model);
  const EmbeddingSet g = embed(gallery, model);
  return metrics_from_ranking(rank(q, g, protocol, quiet));
}

}  // namespace arn
