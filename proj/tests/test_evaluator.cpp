#include <gtest/gtest.h>

#include <numeric>

#include "arn/arn.hpp"

using namespace arn;

namespace {

Mat rows(std::initializer_list<std::initializer_list<double>> r) {
  Mat m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

struct Instance {
  Mat q, g;
  std::vector<int> qid, qcam, gid, gcam;
};

// Random small retrieval problem; identities drawn from a small pool so that
// matches, non-matches and same-camera junk all occur.
Instance random_instance(Rng& r, bool with_ties) {
  Instance in;
  const int nq = 1 + static_cast<int>(r.index(10));
  const int ng = static_cast<int>(r.index(51));
  const int d = 1 + static_cast<int>(r.index(6));
  const int ids = 1 + static_cast<int>(r.index(6));
  auto fill = [&](Mat& m, int n) {
    m.resize(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = with_ties ? static_cast<double>(r.index(3)) - 1.0 : r.normal();
  };
  fill(in.q, nq);
  fill(in.g, ng);
  for (int i = 0; i < nq; ++i) {
    in.qid.push_back(static_cast<int>(r.index(static_cast<std::size_t>(ids))));
    in.qcam.push_back(1 + static_cast<int>(r.index(3)));
  }
  for (int i = 0; i < ng; ++i) {
    in.gid.push_back(static_cast<int>(r.index(static_cast<std::size_t>(ids))));
    in.gcam.push_back(1 + static_cast<int>(r.index(3)));
  }
  return in;
}

Metrics metrics_for(const Instance& in, Protocol p) {
  const auto q = make_embedding_set(in.q, in.qid, in.qcam);
  const auto g = make_embedding_set(in.g, in.gid, in.gcam);
  return metrics_from_ranking(rank(q, g, p, true));
}

Mat random_orthogonal(int d, Rng& r) {
  Mat a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = r.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ();
}

}  // namespace

TEST(Rank, FirstExample) {
  const auto q = make_embedding_set(rows({{1, 0}}), {0}, {1});
  const auto g = make_embedding_set(rows({{1, 0}, {0, 1}, {0.6, 0.8}}), {0, 1, 2}, {2, 1, 1});
  const RankingResult r = rank(q, g, Protocol::CrossCamera, true);
  ASSERT_EQ(r.queries.size(), 1u);
  EXPECT_EQ(r.queries[0].order, (std::vector<int>{0, 2, 1}));
  EXPECT_NEAR(r.queries[0].similarity[0], 1.0, 1e-12);
  EXPECT_NEAR(r.queries[0].similarity[1], 0.6, 1e-12);
  EXPECT_NEAR(r.queries[0].similarity[2], 0.0, 1e-12);
  EXPECT_EQ(cmc(r, 3), (std::vector<double>{1, 1, 1}));
}

TEST(Rank, SecondExample) {
  const auto q = make_embedding_set(rows({{0.6, 0.8}}), {0}, {1});
  const auto g = make_embedding_set(rows({{1, 0}, {0, 1}}), {0, 1}, {2, 2});
  const RankingResult r = rank(q, g, Protocol::CrossCamera, true);
  EXPECT_EQ(r.queries[0].order, (std::vector<int>{1, 0}));
  EXPECT_EQ(cmc(r, 2), (std::vector<double>{0, 1}));
  EXPECT_NEAR(mean_average_precision(r), 0.5, 1e-12);
}

TEST(Rank, CrossCameraExcludesSameIdSameCamera) {
  const auto q = make_embedding_set(rows({{1, 0}}), {0}, {1});
  const auto g = make_embedding_set(rows({{1, 0}, {0.8, 0.6}, {0, 1}}), {0, 0, 1}, {1, 2, 1});
  const RankingResult cross = rank(q, g, Protocol::CrossCamera, true);
  EXPECT_EQ(cross.queries[0].order, (std::vector<int>{1, 2}));
  const RankingResult plain = rank(q, g, Protocol::Plain, true);
  EXPECT_EQ(plain.queries[0].order, (std::vector<int>{0, 1, 2}));
}

TEST(Rank, QueryWithoutValidMatchExcluded) {
  const auto q = make_embedding_set(rows({{1, 0}, {0, 1}}), {0, 5}, {1, 1});
  const auto g = make_embedding_set(rows({{1, 0}, {0, 1}}), {0, 1}, {2, 2});
  const RankingResult r = rank(q, g, Protocol::CrossCamera, true);
  EXPECT_EQ(r.skipped, 1);
  EXPECT_EQ(cmc(r, 1), (std::vector<double>{1}));
  EXPECT_EQ(metrics_from_ranking(r).num_queries, 1);
}

TEST(Rank, EmptyGallery) {
  const auto q = make_embedding_set(rows({{1, 0}}), {0}, {1});
  const auto g = make_embedding_set(Mat(0, 2), {}, {});
  const RankingResult r = rank(q, g, Protocol::Plain, true);
  EXPECT_FALSE(r.queries[0].has_valid_gallery());
  EXPECT_EQ(mean_average_precision(r), 0.0);
  const auto o = brute_force_oracle(q, g, Protocol::Plain, 5);
  EXPECT_EQ(o.num_scored, 0);
  EXPECT_EQ(o.cmc, cmc(r, 5));
}

TEST(Rank, UnnormalizedRejected) {
  EmbeddingSet q{rows({{2, 0}}), {0}, {1}, false};
  const auto g = make_embedding_set(rows({{1, 0}}), {0}, {1});
  EXPECT_THROW(rank(q, g, Protocol::Plain, true), UsageError);
}

TEST(Rank, CameraLessFallsBackToPlain) {
  const auto q = make_embedding_set(rows({{1, 0}}), {0}, {0});
  const auto g = make_embedding_set(rows({{1, 0}, {0, 1}}), {0, 1}, {0, 0});
  const RankingResult r = rank(q, g, Protocol::CrossCamera, true);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.protocol, Protocol::Plain);
  EXPECT_EQ(r.queries[0].order, (std::vector<int>{0, 1}));
}

TEST(Rank, EuclideanOrderEqualsCosineOrder) {
  Rng r(1);
  for (int t = 0; t < 100; ++t) {
    Instance in = random_instance(r, false);
    if (in.g.rows() == 0) continue;
    const auto q = make_embedding_set(in.q, in.qid, in.qcam);
    const auto g = make_embedding_set(in.g, in.gid, in.gcam);
    const RankingResult res = rank(q, g, Protocol::Plain, true);
    for (std::size_t qi = 0; qi < q.size(); ++qi) {
      const auto& order = res.queries[qi].order;
      for (std::size_t k = 1; k < order.size(); ++k) {
        const double da = (q.vectors.row(qi) - g.vectors.row(order[k - 1])).squaredNorm();
        const double db = (q.vectors.row(qi) - g.vectors.row(order[k])).squaredNorm();
        EXPECT_LE(da, db + 1e-12);
      }
    }
  }
}

TEST(Cmc, MonotoneAndBounded) {
  Rng r(2);
  for (int t = 0; t < 50; ++t) {
    const Metrics m = metrics_for(random_instance(r, t % 2 == 0), Protocol::CrossCamera);
    for (std::size_t k = 1; k < m.cmc_curve.size(); ++k) EXPECT_LE(m.cmc_curve[k - 1], m.cmc_curve[k]);
    EXPECT_LE(m.cmc_curve.back(), 1.0);
    EXPECT_GE(m.mAP, 0.0);
    EXPECT_LE(m.mAP, 1.0);
  }
  EXPECT_THROW(cmc(RankingResult{}, 0), UsageError);
}

TEST(AveragePrecision, Examples) {
  QueryRanking a{{0}, {1.0}, {1}};
  EXPECT_NEAR(average_precision(a), 1.0, 1e-12);
  QueryRanking b{{0, 1}, {1.0, 0.5}, {0, 1}};
  EXPECT_NEAR(average_precision(b), 0.5, 1e-12);
  QueryRanking c{{0, 1, 2}, {1.0, 0.5, 0.2}, {1, 0, 1}};
  EXPECT_NEAR(average_precision(c), 5.0 / 6.0, 1e-12);
}

TEST(AveragePrecision, SingleRelevantAtRankR) {
  for (int n = 1; n <= 20; ++n)
    for (int r = 1; r <= n; ++r) {
      QueryRanking q;
      for (int i = 0; i < n; ++i) {
        q.order.push_back(i);
        q.similarity.push_back(-i);
        q.matches.push_back(i == r - 1 ? 1 : 0);
      }
      EXPECT_NEAR(average_precision(q), 1.0 / r, 1e-15);
    }
}

TEST(Oracle, AgreesOnRandomInstances) {
  Rng r(3);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(r, t % 4 == 0);
    const Protocol p = t % 2 ? Protocol::CrossCamera : Protocol::Plain;
    const auto q = make_embedding_set(in.q, in.qid, in.qcam);
    const auto g = make_embedding_set(in.g, in.gid, in.gcam);
    const RankingResult res = rank(q, g, p, true);
    const auto o = brute_force_oracle(q, g, p, 20);
    const auto c = cmc(res, 20);
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_NEAR(c[k], o.cmc[k], 1e-12);
    EXPECT_NEAR(mean_average_precision(res), o.mAP, 1e-12);
    EXPECT_EQ(static_cast<int>(res.scored().size()), o.num_scored);
  }
}

TEST(Oracle, TieHeavyDeterministicOrder) {
  const Mat same = Mat::Constant(6, 3, 0.5);
  const auto q = make_embedding_set(same.topRows(2), {0, 1}, {1, 1});
  const auto g = make_embedding_set(same, {1, 0, 1, 0, 2, 0}, {2, 2, 1, 2, 2, 1});
  const RankingResult res = rank(q, g, Protocol::Plain, true);
  EXPECT_EQ(res.queries[0].order, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  // Query 0 matches at indices 1, 3, 5 -> positions 2, 4, 6.
  EXPECT_NEAR(average_precision(res.queries[0]), (1.0 / 2 + 2.0 / 4 + 3.0 / 6) / 3, 1e-15);
  const auto o = brute_force_oracle(q, g, Protocol::Plain, 6);
  EXPECT_EQ(o.cmc, cmc(res, 6));
  EXPECT_EQ(o.mAP, mean_average_precision(res));
}

TEST(Invariance, ScaleAndRotation) {
  Rng r(4);
  for (int t = 0; t < 50; ++t) {
    const Instance in = random_instance(r, false);
    const Metrics base = metrics_for(in, Protocol::CrossCamera);
    Instance scaled = in;
    const double s = std::exp(r.uniform(-5.0, 5.0));
    scaled.q *= s;
    scaled.g *= s;
    const Metrics ms = metrics_for(scaled, Protocol::CrossCamera);
    EXPECT_EQ(ms.cmc_curve, base.cmc_curve);
    EXPECT_EQ(ms.mAP, base.mAP);
    Instance rot = in;
    const Mat Q = random_orthogonal(static_cast<int>(in.q.cols()), r);
    rot.q = in.q * Q;
    rot.g = in.g * Q;
    const Metrics mr = metrics_for(rot, Protocol::CrossCamera);
    EXPECT_EQ(mr.cmc_curve, base.cmc_curve);
    EXPECT_EQ(mr.mAP, base.mAP);
  }
}

TEST(ChanceBaseline, ExpectedRandomApMatchesEnumeration) {
  // Exhaustive average over all orderings of n items with r relevant.
  for (int n = 1; n <= 7; ++n)
    for (int rel = 1; rel <= n; ++rel) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      double total = 0.0;
      int count = 0;
      do {
        QueryRanking q;
        for (int i = 0; i < n; ++i) {
          q.order.push_back(i);
          q.similarity.push_back(0.0);
          q.matches.push_back(perm[static_cast<std::size_t>(i)] < rel ? 1 : 0);
        }
        total += average_precision(q);
        ++count;
      } while (std::next_permutation(perm.begin(), perm.end()));
      EXPECT_NEAR(expected_random_ap(static_cast<std::size_t>(n), static_cast<std::size_t>(rel)), total / count, 1e-12);
    }
}

TEST(Embed, ShapeNormsDeterminismAndComponents) {
  ModelConfig cfg;
  ArnModel m(cfg, true, Rng(5));
  SynthConfig sc;
  sc.num_source_ids = 2;
  sc.num_target_ids = 2;
  sc.images_per_id = 3;
  const DatasetSplit split = generate_synthetic(sc);
  std::vector<LabeledSample> samples = split.gallery;
  samples.push_back(samples.front());
  const EmbeddingSet e = embed(samples, m);
  EXPECT_EQ(e.vectors.rows(), static_cast<Eigen::Index>(samples.size()));
  EXPECT_EQ(e.vectors.cols(), cfg.latent_dim);
  for (Eigen::Index i = 0; i < e.vectors.rows(); ++i) EXPECT_NEAR(e.vectors.row(i).norm(), 1.0, 1e-12);
  EXPECT_EQ(e.vectors.row(0), e.vectors.row(e.vectors.rows() - 1));
  EXPECT_EQ(m.calls()[Component::E_S], 0);
  EXPECT_EQ(m.calls()[Component::E_T], 0);
  EXPECT_EQ(m.calls()[Component::D_C], 0);
  EXPECT_EQ(m.calls()[Component::C_S], 0);
  EXPECT_GT(m.calls()[Component::E_I], 0);
  EXPECT_GT(m.calls()[Component::E_C], 0);
}

// Embeddings that carry no information about the input score at the
// permutation baseline of the split.
TEST(Evaluate, RandomEmbeddingsAtChance) {
  const DatasetSplit split = generate_synthetic(SynthConfig{});
  std::vector<int> qi, qc, gi, gc;
  for (const auto& s : split.query) {
    qi.push_back(s.identity);
    qc.push_back(s.camera);
  }
  for (const auto& s : split.gallery) {
    gi.push_back(s.identity);
    gc.push_back(s.camera);
  }
  Rng r(6);
  double total = 0.0, chance = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Mat q(static_cast<Eigen::Index>(qi.size()), 16), g(static_cast<Eigen::Index>(gi.size()), 16);
    for (Mat* m : {&q, &g})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = r.normal();
    const Metrics m = metrics_from_ranking(
        rank(make_embedding_set(q, qi, qc), make_embedding_set(g, gi, gc), Protocol::CrossCamera, true));
    total += m.mAP / trials;
    chance = m.chance_mAP;
  }
  EXPECT_NEAR(total, chance, 0.01);
}

// An untrained model still reports metrics in range alongside the baseline.
TEST(Evaluate, UntrainedModelInRange) {
  const DatasetSplit split = generate_synthetic(SynthConfig{});
  ArnModel m(ModelConfig{}, true, Rng(100));
  const Metrics met = evaluate(m, split.query, split.gallery, Protocol::CrossCamera, true);
  EXPECT_GE(met.rank1, 0.0);
  EXPECT_LE(met.rank1, 1.0);
  EXPECT_GE(met.mAP, 0.0);
  EXPECT_LE(met.mAP, 1.0);
  EXPECT_GT(met.chance_mAP, 0.0);
}
