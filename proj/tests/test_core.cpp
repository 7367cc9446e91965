#include <gtest/gtest.h>

#include <set>

#include "arn/arn.hpp"

using namespace arn;

namespace {

bool names_field(const std::vector<std::string>& findings, const std::string& field) {
  for (const auto& f : findings)
    if (f.rfind(field + ":", 0) == 0) return true;
  return false;
}

}  // namespace

TEST(Validate, DefaultsHaveNoViolations) {
  EXPECT_TRUE(validate_config(ModelConfig{}, TrainConfig{}, LossWeights{}).empty());
}

TEST(Validate, ZeroMarginIsOneViolationNamingMargin) {
  LossWeights w;
  w.margin = 0.0;
  const auto v = validate_config(ModelConfig{}, TrainConfig{}, w);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(names_field(v, "margin"));
}

TEST(Validate, OddBatchSizeNamesBatchSize) {
  TrainConfig t;
  t.batch_size = 9;
  EXPECT_TRUE(names_field(validate_config(ModelConfig{}, t, LossWeights{}), "batch_size"));
}

TEST(Validate, SingleIdentityPerBatchRejected) {
  TrainConfig t;
  t.identities_per_batch = 1;
  t.images_per_identity = 16;
  EXPECT_TRUE(names_field(validate_config(ModelConfig{}, t, LossWeights{}), "identities_per_batch"));
}

TEST(Validate, DiffWithoutPrivateRejected) {
  TrainConfig t;
  t.ablation.use_private = false;
  EXPECT_TRUE(names_field(validate_config(ModelConfig{}, t, LossWeights{}), "use_diff"));
}

TEST(Validate, ShapeMismatchNamesFeatureMap) {
  ModelConfig m;
  m.feature_map_shape = {3, 3, 64};
  EXPECT_TRUE(names_field(validate_config(m, TrainConfig{}, LossWeights{}), "feature_map_shape"));
}

TEST(Validate, NegativeWeightsAndRates) {
  LossWeights w;
  w.gamma = -1.0;
  TrainConfig t;
  t.lr_encoders = 0.0;
  const auto v = validate_config(ModelConfig{}, t, w);
  EXPECT_TRUE(names_field(v, "gamma"));
  EXPECT_TRUE(names_field(v, "lr_encoders"));
}

TEST(Variants, FlagMapping) {
  EXPECT_EQ(flags_for(Variant::Full), (AblationFlags{true, true, true, true, true}));
  EXPECT_EQ(flags_for(Variant::NoPrivate), (AblationFlags{true, true, false, true, false}));
  EXPECT_EQ(flags_for(Variant::NoSupervised), (AblationFlags{false, false, true, true, true}));
  EXPECT_EQ(flags_for(Variant::RecOnly), (AblationFlags{false, false, false, true, false}));
  for (Variant v : kAllVariants) {
    EXPECT_EQ(parse_variant(variant_key(v)), v);
    TrainConfig t;
    t.ablation = flags_for(v);
    EXPECT_TRUE(validate_config(ModelConfig{}, t, LossWeights{}).empty()) << variant_key(v);
  }
  EXPECT_THROW(parse_variant("nope"), ConfigError);
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) { EXPECT_NE(Rng(7).next_u64(), Rng(8).next_u64()); }

TEST(Rng, DerivedStreamsIndependentAndReproducible) {
  const Rng root(7);
  Rng s1 = root.derive("sampler"), s2 = root.derive("sampler"), i1 = root.derive("init");
  std::vector<std::uint64_t> a, b, c;
  for (int i = 0; i < 50; ++i) {
    a.push_back(s1.next_u64());
    b.push_back(s2.next_u64());
    c.push_back(i1.next_u64());
  }
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NE(root.derive("sampler").seed(), Rng(8).derive("sampler").seed());
}

TEST(Rng, UniformAndIndexRanges) {
  Rng r(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.index(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  double s = 0, ss = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(ss / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + r.index(30);
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    r.shuffle(v.begin(), v.end());
    std::set<int> s(v.begin(), v.end());
    EXPECT_EQ(s.size(), n);
  }
}

TEST(TargetView, ImagesReadableLabelsNot) {
  std::vector<LabeledSample> t{{Image({2, 2, 1}, 0.3), 5, 2, Domain::Target}};
  const TargetView view(t);
  EXPECT_EQ(view.size(), 1u);
  EXPECT_EQ(view.image(0), t[0].image);
  EXPECT_EQ(view.unlabeled(0).image, t[0].image);
  EXPECT_THROW((void)view.identity(0), LabelAccessError);
  EXPECT_THROW((void)view.camera(0), LabelAccessError);
}

TEST(Image, ValidFor) {
  Image im({2, 2, 3}, 0.5);
  EXPECT_TRUE(im.valid_for({2, 2, 3}));
  EXPECT_FALSE(im.valid_for({2, 2, 1}));
  im.at(1, 1, 2) = 1.5;
  EXPECT_FALSE(im.valid_for({2, 2, 3}));
}

TEST(Config, ParsesKeysAndRoundTrips) {
  const RunConfig c = parse_run_config(
      "# comment\nepochs = 3\nseed = 9\nalpha = 0.5\nimage_shape = 16,16,3\nfeature_map_shape = 4,4,64\n"
      "protocol = plain\ndiff_form = feature_cross\n");
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_DOUBLE_EQ(c.weights.alpha, 0.5);
  EXPECT_EQ(c.model.image_shape, (Shape3{16, 16, 3}));
  EXPECT_EQ(c.protocol, Protocol::Plain);
  EXPECT_EQ(c.weights.diff_form, DiffForm::FeatureCross);
  const RunConfig again = parse_run_config(to_text(c));
  EXPECT_EQ(to_text(again), to_text(c));
}

TEST(Config, UnknownKeyAndBadValueAreConfigErrors) {
  EXPECT_THROW(parse_run_config("nonsense = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("epochs = many\n"), ConfigError);
  EXPECT_THROW(parse_run_config("no equals sign\n"), ConfigError);
}
