#include <gtest/gtest.h>

#include <set>

#include "arn/arn.hpp"

using namespace arn;

namespace {

struct Small {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  LossWeights weights;
  Small() {
    synth.num_source_ids = 8;
    synth.num_target_ids = 6;
    synth.images_per_id = 4;
    synth.image_shape = {16, 16, 3};
    model.image_shape = synth.image_shape;
    model.feature_map_shape = {4, 4, 16};
    model.latent_dim = 16;
    model.encoder_channels = {16, 16, 16};
    model.num_classes = 8;
    train.epochs = 2;
    train.batch_size = 16;
    train.identities_per_batch = 4;
    train.images_per_identity = 2;
    train.lr_encoders = 0.01;
    train.lr_classifier = 0.01;
    weights.gamma = 0.01;
  }
};

RunConfig desk_config() { return load_run_config(std::string(ARN_SOURCE_DIR) + "/configs/desk.cfg"); }

bool same_values(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST(Sampler, PkBatchStructure) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  const TargetView view(split.train_target);
  Rng rng(1);
  const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
  ASSERT_EQ(b.source.size(), 8u);
  EXPECT_EQ(b.target.size(), 8u);
  std::map<int, int> per_id;
  for (const auto& x : b.source) ++per_id[x.identity];
  EXPECT_EQ(per_id.size(), 4u);
  for (const auto& [id, n] : per_id) EXPECT_EQ(n, 2);
  EXPECT_EQ(b.pair_index.size(), 28u);
  int pos = 0;
  for (const auto& p : b.pair_index) pos += p.lambda;
  EXPECT_EQ(pos, 4);
}

TEST(Sampler, SameStateSameBatch) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  const TargetView view(split.train_target);
  Rng a(5), b(5);
  const TrainBatch x = sample_batch(split.train_source, view, s.train, a);
  const TrainBatch y = sample_batch(split.train_source, view, s.train, b);
  EXPECT_EQ(x.source, y.source);
  EXPECT_EQ(x.pair_index, y.pair_index);
  ASSERT_EQ(x.target.size(), y.target.size());
  for (std::size_t i = 0; i < x.target.size(); ++i) EXPECT_EQ(x.target[i].image, y.target[i].image);
}

TEST(Sampler, TooFewIdentitiesIsDataError) {
  Small s;
  s.synth.num_source_ids = 3;
  const DatasetSplit split = generate_synthetic(s.synth);
  const TargetView view(split.train_target);
  Rng rng(1);
  EXPECT_THROW(sample_batch(split.train_source, view, s.train, rng), DataError);
}

TEST(Sampler, TargetImagesAreDistinctPerBatch) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  const TargetView view(split.train_target);
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
    std::set<std::vector<double>> seen;
    for (const auto& u : b.target) seen.insert(u.image.values);
    EXPECT_EQ(seen.size(), b.target.size());
  }
}

TEST(Step, ZeroRatesLeaveParametersUnchanged) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  ArnModel m(s.model, true, Rng(2));
  const TargetView view(split.train_target);
  Rng rng(3);
  const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
  TrainState st = initial_state(s.train);
  st.learning_rates.fill(0.0);
  const auto before = m.snapshot();
  const LossReport r = train_step(m, st, b, s.weights, AblationFlags{});
  EXPECT_TRUE(same_values(before, m.snapshot()));
  EXPECT_GT(r.total, 0.0);
  EXPECT_GT(r.class_loss, 0.0);
  EXPECT_GT(r.rec_loss, 0.0);
  EXPECT_EQ(st.step, 1);
}

TEST(Step, ReconstructionOnlyRouting) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  ArnModel m(s.model, true, Rng(2));
  const TargetView view(split.train_target);
  Rng rng(3);
  const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
  TrainState st = initial_state(s.train);
  st.lr(Component::E_I) = 0.0;
  auto values = [&] {
    std::map<Component, std::vector<Mat>> out;
    for (auto& g : m.parameter_groups())
      for (Param* p : g.parameters) out[g.component].push_back(p->value);
    return out;
  };
  const auto before = values();
  const AblationFlags rec_only{false, false, true, true, false};
  train_step(m, st, b, s.weights, rec_only);
  const auto after = values();
  for (Component c : kAllComponents) {
    const bool changed = !same_values(before.at(c), after.at(c));
    const bool expected = c == Component::E_C || c == Component::E_S || c == Component::E_T || c == Component::D_C;
    EXPECT_EQ(changed, expected) << component_name(c);
  }
}

TEST(Step, AblatedTermsReportZero) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  ArnModel m(s.model, false, Rng(2));
  const TargetView view(split.train_target);
  Rng rng(3);
  const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
  TrainState st = initial_state(s.train);
  const LossReport r = train_step(m, st, b, s.weights, flags_for(Variant::RecOnly));
  EXPECT_EQ(r.class_loss, 0.0);
  EXPECT_EQ(r.ctrs_loss, 0.0);
  EXPECT_EQ(r.diff_loss, 0.0);
  EXPECT_GT(r.rec_loss, 0.0);
  EXPECT_THROW(train_step(m, st, b, s.weights, AblationFlags{}), ConfigError);
}

// Analytic parameter gradients of the full objective agree with central
// differences of the reported total, on a tiny model with dropout off.
TEST(Step, ParameterGradientsMatchFiniteDifferences) {
  Small s;
  s.model.dropout_rate = 0.0;
  s.model.feature_map_shape = {4, 4, 4};
  s.model.latent_dim = 4;
  s.model.encoder_channels = {4, 4, 4};
  s.weights = LossWeights{0.5, 2.0, 0.3};
  const DatasetSplit split = generate_synthetic(s.synth);
  const TargetView view(split.train_target);
  Rng rng(4);
  const TrainBatch b = sample_batch(split.train_source, view, s.train, rng);
  ArnModel m(s.model, true, Rng(6));
  TrainState st = initial_state(s.train);
  st.learning_rates.fill(0.0);
  train_step(m, st, b, s.weights, AblationFlags{});
  // The reconstruction target is a constant, so E_I is excluded here.
  std::vector<Param*> params;
  for (auto& g : m.parameter_groups())
    if (g.component != Component::E_I) params.insert(params.end(), g.parameters.begin(), g.parameters.end());
  std::vector<Mat> grads;
  for (Param* p : params) grads.push_back(p->grad);
  Rng pick(8);
  const double eps = 1e-6;
  double worst = 0.0;
  for (int t = 0; t < 60; ++t) {
    const std::size_t pi = pick.index(params.size());
    Param* p = params[pi];
    const auto k = static_cast<Eigen::Index>(pick.index(static_cast<std::size_t>(p->value.size())));
    const double orig = p->value.data()[k];
    TrainState probe = initial_state(s.train);
    probe.learning_rates.fill(0.0);
    p->value.data()[k] = orig + eps;
    const double up = train_step(m, probe, b, s.weights, AblationFlags{}).total;
    p->value.data()[k] = orig - eps;
    const double down = train_step(m, probe, b, s.weights, AblationFlags{}).total;
    p->value.data()[k] = orig;
    const double num = (up - down) / (2 * eps);
    const double ana = grads[pi].data()[k];
    worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Schedule, BackboneRates) {
  TrainConfig t;
  t.backbone_warmup_epochs = 0;
  for (int e = 0; e < 5; ++e) EXPECT_EQ(backbone_rate(t, e), 0.0);
  t.backbone_warmup_epochs = 2;
  EXPECT_EQ(backbone_rate(t, 0), t.lr_backbone);
  EXPECT_EQ(backbone_rate(t, 1), t.lr_backbone);
  EXPECT_EQ(backbone_rate(t, 2), 0.0);
  t.ablation = flags_for(Variant::RecOnly);
  EXPECT_EQ(backbone_rate(t, 0), 0.0);
}

TEST(Fit, NoWarmupNeverTouchesBackbone) {
  Small s;
  s.train.backbone_warmup_epochs = 0;
  const DatasetSplit split = generate_synthetic(s.synth);
  auto res = fit(split, s.model, s.train, s.weights);
  ArnModel fresh(s.model, true, Rng(s.train.seed).derive("init"));
  const auto a = res.model->parameter_groups()[0], b = fresh.parameter_groups()[0];
  ASSERT_EQ(a.parameters.size(), b.parameters.size());
  for (std::size_t i = 0; i < a.parameters.size(); ++i) EXPECT_EQ(a.parameters[i]->value, b.parameters[i]->value);
}

TEST(Fit, DeterministicLossSequence) {
  const Small s;
  const DatasetSplit split = generate_synthetic(s.synth);
  const auto a = fit(split, s.model, s.train, s.weights);
  const auto b = fit(split, s.model, s.train, s.weights);
  EXPECT_EQ(a.log, b.log);
  EXPECT_TRUE(same_values(a.model->snapshot(), b.model->snapshot()));
}

// Target identities never influence training.
TEST(Fit, TargetLabelsAreNeverUsed) {
  const Small s;
  DatasetSplit split = generate_synthetic(s.synth);
  const auto a = fit(split, s.model, s.train, s.weights);
  Rng r(77);
  for (auto& t : split.train_target) {
    t.identity = static_cast<int>(r.index(1000)) - 500;
    t.camera = static_cast<int>(r.index(9));
  }
  const auto b = fit(split, s.model, s.train, s.weights);
  EXPECT_EQ(a.log, b.log);
}

TEST(Fit, WrongClassCountIsConfigError) {
  Small s;
  s.model.num_classes = 5;
  const DatasetSplit split = generate_synthetic(s.synth);
  EXPECT_THROW(fit(split, s.model, s.train, s.weights), ConfigError);
}

TEST(Fit, DivergenceIsNumericError) {
  Small s;
  s.train.lr_encoders = 1e6;
  s.train.lr_classifier = 1e6;
  s.weights.beta = 1e6;
  s.train.epochs = 5;
  const DatasetSplit split = generate_synthetic(s.synth);
  EXPECT_THROW(fit(split, s.model, s.train, s.weights), NumericError);
}

TEST(Fit, OneEpochOnDefaultDataReducesLoss) {
  RunConfig c = desk_config();
  c.train.epochs = 1;
  const DatasetSplit split = generate_synthetic(c.synth);
  const auto res = fit(split, c.model, c.train, c.weights);
  ASSERT_GE(res.log.size(), 8u);
  // Compare the first and last quarters of the epoch.
  const std::size_t w = res.log.size() / 4;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < w; ++i) {
    first += res.log[i].total;
    last += res.log[res.log.size() - 1 - i].total;
  }
  EXPECT_LT(last, first);
}

TEST(Ablation, FourRowsOut) {
  Small s;
  s.train.epochs = 1;
  const DatasetSplit split = generate_synthetic(s.synth);
  const auto rows = run_ablation_suite(split, s.model, s.train, s.weights);
  ASSERT_EQ(rows.size(), 4u);
  std::set<Variant> seen;
  for (const auto& r : rows) {
    seen.insert(r.variant);
    EXPECT_GE(r.metrics.rank1, 0.0);
    EXPECT_LE(r.metrics.rank1, 1.0);
  }
  EXPECT_EQ(seen.size(), 4u);
}
