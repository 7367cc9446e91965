#pragma once

// Batch sampling, the SGD loop over the weighted objective, backbone
// warm-up/freeze and the four-variant ablation suite.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/evaluator.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"

namespace arn {

struct TrainBatch {
  std::vector<LabeledSample> source;  ///< P identities x Kp images
  std::vector<UnlabeledSample> target;
  std::vector<Pair> pair_index;  ///< over `source`
};

/// Source half: P distinct identities with Kp distinct images each. Target
/// half: B/2 distinct images drawn uniformly through the label-free view.
inline TrainBatch sample_batch(const std::vector<LabeledSample>& source, const TargetView& target,
                               const TrainConfig& cfg, Rng& rng) {
  const int half = cfg.batch_size / 2;
  if (source.empty() || target.size() == 0) throw DataError("sample_batch: both domains must be non-empty");
  if (cfg.identities_per_batch * cfg.images_per_identity != half)
    throw ConfigError("identities_per_batch * images_per_identity must equal batch_size / 2");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < source.size(); ++i) by_id[source[i].identity].push_back(i);
  std::vector<int> eligible;
  for (const auto& [id, idx] : by_id)
    if (static_cast<int>(idx.size()) >= cfg.images_per_identity) eligible.push_back(id);
  if (static_cast<int>(eligible.size()) < cfg.identities_per_batch)
    throw DataError("sample_batch: need " + std::to_string(cfg.identities_per_batch) + " identities with " +
                    std::to_string(cfg.images_per_identity) + " images each, found " + std::to_string(eligible.size()));
  if (target.size() < static_cast<std::size_t>(half))
    throw DataError("sample_batch: target set smaller than half a batch");

  TrainBatch batch;
  rng.shuffle(eligible.begin(), eligible.end());
  std::vector<int> ids;
  for (int p = 0; p < cfg.identities_per_batch; ++p) {
    std::vector<std::size_t> pool = by_id[eligible[static_cast<std::size_t>(p)]];
    rng.shuffle(pool.begin(), pool.end());
    for (int k = 0; k < cfg.images_per_identity; ++k) {
      batch.source.push_back(source[pool[static_cast<std::size_t>(k)]]);
      ids.push_back(batch.source.back().identity);
    }
  }
  batch.pair_index = make_pairs(ids);

  std::vector<std::size_t> order(target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int k = 0; k < half; ++k) {
    const std::size_t j = static_cast<std::size_t>(k) + rng.index(order.size() - static_cast<std::size_t>(k));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
    batch.target.push_back(target.unlabeled(order[static_cast<std::size_t>(k)]));
  }
  return batch;
}

struct TrainState {
  int epoch = 0;
  long step = 0;
  /// Indexed by Component; 0 freezes the group.
  std::array<double, 6> learning_rates{};
  double momentum = 0.0;
  std::vector<LossReport> history;

  double& lr(Component c) { return learning_rates[static_cast<std::size_t>(c)]; }
  [[nodiscard]] double lr(Component c) const { return learning_rates[static_cast<std::size_t>(c)]; }
};

inline TrainState initial_state(const TrainConfig& cfg) {
  TrainState s;
  s.lr(Component::E_I) = cfg.lr_backbone;
  for (Component c : {Component::E_C, Component::E_S, Component::E_T, Component::D_C}) s.lr(c) = cfg.lr_encoders;
  s.lr(Component::C_S) = cfg.lr_classifier;
  s.momentum = cfg.momentum;
  return s;
}

/// Backbone rate for an epoch: trainable only for supervised variants, and
/// only during warm-up unless configured to keep training afterwards.
inline double backbone_rate(const TrainConfig& cfg, int epoch) {
  if (!cfg.ablation.supervised()) return 0.0;
  if (epoch < cfg.backbone_warmup_epochs || (cfg.backbone_train_after_warmup && cfg.backbone_warmup_epochs > 0))
    return cfg.lr_backbone;
  return 0.0;
}

/// Detailed pass output, exposed for tests and diagnostics.
struct StepTrace {
  LossReport report;
  Mat shared_source, private_source, shared_target, private_target;
};

/// One forward pass, one gradient of the weighted objective and one SGD update
/// per parameter group at that group's rate. Returns the pre-update losses.
/// The reconstruction target X is treated as a constant.
inline StepTrace train_step_traced(ArnModel& model, TrainState& state, const TrainBatch& batch,
                                   const LossWeights& w, const AblationFlags& flags) {
  if (flags.use_diff && !flags.use_private) throw ConfigError("use_diff requires use_private");
  if (flags.use_private && !model.use_private()) throw ConfigError("model was built without private encoders");
  const int ns = static_cast<int>(batch.source.size());
  const int nt = static_cast<int>(batch.target.size());
  const ModelConfig& mc = model.config();
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  for (const auto& s : batch.source) {
    imgs.push_back(&s.image);
    labels.push_back(s.identity);
  }
  for (const auto& t : batch.target) imgs.push_back(&t.image);

  model.zero_grad();
  const bool backbone_live = state.lr(Component::E_I) > 0.0;
  const Tensor x = model.extract_feature_map(stack_images(imgs, mc.image_shape), Mode::Train);
  const Tensor xs = x.slice(0, ns), xt = x.slice(ns, nt);
  const Mat ec = model.encode_shared(x, Mode::Train);
  const Mat ec_s = ec.topRows(ns), ec_t = ec.bottomRows(nt);
  Mat ep_s = Mat::Zero(ns, mc.latent_dim), ep_t = Mat::Zero(nt, mc.latent_dim);
  if (flags.use_private && (flags.use_rec || flags.use_diff)) {
    ep_s = model.encode_private(xs, Domain::Source, Mode::Train);
    ep_t = model.encode_private(xt, Domain::Target, Mode::Train);
  }

  LossTerms terms;
  Mat d_ec = Mat::Zero(ns + nt, mc.latent_dim);
  Mat d_ep_s = Mat::Zero(ns, mc.latent_dim), d_ep_t = Mat::Zero(nt, mc.latent_dim);

  if (flags.use_class) {
    const Mat logits = model.class_logits(ec_s, Domain::Source, Mode::Train);
    const auto ce = softmax_cross_entropy(logits, labels);
    terms.class_loss = ce.value;
    d_ec.topRows(ns) += model.backward_classifier(ce.grad);
  }
  if (flags.use_ctrs) {
    const Mat z = l2_normalize_rows(ec_s, kNormEps);
    const auto ct = contrastive_loss(z, batch.pair_index, w.margin);
    terms.ctrs_loss = ct.value;
    d_ec.topRows(ns) += w.alpha * l2_normalize_rows_backward(ec_s, ct.grad, kNormEps);
  }
  if (flags.use_rec) {
    Mat ep_all(ns + nt, mc.latent_dim);
    ep_all << ep_s, ep_t;
    const Tensor xhat = model.decode(ec, ep_all, Mode::Train);
    const auto rec = reconstruction_loss(xs, xhat.slice(0, ns), xt, xhat.slice(ns, nt));
    terms.rec_loss = rec.value;
    Tensor g(ns + nt, mc.feature_map_shape);
    g.data << rec.grad_source, rec.grad_target;
    g.data *= w.beta;
    auto [dz_c, dz_p] = model.backward_decode(g);
    d_ec += dz_c;
    if (flags.use_private) {
      d_ep_s += dz_p.topRows(ns);
      d_ep_t += dz_p.bottomRows(nt);
    }
  }
  if (flags.use_diff) {
    const auto df = difference_loss({ec_s, ep_s, ec_t, ep_t}, w.normalize_diff, w.diff_form);
    terms.diff_loss = df.value;
    d_ec.topRows(ns) += w.gamma * df.grad.shared_source;
    d_ec.bottomRows(nt) += w.gamma * df.grad.shared_target;
    d_ep_s += w.gamma * df.grad.private_source;
    d_ep_t += w.gamma * df.grad.private_target;
  }

  StepTrace trace{total_loss(terms, w, flags), ec_s, ep_s, ec_t, ep_t};

  Tensor dx = model.backward_shared(d_ec);
  if (flags.use_private && (flags.use_rec || flags.use_diff)) {
    const Tensor dxs = model.backward_private(d_ep_s, Domain::Source);
    const Tensor dxt = model.backward_private(d_ep_t, Domain::Target);
    dx.data.topRows(dxs.data.rows()) += dxs.data;
    dx.data.bottomRows(dxt.data.rows()) += dxt.data;
  }
  if (backbone_live) model.backward_feature_map(dx);

  // Groups without a gradient path in this variant are left untouched.
  auto active = [&](Component c) {
    switch (c) {
      case Component::E_I: return backbone_live;
      case Component::E_C: return true;
      case Component::E_S:
      case Component::E_T: return flags.use_private && (flags.use_rec || flags.use_diff);
      case Component::D_C: return flags.use_rec;
      case Component::C_S: return flags.use_class;
    }
    return false;
  };
  for (auto& group : model.parameter_groups()) {
    const double lr = state.lr(group.component);
    if (!active(group.component) || lr == 0.0) continue;
    for (Param* p : group.parameters) {
      if (state.momentum > 0.0) {
        p->velocity = state.momentum * p->velocity + p->grad;
        p->value -= lr * p->velocity;
      } else {
        p->value -= lr * p->grad;
      }
    }
  }
  ++state.step;
  state.history.push_back(trace.report);
  return trace;
}

inline LossReport train_step(ArnModel& model, TrainState& state, const TrainBatch& batch, const LossWeights& w,
                             const AblationFlags& flags) {
  return train_step_traced(model, state, batch, w, flags).report;
}

inline int steps_per_epoch(const DatasetSplit& split, const TrainConfig& cfg) {
  const auto n = std::min(split.train_source.size(), split.train_target.size());
  return static_cast<int>(n / static_cast<std::size_t>(cfg.batch_size / 2));
}

struct EpochRecord {
  int epoch = 0;
  double mean_total = 0.0;
  double mean_rec = 0.0;
  bool evaluated = false;
  Metrics metrics;
};

struct FitHooks {
  std::function<void(long step, const LossReport&)> on_step;
  std::function<void(const EpochRecord&, ArnModel&)> on_epoch_end;
  /// Per-epoch evaluation when both are non-null.
  const std::vector<LabeledSample>* eval_query = nullptr;
  const std::vector<LabeledSample>* eval_gallery = nullptr;
  Protocol protocol = Protocol::CrossCamera;
};

struct FitResult {
  std::unique_ptr<ArnModel> model;
  std::vector<LossReport> log;
  std::vector<EpochRecord> epochs;
};

inline void check_source_labels(const std::vector<LabeledSample>& source, int num_classes) {
  std::set<int> ids;
  for (const auto& s : source) {
    if (s.identity < 0 || s.identity >= num_classes)
      throw ConfigError("num_classes: source identity " + std::to_string(s.identity) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    ids.insert(s.identity);
  }
  if (static_cast<int>(ids.size()) != num_classes)
    throw ConfigError("num_classes: " + std::to_string(num_classes) + " configured but source has " +
                      std::to_string(ids.size()) + " identities");
}

/// Trains a fresh model. Randomness: weights from stream "init", batches from
/// stream "sampler", both derived from train.seed.
inline FitResult fit(const DatasetSplit& split, const ModelConfig& mc, const TrainConfig& tc, const LossWeights& w,
                     const FitHooks& hooks = {}) {
  if (auto v = validate_config(mc, tc, w); !v.empty()) throw ConfigError(v.front());
  check_source_labels(split.train_source, mc.num_classes);
  const int steps = steps_per_epoch(split, tc);
  if (steps < 1) throw DataError("fewer training images than half a batch");

  const Rng root(tc.seed);
  FitResult out;
  out.model = std::make_unique<ArnModel>(mc, tc.ablation.use_private, root.derive("init"));
  Rng sampler = root.derive("sampler");
  const TargetView target(split.train_target);
  TrainState state = initial_state(tc);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    state.epoch = epoch;
    state.lr(Component::E_I) = backbone_rate(tc, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    for (int s = 0; s < steps; ++s) {
      const TrainBatch batch = sample_batch(split.train_source, target, tc, sampler);
      const LossReport r = train_step(*out.model, state, batch, w, tc.ablation);
      out.log.push_back(r);
      rec.mean_total += r.total / steps;
      rec.mean_rec += r.rec_loss / steps;
      if (hooks.on_step) hooks.on_step(state.step, r);
    }
    if (hooks.eval_query && hooks.eval_gallery) {
      rec.metrics = evaluate(*out.model, *hooks.eval_query, *hooks.eval_gallery, hooks.protocol, true);
      rec.evaluated = true;
    }
    out.epochs.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec, *out.model);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationRow {
  Variant variant;
  Metrics metrics;
};

/// Trains every variant from the same seed (hence identical initial weights
/// for the shared components) and evaluates each on the target query/gallery.
inline std::vector<AblationRow> run_ablation_suite(const DatasetSplit& split, const ModelConfig& mc,
                                                   const TrainConfig& tc, const LossWeights& w,
                                                   const std::vector<Variant>& variants = {kAllVariants.begin(),
                                                                                           kAllVariants.end()},
                                                   Protocol protocol = Protocol::CrossCamera) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    TrainConfig vc = tc;
    vc.ablation = flags_for(v);
    auto res = fit(split, mc, vc, w);
    rows.push_back({v, evaluate(*res.model, split.query, split.gallery, protocol, true)});
  }
  return rows;
}

}  // namespace arn
