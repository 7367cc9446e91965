#pragma once

// The six learnable components: backbone E_I, shared encoder E_C, private
// encoders E_S / E_T, decoder D_C and source classifier C_S.

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/layers.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class Component { E_I, E_C, E_S, E_T, D_C, C_S };

inline constexpr std::array<Component, 6> kAllComponents{Component::E_I, Component::E_C, Component::E_S,
                                                         Component::E_T, Component::D_C, Component::C_S};

inline std::string_view component_name(Component c) {
  switch (c) {
    case Component::E_I: return "E_I";
    case Component::E_C: return "E_C";
    case Component::E_S: return "E_S";
    case Component::E_T: return "E_T";
    case Component::D_C: return "D_C";
    case Component::C_S: return "C_S";
  }
  return "";
}

struct ParameterGroup {
  Component component;
  std::vector<Param*> parameters;

  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (const Param* p : parameters) n += static_cast<std::size_t>(p->size());
    return n;
  }
};

/// Pluggable image -> feature-map extractor. The desk-scale default is a small
/// strided CNN trained from scratch; a pretrained network can be dropped in by
/// implementing this interface.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Tensor forward(const Tensor& images, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad) = 0;
  virtual std::vector<Param*> parameters() = 0;
  [[nodiscard]] virtual Shape3 output_shape() const = 0;
};

/// log2(H/h) stride-2 3x3 stages doubling channels from 16, then a stride-1
/// 3x3 stage to the feature-map channel count. ELU after every stage.
class ConvBackbone final : public FeatureExtractor {
 public:
  ConvBackbone(Shape3 image, Shape3 feature_map, Rng rng) : out_(feature_map) {
    int ch = image.c;
    int width = 16;
    for (int h = image.h; h > feature_map.h; h /= 2) {
      const int next = std::min(width, feature_map.c);
      net_.add<Conv2d>("E_I.conv" + std::to_string(net_.size() / 2), ch, next, 3, 3, 2, 1, 2.0, rng);
      net_.add<ActivationLayer>(Activation::Elu);
      ch = next;
      width *= 2;
    }
    net_.add<Conv2d>("E_I.conv" + std::to_string(net_.size() / 2), ch, feature_map.c, 3, 3, 1, 1, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
  }

  Tensor forward(const Tensor& images, Mode mode) override { return net_.forward(images, mode); }
  Tensor backward(const Tensor& grad) override { return net_.backward(grad); }
  std::vector<Param*> parameters() override {
    std::vector<Param*> out;
    net_.collect(out);
    return out;
  }
  [[nodiscard]] Shape3 output_shape() const override { return out_; }

 private:
  Sequential net_;
  Shape3 out_;
};

namespace detail {
/// Intermediate spatial extent of the three-layer encoders: ceil(h / 2).
inline int half_up(int v) { return (v + 1) / 2; }
}  // namespace detail

/// Three-layer fully convolutional encoder, h x w -> ceil(h/2) x ceil(w/2) -> 1 x 1 -> 1 x 1.
class LatentEncoder {
 public:
  LatentEncoder(std::string_view name, Shape3 fm, const std::array<int, 3>& channels, Rng rng) {
    const std::string n(name);
    const int h1 = detail::half_up(fm.h), w1 = detail::half_up(fm.w);
    net_.add<Conv2d>(n + ".conv0", fm.c, channels[0], fm.h - h1 + 1, fm.w - w1 + 1, 1, 0, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
    net_.add<Conv2d>(n + ".conv1", channels[0], channels[1], h1, w1, 1, 0, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
    net_.add<Conv2d>(n + ".conv2", channels[1], channels[2], 1, 1, 1, 0, 1.0, rng);
  }

  Mat forward(const Tensor& maps, Mode mode) { return net_.forward(maps, mode).data; }
  Tensor backward(const Mat& grad) { return net_.backward(Tensor::from_matrix(grad)); }
  void collect(std::vector<Param*>& out) { net_.collect(out); }

 private:
  Sequential net_;
};

/// Mirror of LatentEncoder: 1 x 1 x 2d -> ceil(h/2) x ceil(w/2) -> h x w -> h x w x c.
class LatentDecoder {
 public:
  LatentDecoder(Shape3 fm, int latent_dim, const std::array<int, 3>& channels, Rng rng) {
    const int h1 = detail::half_up(fm.h), w1 = detail::half_up(fm.w);
    net_.add<ConvTranspose2d>("D_C.deconv0", 2 * latent_dim, channels[1], h1, w1, 1, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
    net_.add<ConvTranspose2d>("D_C.deconv1", channels[1], channels[0], fm.h - h1 + 1, fm.w - w1 + 1, 1, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
    net_.add<Conv2d>("D_C.conv2", channels[0], fm.c, 1, 1, 1, 0, 1.0, rng);
  }

  Tensor forward(const Mat& concatenated, Mode mode) {
    Tensor x(static_cast<int>(concatenated.rows()), Shape3{1, 1, static_cast<int>(concatenated.cols())});
    x.data = concatenated;
    return net_.forward(x, mode);
  }
  Mat backward(const Tensor& grad) { return net_.backward(grad).data; }
  void collect(std::vector<Param*>& out) { net_.collect(out); }

 private:
  Sequential net_;
};

/// Fully connected classifier with dropout: d -> d -> K logits.
class Classifier {
 public:
  Classifier(int latent_dim, int num_classes, double dropout_rate, Rng rng) {
    net_.add<Dense>("C_S.fc0", latent_dim, latent_dim, 2.0, rng);
    net_.add<ActivationLayer>(Activation::Elu);
    net_.add<Dropout>(dropout_rate, rng.derive("dropout"));
    net_.add<Dense>("C_S.fc1", latent_dim, num_classes, 1.0, rng);
  }

  Mat forward(const Mat& shared, Mode mode) { return net_.forward(Tensor::from_matrix(shared), mode).data; }
  Mat backward(const Mat& grad) { return net_.backward(Tensor::from_matrix(grad)).data; }
  void collect(std::vector<Param*>& out) { net_.collect(out); }

 private:
  Sequential net_;
};

inline Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Number of forward passes through each component since construction.
struct CallCounts {
  std::array<int, 6> counts{};
  int& operator[](Component c) { return counts[static_cast<std::size_t>(c)]; }
  int operator[](Component c) const { return counts[static_cast<std::size_t>(c)]; }
};

class ArnModel {
 public:
  /// Every component draws its initial weights from its own stream derived
  /// from `init`, so the same seed yields identical E_C/D_C/C_S weights
  /// whether or not the private encoders exist.
  ArnModel(const ModelConfig& cfg, bool use_private, const Rng& init)
      : ArnModel(cfg, std::make_unique<ConvBackbone>(cfg.image_shape, cfg.feature_map_shape, init.derive("E_I")),
                 use_private, init) {}

  ArnModel(const ModelConfig& cfg, std::unique_ptr<FeatureExtractor> backbone, bool use_private, const Rng& init)
      : cfg_(cfg),
        use_private_(use_private),
        backbone_(std::move(backbone)),
        shared_("E_C", cfg.feature_map_shape, cfg.encoder_channels, init.derive("E_C")),
        decoder_(cfg.feature_map_shape, cfg.latent_dim, cfg.encoder_channels, init.derive("D_C")),
        classifier_(cfg.latent_dim, cfg.num_classes, cfg.dropout_rate, init.derive("C_S")) {
    if (backbone_->output_shape() != cfg.feature_map_shape)
      throw ConfigError("backbone output " + backbone_->output_shape().str() + " does not match feature_map_shape " +
                        cfg.feature_map_shape.str());
    if (use_private_) {
      source_private_ = std::make_unique<LatentEncoder>("E_S", cfg.feature_map_shape, cfg.encoder_channels,
                                                        init.derive(cfg.private_init_from_shared ? "E_C" : "E_S"));
      target_private_ = std::make_unique<LatentEncoder>("E_T", cfg.feature_map_shape, cfg.encoder_channels,
                                                        init.derive(cfg.private_init_from_shared ? "E_C" : "E_T"));
    }
  }

  ArnModel(const ArnModel&) = delete;
  ArnModel& operator=(const ArnModel&) = delete;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] bool use_private() const { return use_private_; }
  [[nodiscard]] const CallCounts& calls() const { return calls_; }

  // E_I -----------------------------------------------------------------
  Tensor extract_feature_map(const Tensor& images, Mode mode = Mode::Infer) {
    if (images.n == 0) throw UsageError("extract_feature_map: empty batch");
    if (images.shape != cfg_.image_shape)
      throw ConfigError("image shape " + images.shape.str() + " does not match " + cfg_.image_shape.str());
    ++calls_[Component::E_I];
    return backbone_->forward(images, mode);
  }
  Tensor backward_feature_map(const Tensor& grad) { return backbone_->backward(grad); }

  // E_C -----------------------------------------------------------------
  Mat encode_shared(const Tensor& maps, Mode mode = Mode::Infer) {
    check_map(maps);
    ++calls_[Component::E_C];
    return shared_.forward(maps, mode);
  }
  Tensor backward_shared(const Mat& grad) { return shared_.backward(grad); }

  // E_S / E_T -------------------------------------------------------------
  /// Without private encoders this returns zeros, keeping D_C's input width at 2d.
  Mat encode_private(const Tensor& maps, Domain domain, Mode mode = Mode::Infer) {
    check_map(maps);
    if (!use_private_) return Mat::Zero(maps.n, cfg_.latent_dim);
    if (domain == Domain::Source) {
      ++calls_[Component::E_S];
      return source_private_->forward(maps, mode);
    }
    ++calls_[Component::E_T];
    return target_private_->forward(maps, mode);
  }

  /// Per-sample domain tags; all tags must agree.
  Mat encode_private(const Tensor& maps, std::span<const Domain> domains, Mode mode = Mode::Infer) {
    if (domains.size() != static_cast<std::size_t>(maps.n)) throw UsageError("encode_private: one tag per map");
    for (Domain d : domains)
      if (d != domains.front()) throw UsageError("encode_private: source and target maps mixed in one call");
    return encode_private(maps, domains.empty() ? Domain::Source : domains.front(), mode);
  }

  Tensor backward_private(const Mat& grad, Domain domain) {
    if (!use_private_) return Tensor(static_cast<int>(grad.rows()), cfg_.feature_map_shape);
    return domain == Domain::Source ? source_private_->backward(grad) : target_private_->backward(grad);
  }

  // D_C -----------------------------------------------------------------
  Tensor decode(const Mat& shared, const Mat& priv, Mode mode = Mode::Infer) {
    if (shared.rows() != priv.rows() || shared.cols() != cfg_.latent_dim || priv.cols() != cfg_.latent_dim)
      throw ConfigError("decode: expected two n x " + std::to_string(cfg_.latent_dim) + " inputs");
    Mat z(shared.rows(), 2 * cfg_.latent_dim);
    z << shared, priv;
    ++calls_[Component::D_C];
    return decoder_.forward(z, mode);
  }
  /// Returns gradients w.r.t. (shared, private).
  std::pair<Mat, Mat> backward_decode(const Tensor& grad) {
    const Mat dz = decoder_.backward(grad);
    return {dz.leftCols(cfg_.latent_dim), dz.rightCols(cfg_.latent_dim)};
  }

  // C_S -----------------------------------------------------------------
  Mat class_logits(const Mat& shared, Domain domain, Mode mode) {
    if (mode == Mode::Train && domain != Domain::Source)
      throw UsageError("classify: the classifier is trained on source features only");
    if (shared.cols() != cfg_.latent_dim) throw ConfigError("classify: wrong feature width");
    ++calls_[Component::C_S];
    return classifier_.forward(shared, mode);
  }
  Mat classify(const Mat& shared, Domain domain = Domain::Source, Mode mode = Mode::Infer) {
    return softmax_rows(class_logits(shared, domain, mode));
  }
  Mat backward_classifier(const Mat& grad_logits) { return classifier_.backward(grad_logits); }

  // Parameters ----------------------------------------------------------
  std::vector<ParameterGroup> parameter_groups() {
    std::vector<ParameterGroup> groups;
    for (Component c : kAllComponents) groups.push_back({c, {}});
    groups[0].parameters = backbone_->parameters();
    shared_.collect(groups[1].parameters);
    if (source_private_) source_private_->collect(groups[2].parameters);
    if (target_private_) target_private_->collect(groups[3].parameters);
    decoder_.collect(groups[4].parameters);
    classifier_.collect(groups[5].parameters);
    return groups;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> all;
    for (auto& g : parameter_groups()) all.insert(all.end(), g.parameters.begin(), g.parameters.end());
    return all;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& g : parameter_groups()) n += g.count();
    return n;
  }

  void zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
  }

  /// Copies of all parameter values, in parameters() order.
  std::vector<Mat> snapshot() {
    std::vector<Mat> out;
    for (Param* p : parameters()) out.push_back(p->value);
    return out;
  }
  void restore(const std::vector<Mat>& values) {
    auto ps = parameters();
    if (ps.size() != values.size()) throw UsageError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
  }

 private:
  void check_map(const Tensor& maps) const {
    if (maps.shape != cfg_.feature_map_shape)
      throw ConfigError("feature map shape " + maps.shape.str() + " does not match " + cfg_.feature_map_shape.str());
  }

  ModelConfig cfg_;
  bool use_private_;
  std::unique_ptr<FeatureExtractor> backbone_;
  LatentEncoder shared_;
  std::unique_ptr<LatentEncoder> source_private_;
  std::unique_ptr<LatentEncoder> target_private_;
  LatentDecoder decoder_;
  Classifier classifier_;
  CallCounts calls_;
};

}  // namespace arn
