#pragma once

// Domain types, configuration records and deterministic randomness shared by
// every other part of the library.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace arn {

// ---------------------------------------------------------------------------
// Errors. The CLI maps each family onto a process exit code.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};
/// Raised whenever training code tries to read a target-domain identity.
struct LabelAccessError : std::logic_error {
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Shapes and images
// ---------------------------------------------------------------------------

struct Shape3 {
  int h = 0;
  int w = 0;
  int c = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }
  [[nodiscard]] bool positive() const { return h > 0 && w > 0 && c > 0; }
  [[nodiscard]] std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class Domain { Source, Target };

inline std::string_view to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

/// Dense H x W x C image stored in row-major HWC order.
struct Image {
  Shape3 shape;
  std::vector<double> values;

  Image() = default;
  explicit Image(Shape3 s, double fill = 0.0) : shape(s), values(s.size(), fill) {}

  double& at(int y, int x, int ch) { return values[(static_cast<std::size_t>(y) * shape.w + x) * shape.c + ch]; }
  [[nodiscard]] double at(int y, int x, int ch) const {
    return values[(static_cast<std::size_t>(y) * shape.w + x) * shape.c + ch];
  }
  /// Exact shape match, finite values, all in [0, 1].
  [[nodiscard]] bool valid_for(Shape3 expected) const {
    if (shape != expected || values.size() != expected.size()) return false;
    for (double v : values)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
    return true;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct LabeledSample {
  Image image;
  int identity = 0;
  int camera = 0;
  Domain domain = Domain::Source;
  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// What the trainer sees of a target-domain training image.
struct UnlabeledSample {
  Image image;
};

struct DatasetSplit {
  std::vector<LabeledSample> train_source;
  std::vector<LabeledSample> train_target;
  std::vector<LabeledSample> query;
  std::vector<LabeledSample> gallery;
};

/// Label-stripping view over the target training set. Images are readable;
/// identities are not. The trainer only ever receives target data through
/// this view.
class TargetView {
 public:
  explicit TargetView(const std::vector<LabeledSample>& samples) : samples_(&samples) {}

  [[nodiscard]] std::size_t size() const { return samples_->size(); }
  [[nodiscard]] const Image& image(std::size_t i) const { return samples_->at(i).image; }
  [[nodiscard]] UnlabeledSample unlabeled(std::size_t i) const { return UnlabeledSample{image(i)}; }

  [[noreturn]] int identity(std::size_t) const {
    throw LabelAccessError("target identity labels are not available during training");
  }
  [[noreturn]] int camera(std::size_t) const {
    throw LabelAccessError("target camera labels are not available during training");
  }

 private:
  const std::vector<LabeledSample>* samples_;
};

// ---------------------------------------------------------------------------
// Configuration records
// ---------------------------------------------------------------------------

struct ModelConfig {
  Shape3 image_shape{32, 32, 3};
  Shape3 feature_map_shape{4, 4, 64};
  int latent_dim = 64;
  int num_classes = 20;
  /// Output channels of the three latent-encoder layers; the last equals latent_dim.
  std::array<int, 3> encoder_channels{64, 64, 64};
  double dropout_rate = 0.5;
  /// Start E_S and E_T from E_C's initial weights instead of independent draws.
  bool private_init_from_shared = false;
};

/// Which cross product the orthogonality penalty takes. SamplePairs uses
/// Hc Hp^T (n x n, every shared row against every private row); FeatureCross
/// uses Hc^T Hp (d x d, column correlations).
enum class DiffForm { SamplePairs, FeatureCross };

inline std::string_view diff_form_name(DiffForm f) {
  return f == DiffForm::SamplePairs ? "sample_pairs" : "feature_cross";
}

struct LossWeights {
  double alpha = 0.01;
  double beta = 2.0;
  double gamma = 1500.0;
  double margin = 1.0;
  /// Row-normalize H matrices before the orthogonality penalty.
  bool normalize_diff = true;
  DiffForm diff_form = DiffForm::SamplePairs;
};

struct AblationFlags {
  bool use_class = true;
  bool use_ctrs = true;
  bool use_private = true;
  bool use_rec = true;
  bool use_diff = true;

  [[nodiscard]] bool supervised() const { return use_class || use_ctrs; }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// The four named variants of the ablation table.
enum class Variant { Full, NoPrivate, NoSupervised, RecOnly };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::RecOnly, Variant::NoSupervised, Variant::NoPrivate,
                                                     Variant::Full};

inline AblationFlags flags_for(Variant v) {
  switch (v) {
    case Variant::Full: return {true, true, true, true, true};
    case Variant::NoPrivate: return {true, true, false, true, false};
    case Variant::NoSupervised: return {false, false, true, true, true};
    case Variant::RecOnly: return {false, false, false, true, false};
  }
  return {};
}

/// CLI key: full, no_supervised, no_private, rec_only.
inline std::string_view variant_key(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoPrivate: return "no_private";
    case Variant::NoSupervised: return "no_supervised";
    case Variant::RecOnly: return "rec_only";
  }
  return "";
}

/// Row label used when rendering the ablation table.
inline std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::Full: return "Ours";
    case Variant::NoPrivate: return "Ours w/o E_S, E_T";
    case Variant::NoSupervised: return "Ours w/o L_ctrs, L_class";
    case Variant::RecOnly: return "Ours w/o L_ctrs, L_class, E_S, E_T";
  }
  return "";
}

inline Variant parse_variant(std::string_view key) {
  for (Variant v : kAllVariants)
    if (variant_key(v) == key) return v;
  throw ConfigError("unknown ablation variant '" + std::string(key) +
                    "' (expected full, no_supervised, no_private or rec_only)");
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  int identities_per_batch = 8;
  int images_per_identity = 2;
  double lr_backbone = 1e-7;
  double lr_encoders = 1e-3;
  double lr_classifier = 2e-3;
  double momentum = 0.0;
  int backbone_warmup_epochs = 5;
  /// Keep updating E_I at lr_backbone after warm-up instead of freezing it.
  bool backbone_train_after_warmup = false;
  std::uint64_t seed = 0;
  AblationFlags ablation{};
};

/// Returns one human-readable finding per violated invariant, each naming the
/// offending field. Empty means the configuration is usable.
inline std::vector<std::string> validate_config(const ModelConfig& model, const TrainConfig& train,
                                                const LossWeights& weights) {
  std::vector<std::string> out;
  auto fail = [&](std::string field, std::string why) { out.push_back(std::move(field) + ": " + std::move(why)); };

  if (!model.image_shape.positive()) fail("image_shape", "all dimensions must be positive");
  if (!model.feature_map_shape.positive()) fail("feature_map_shape", "all dimensions must be positive");
  if (model.image_shape.positive() && model.feature_map_shape.positive()) {
    const auto& im = model.image_shape;
    const auto& fm = model.feature_map_shape;
    const bool divisible = im.h % fm.h == 0 && im.w % fm.w == 0;
    const int ratio = divisible ? im.h / fm.h : 0;
    const bool pow2 = ratio > 0 && (ratio & (ratio - 1)) == 0;
    if (!divisible || !pow2 || im.w / fm.w != ratio)
      fail("feature_map_shape", "image_shape must reduce to it by a common power-of-two stride");
  }
  if (model.latent_dim <= 0) fail("latent_dim", "must be positive");
  if (model.num_classes <= 0) fail("num_classes", "must be positive");
  for (int ch : model.encoder_channels)
    if (ch <= 0) fail("encoder_channels", "all three entries must be positive");
  if (model.encoder_channels[2] != model.latent_dim) fail("encoder_channels", "last entry must equal latent_dim");
  if (!(model.dropout_rate >= 0.0 && model.dropout_rate < 1.0)) fail("dropout_rate", "must lie in [0, 1)");

  if (train.epochs <= 0) fail("epochs", "must be positive");
  if (train.batch_size <= 0 || train.batch_size % 2 != 0) fail("batch_size", "must be a positive even integer");
  if (train.identities_per_batch < 2) fail("identities_per_batch", "must be at least 2 to form negative pairs");
  if (train.images_per_identity < 2) fail("images_per_identity", "must be at least 2 to form positive pairs");
  if (train.batch_size > 0 && train.identities_per_batch * train.images_per_identity != train.batch_size / 2)
    fail("identities_per_batch", "identities_per_batch * images_per_identity must equal batch_size / 2");
  if (!(train.lr_backbone > 0.0)) fail("lr_backbone", "must be positive");
  if (!(train.lr_encoders > 0.0)) fail("lr_encoders", "must be positive");
  if (!(train.lr_classifier > 0.0)) fail("lr_classifier", "must be positive");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (train.backbone_warmup_epochs < 0) fail("backbone_warmup_epochs", "must be non-negative");
  if (train.ablation.use_diff && !train.ablation.use_private)
    fail("use_diff", "requires use_private (no private features to orthogonalize)");
  if (!train.ablation.use_class && !train.ablation.use_ctrs && !train.ablation.use_rec)
    fail("use_rec", "at least one of use_class, use_ctrs, use_rec must be enabled");

  if (!(weights.alpha >= 0.0)) fail("alpha", "must be non-negative");
  if (!(weights.beta >= 0.0)) fail("beta", "must be non-negative");
  if (!(weights.gamma >= 0.0)) fail("gamma", "must be non-negative");
  if (!(weights.margin > 0.0)) fail("margin", "must be strictly positive");
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}
}  // namespace detail

/// xoshiro256** stream. Platform independent: every distribution below is
/// implemented here rather than taken from <random>, whose distributions are
/// allowed to differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = detail::splitmix64(sm);
  }

  /// Independent child stream identified by name; reproducible from the parent seed.
  [[nodiscard]] Rng derive(std::string_view name) const {
    std::uint64_t mix = seed_ ^ detail::fnv1a(name);
    return Rng(detail::splitmix64(mix));
  }
  [[nodiscard]] Rng derive(std::string_view name, std::uint64_t index) const {
    return derive(std::string(name) + "#" + std::to_string(index));
  }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Unbiased integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace arn
