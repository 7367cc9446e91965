#pragma once

// Synthetic cross-domain identity data, a directory loader for
// "{identity}_c{camera}_{index}.{ext}" files, and dataset statistics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "arn/core.hpp"

namespace arn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

struct SynthConfig {
  int num_source_ids = 20;
  int num_target_ids = 20;
  int images_per_id = 10;
  Shape3 image_shape{32, 32, 3};
  double style_strength = 0.6;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
};

inline std::vector<std::string> validate_synth(const SynthConfig& c) {
  std::vector<std::string> out;
  if (c.num_source_ids <= 0) out.push_back("num_source_ids: must be positive");
  if (c.num_target_ids <= 0) out.push_back("num_target_ids: must be positive");
  if (c.images_per_id < 2) out.push_back("images_per_id: must be at least 2 (positive pairs and gallery matches)");
  if (c.image_shape.h < 8 || c.image_shape.w < 8 || c.image_shape.c <= 0)
    out.push_back("image_shape: must be at least 8x8 with positive channels");
  if (!(c.style_strength >= 0.0 && c.style_strength <= 1.0)) out.push_back("style_strength: must lie in [0, 1]");
  if (!(c.noise_std >= 0.0)) out.push_back("noise_std: must be non-negative");
  return out;
}

/// Identity content: a coarse grid of colours painted over the body region.
struct IdentitySignature {
  static constexpr int kRows = 4;
  static constexpr int kCols = 2;
  std::vector<double> cells;  ///< kRows * kCols * channels, values in [0, 1]
};

/// Domain style: colour affine map, background tint and a bank of texture
/// patterns mixed with random per-image weights.
struct DomainStyle {
  std::vector<double> color_map;  ///< C x C, row-major
  std::vector<double> color_offset;
  std::vector<double> background;
  std::vector<Image> textures;  ///< zero-mean, unit-amplitude patterns
};

/// Per-image nuisance draws, separated out so identical draws can be replayed.
struct RenderJitter {
  int dy = 0;
  int dx = 0;
  std::vector<double> texture_weights;
  double brightness = 0.0;
};

namespace synth_detail {
inline constexpr int kTexturesPerDomain = 6;
inline constexpr double kTextureAmplitude = 0.35;
inline constexpr double kBodyTextureFraction = 0.6;
inline constexpr double kColorMapSpread = 0.5;
inline constexpr double kColorOffset = 0.15;
inline constexpr double kSignatureLow = 0.2;
inline constexpr double kSignatureHigh = 0.8;
inline constexpr double kCameraBrightness = 0.06;
inline constexpr int kCameraShift = 1;
inline constexpr double kPi = 3.14159265358979323846;

inline int body_x0(Shape3 s) { return s.w / 4; }
inline int body_x1(Shape3 s) { return s.w - s.w / 4; }
inline int body_y0(Shape3 s) { return s.h / 16; }
inline int body_y1(Shape3 s) { return s.h - s.h / 16; }
}  // namespace synth_detail

inline IdentitySignature random_signature(int channels, Rng& rng) {
  using namespace synth_detail;
  IdentitySignature sig;
  sig.cells.resize(static_cast<std::size_t>(IdentitySignature::kRows) * IdentitySignature::kCols * channels);
  for (double& v : sig.cells) v = rng.uniform(kSignatureLow, kSignatureHigh);
  return sig;
}

inline DomainStyle random_style(Shape3 shape, Rng& rng) {
  using namespace synth_detail;
  const int c = shape.c;
  DomainStyle st;
  st.color_map.assign(static_cast<std::size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) st.color_map[static_cast<std::size_t>(i) * c + j] = rng.uniform(-1.0, 1.0) * kColorMapSpread;
  st.color_offset.resize(static_cast<std::size_t>(c));
  for (double& v : st.color_offset) v = rng.uniform(-kColorOffset, kColorOffset);
  st.background.resize(static_cast<std::size_t>(c));
  for (double& v : st.background) v = rng.uniform(0.2, 0.8);
  // Oriented gratings with domain-specific frequency, orientation and phase.
  for (int k = 0; k < kTexturesPerDomain; ++k) {
    const double theta = rng.uniform(0.0, kPi);
    const double freq = rng.uniform(0.15, 0.6);
    const double phase = rng.uniform(0.0, 2 * kPi);
    std::vector<double> tint(static_cast<std::size_t>(c));
    for (double& t : tint) t = rng.uniform(-1.0, 1.0);
    Image tex(shape);
    for (int y = 0; y < shape.h; ++y)
      for (int x = 0; x < shape.w; ++x) {
        const double v = std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)) * 2.0 * kPi / 4.0 + phase);
        for (int ch = 0; ch < c; ++ch) tex.at(y, x, ch) = v * tint[static_cast<std::size_t>(ch)];
      }
    st.textures.push_back(std::move(tex));
  }
  return st;
}

inline RenderJitter random_jitter(const DomainStyle& style, int camera, Rng& rng) {
  using namespace synth_detail;
  RenderJitter j;
  const int base = camera % 2 == 1 ? -kCameraShift : kCameraShift;
  j.dy = static_cast<int>(rng.index(3)) - 1;
  j.dx = base + static_cast<int>(rng.index(3)) - 1;
  j.brightness = (camera % 2 == 1 ? -kCameraBrightness : kCameraBrightness) + rng.normal(0.0, 0.02);
  j.texture_weights.resize(style.textures.size());
  for (double& w : j.texture_weights) w = rng.normal();
  return j;
}

/// Renders one image. With strength 0 the style (tint, colour map, textures)
/// vanishes, so two domains differ only through noise and jitter.
inline Image render_image(const IdentitySignature& sig, const DomainStyle& style, const RenderJitter& jit,
                          Shape3 shape, double strength, double noise_std, Rng& noise_rng) {
  using namespace synth_detail;
  const int c = shape.c;
  Image img(shape);
  const int bx0 = body_x0(shape), bx1 = body_x1(shape), by0 = body_y0(shape), by1 = body_y1(shape);
  for (int y = 0; y < shape.h; ++y)
    for (int x = 0; x < shape.w; ++x) {
      const int sy = y - jit.dy, sx = x - jit.dx;
      const bool body = sy >= by0 && sy < by1 && sx >= bx0 && sx < bx1;
      double tex[16] = {};
      for (std::size_t k = 0; k < style.textures.size(); ++k)
        for (int ch = 0; ch < c && ch < 16; ++ch) tex[ch] += jit.texture_weights[k] * style.textures[k].at(y, x, ch);
      for (int ch = 0; ch < c; ++ch) {
        double v;
        if (body) {
          const int gy = (sy - by0) * IdentitySignature::kRows / (by1 - by0);
          const int gx = (sx - bx0) * IdentitySignature::kCols / (bx1 - bx0);
          v = sig.cells[(static_cast<std::size_t>(gy) * IdentitySignature::kCols + gx) * c + ch];
          v += strength * kBodyTextureFraction * kTextureAmplitude * tex[std::min(ch, 15)];
        } else {
          v = 0.5 + strength * (style.background[static_cast<std::size_t>(ch)] - 0.5);
          v += strength * kTextureAmplitude * tex[std::min(ch, 15)];
        }
        img.at(y, x, ch) = v + jit.brightness;
      }
    }
  // Domain colour map around mid-grey, then noise and clamping.
  std::vector<double> px(static_cast<std::size_t>(c));
  for (int y = 0; y < shape.h; ++y)
    for (int x = 0; x < shape.w; ++x) {
      for (int ch = 0; ch < c; ++ch) px[static_cast<std::size_t>(ch)] = img.at(y, x, ch) - 0.5;
      for (int i = 0; i < c; ++i) {
        double v = px[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) v += strength * style.color_map[static_cast<std::size_t>(i) * c + j] * px[static_cast<std::size_t>(j)];
        v += 0.5 + strength * style.color_offset[static_cast<std::size_t>(i)];
        if (noise_std > 0.0) v += noise_rng.normal(0.0, noise_std);
        img.at(y, x, i) = std::clamp(v, 0.0, 1.0);
      }
    }
  return img;
}

/// Source identities use tokens [0, Ns); target training identities
/// [Ns, Ns + Nt); target evaluation identities [Ns + Nt, Ns + 2 Nt). The three
/// sets are disjoint. Images alternate between cameras 1 and 2; the first
/// image of each evaluation identity (camera 1) is its query and the rest go
/// to the gallery.
inline DatasetSplit generate_synthetic(const SynthConfig& cfg) {
  if (auto v = validate_synth(cfg); !v.empty()) throw ConfigError(v.front());
  const Rng root(cfg.seed);
  Rng style_rng_s = root.derive("style/source");
  Rng style_rng_t = root.derive("style/target");
  const DomainStyle source_style = random_style(cfg.image_shape, style_rng_s);
  const DomainStyle target_style = random_style(cfg.image_shape, style_rng_t);
  Rng id_rng = root.derive("identities");
  Rng render_rng = root.derive("render");

  DatasetSplit split;
  auto emit = [&](int first_token, int count, Domain domain, const DomainStyle& style, bool eval) {
    for (int k = 0; k < count; ++k) {
      const IdentitySignature sig = random_signature(cfg.image_shape.c, id_rng);
      for (int j = 0; j < cfg.images_per_id; ++j) {
        const int camera = 1 + (j % 2);
        const RenderJitter jit = random_jitter(style, camera, render_rng);
        LabeledSample s{render_image(sig, style, jit, cfg.image_shape, cfg.style_strength, cfg.noise_std, render_rng),
                        first_token + k, camera, domain};
        if (!eval)
          (domain == Domain::Source ? split.train_source : split.train_target).push_back(std::move(s));
        else
          (j == 0 ? split.query : split.gallery).push_back(std::move(s));
      }
    }
  };
  emit(0, cfg.num_source_ids, Domain::Source, source_style, false);
  emit(cfg.num_source_ids, cfg.num_target_ids, Domain::Target, target_style, false);
  emit(cfg.num_source_ids + cfg.num_target_ids, cfg.num_target_ids, Domain::Target, target_style, true);
  return split;
}

// ---------------------------------------------------------------------------
// PPM image I/O
// ---------------------------------------------------------------------------

inline void write_ppm(const fs::path& path, const Image& img) {
  if (img.shape.c != 3 && img.shape.c != 1) throw DataError("write_ppm: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << (img.shape.c == 3 ? "P6\n" : "P5\n") << img.shape.w << ' ' << img.shape.h << "\n255\n";
  std::string bytes(img.values.size(), '\0');
  for (std::size_t i = 0; i < img.values.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(img.values[i], 0.0, 1.0) * 255.0)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

inline Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") throw DataError(path.string() + ": unsupported image format (expected binary PPM/PGM)");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    int v = -1;
    in >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError(path.string() + ": malformed header");
  in.get();
  Image img(Shape3{h, w, magic == "P6" ? 3 : 1});
  std::string bytes(img.values.size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.values[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Directory loader
// ---------------------------------------------------------------------------

struct ParsedName {
  std::string identity_token;
  int camera = 0;
  std::string index;
  std::string extension;
};

/// Parses "{identity}_c{camera}_{index}.{ext}"; nullopt when it does not match.
inline std::optional<ParsedName> parse_sample_name(const std::string& filename) {
  static const std::regex pattern(R"(^(\d+)_c(\d+)_(\d+)\.([A-Za-z0-9]+)$)");
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) return std::nullopt;
  ParsedName p{m[1].str(), 0, m[3].str(), m[4].str()};
  const std::string cam = m[2].str();
  std::from_chars(cam.data(), cam.data() + cam.size(), p.camera);
  return p;
}

struct ManifestEntry {
  fs::path path;
  std::string identity_token;
  int identity = 0;
  int camera = 0;
};

struct DirectoryManifest {
  fs::path root;
  std::string pattern = "{identity}_c{camera}_{index}.{ext}";
  std::vector<ManifestEntry> entries;
};

/// Token -> contiguous label, in numeric token order.
using IdentityMap = std::map<std::string, int>;

inline IdentityMap make_identity_map(const std::set<std::string>& tokens) {
  std::vector<std::string> sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end(), [](const std::string& a, const std::string& b) {
    const auto sa = a.find_first_not_of('0'), sb = b.find_first_not_of('0');
    const std::string ta = sa == std::string::npos ? "" : a.substr(sa), tb = sb == std::string::npos ? "" : b.substr(sb);
    if (ta.size() != tb.size()) return ta.size() < tb.size();
    return ta != tb ? ta < tb : a < b;
  });
  IdentityMap map;
  for (std::size_t i = 0; i < sorted.size(); ++i) map[sorted[i]] = static_cast<int>(i);
  return map;
}

/// Scans `root` (non-recursive), lexicographic by path. Every regular file must
/// match the naming pattern.
inline DirectoryManifest scan_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
  DirectoryManifest man;
  man.root = root;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("empty directory: " + root.string());
  std::vector<std::string> bad;
  for (const auto& f : files) {
    auto parsed = parse_sample_name(f.filename().string());
    if (!parsed) {
      bad.push_back(f.filename().string());
      continue;
    }
    man.entries.push_back({f, parsed->identity_token, 0, parsed->camera});
  }
  if (!bad.empty()) {
    std::string msg = "unparseable file name(s) in " + root.string() + ":";
    for (const auto& b : bad) msg += " " + b;
    throw DataError(msg);
  }
  return man;
}

inline int num_workers_from_env() {
  if (const char* v = std::getenv("ARN_NUM_WORKERS")) {
    int n = 0;
    std::from_chars(v, v + std::char_traits<char>::length(v), n);
    if (n > 0) return n;
  }
  return 1;
}

/// Decodes every manifest entry. Workers write into preassigned slots so the
/// output order is the manifest order regardless of scheduling.
inline std::vector<LabeledSample> load_manifest(const DirectoryManifest& man, Domain domain, const IdentityMap& ids,
                                                int workers = num_workers_from_env()) {
  std::vector<LabeledSample> out(man.entries.size());
  std::vector<std::string> errors(man.entries.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < man.entries.size(); i += stride) {
      const auto& e = man.entries[i];
      try {
        out[i] = LabeledSample{read_ppm(e.path), ids.at(e.identity_token), e.camera, domain};
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  if (n == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work, t, n);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return out;
}

/// Loads one directory with identities remapped to [0, K) in token order.
inline std::vector<LabeledSample> load_directory(const fs::path& root, Domain domain,
                                                 DirectoryManifest* manifest_out = nullptr) {
  DirectoryManifest man = scan_directory(root);
  std::set<std::string> tokens;
  for (const auto& e : man.entries) tokens.insert(e.identity_token);
  const IdentityMap ids = make_identity_map(tokens);
  for (auto& e : man.entries) e.identity = ids.at(e.identity_token);
  auto samples = load_manifest(man, domain, ids);
  if (manifest_out) *manifest_out = std::move(man);
  return samples;
}

/// Query and gallery share one identity map so labels stay comparable.
inline std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>> load_query_gallery(const fs::path& query_dir,
                                                                                            const fs::path& gallery_dir) {
  const DirectoryManifest q = scan_directory(query_dir);
  const DirectoryManifest g = scan_directory(gallery_dir);
  std::set<std::string> tokens;
  for (const auto& e : q.entries) tokens.insert(e.identity_token);
  for (const auto& e : g.entries) tokens.insert(e.identity_token);
  const IdentityMap ids = make_identity_map(tokens);
  return {load_manifest(q, Domain::Target, ids), load_manifest(g, Domain::Target, ids)};
}

inline constexpr const char* kSourceTrainDir = "source_train";
inline constexpr const char* kTargetTrainDir = "target_train";
inline constexpr const char* kQueryDir = "query";
inline constexpr const char* kGalleryDir = "gallery";

/// Writes the four partitions as PPM files in the directory naming scheme.
inline void export_split(const DatasetSplit& split, const fs::path& root) {
  auto write_all = [&](const std::vector<LabeledSample>& samples, const char* sub) {
    const fs::path dir = root / sub;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%04d_c%d_%06zu.ppm", samples[i].identity, samples[i].camera, i);
      write_ppm(dir / name, samples[i].image);
    }
  };
  write_all(split.train_source, kSourceTrainDir);
  write_all(split.train_target, kTargetTrainDir);
  write_all(split.query, kQueryDir);
  write_all(split.gallery, kGalleryDir);
}

inline DatasetSplit load_split(const fs::path& root) {
  DatasetSplit split;
  split.train_source = load_directory(root / kSourceTrainDir, Domain::Source);
  split.train_target = load_directory(root / kTargetTrainDir, Domain::Target);
  std::tie(split.query, split.gallery) = load_query_gallery(root / kQueryDir, root / kGalleryDir);
  return split;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct PartitionStats {
  std::string name;
  int identities = 0;
  int images = 0;
  std::map<int, int> images_per_camera;
};

struct DatasetStats {
  std::vector<PartitionStats> partitions;

  [[nodiscard]] const PartitionStats& at(std::string_view name) const {
    for (const auto& p : partitions)
      if (p.name == name) return p;
    throw UsageError("no partition named " + std::string(name));
  }
};

inline PartitionStats partition_stats(std::string name, const std::vector<LabeledSample>& samples) {
  PartitionStats p;
  p.name = std::move(name);
  std::set<int> ids;
  for (const auto& s : samples) {
    ids.insert(s.identity);
    ++p.images_per_camera[s.camera];
  }
  p.identities = static_cast<int>(ids.size());
  p.images = static_cast<int>(samples.size());
  return p;
}

inline DatasetStats dataset_stats(const DatasetSplit& split) {
  return {{partition_stats(kSourceTrainDir, split.train_source), partition_stats(kTargetTrainDir, split.train_target),
           partition_stats(kQueryDir, split.query), partition_stats(kGalleryDir, split.gallery)}};
}

}  // namespace arn
