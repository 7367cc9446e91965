#pragma once

// Serialization: training-log records, metrics, CMC curves, dataset stats and
// the binary checkpoint archive.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arn/core.hpp"
#include "arn/data.hpp"
#include "arn/evaluator.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"

namespace arn {

using json = nlohmann::json;

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json to_json(const LossReport& r, long step) {
  return {{"step", step}, {"class", r.class_loss}, {"ctrs", r.ctrs_loss}, {"rec", r.rec_loss},
          {"diff", r.diff_loss}, {"total", r.total}};
}

inline json to_json(const Metrics& m) {
  return {{"rank1", m.rank1}, {"rank5", m.rank5},           {"rank10", m.rank10},
          {"rank20", m.rank20}, {"mAP", m.mAP}, {"num_queries", m.num_queries},
          {"protocol", std::string(protocol_name(m.protocol))}};
}

inline std::string cmc_csv(const std::vector<double>& curve) {
  std::ostringstream o;
  o.precision(17);
  o << "rank,accuracy\n";
  for (std::size_t k = 0; k < curve.size(); ++k) o << k + 1 << "," << curve[k] << "\n";
  return o.str();
}

/// Minimal SVG line plot of a CMC curve.
inline std::string cmc_svg(const std::vector<double>& curve) {
  const double w = 480, h = 320, pad = 40;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" font-size=\"12\">rank</text>\n"
    << "<text x=\"4\" y=\"" << pad - 10 << "\" font-size=\"12\">accuracy</text>\n<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  const auto n = static_cast<double>(std::max<std::size_t>(curve.size() - 1, 1));
  for (std::size_t k = 0; k < curve.size(); ++k)
    o << pad + (w - 2 * pad) * static_cast<double>(k) / n << "," << (h - pad) - (h - 2 * pad) * curve[k] << " ";
  o << "\"/>\n</svg>\n";
  return o.str();
}

inline json to_json(const DatasetStats& s) {
  json parts = json::array();
  for (const auto& p : s.partitions) {
    json cams = json::array();
    for (const auto& [cam, count] : p.images_per_camera) cams.push_back({{"camera", cam}, {"images", count}});
    parts.push_back({{"partition", p.name}, {"identities", p.identities}, {"images", p.images}, {"cameras", cams}});
  }
  return {{"partitions", parts}};
}

inline json to_json(const ModelConfig& m) {
  return {{"image_shape", {m.image_shape.h, m.image_shape.w, m.image_shape.c}},
          {"feature_map_shape", {m.feature_map_shape.h, m.feature_map_shape.w, m.feature_map_shape.c}},
          {"latent_dim", m.latent_dim},
          {"num_classes", m.num_classes},
          {"encoder_channels", m.encoder_channels},
          {"dropout_rate", m.dropout_rate},
          {"private_init_from_shared", m.private_init_from_shared}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  auto shape = [](const json& a) { return Shape3{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()}; };
  m.image_shape = shape(j.at("image_shape"));
  m.feature_map_shape = shape(j.at("feature_map_shape"));
  m.latent_dim = j.at("latent_dim").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.encoder_channels = j.at("encoder_channels").get<std::array<int, 3>>();
  m.dropout_rate = j.at("dropout_rate").get<double>();
  m.private_init_from_shared = j.value("private_init_from_shared", false);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint archive
//
//   "ARNCKPT1\n" | u64 header length | header JSON | raw little-endian doubles
//
// The header holds the ModelConfig, the private-encoder flag and, per
// component, the ordered list of {name, rows, cols} arrays whose values follow.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "ARNCKPT1\n";

inline void save_checkpoint(ArnModel& model, const fs::path& path, const json& extra = json::object()) {
  json groups = json::object();
  std::string payload;
  for (const auto& g : model.parameter_groups()) {
    json arrays = json::array();
    for (const Param* p : g.parameters) {
      arrays.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
      payload.append(reinterpret_cast<const char*>(p->value.data()), sizeof(double) * static_cast<std::size_t>(p->size()));
    }
    groups[std::string(component_name(g.component))] = arrays;
  }
  const json header{{"model_config", to_json(model.config())},
                    {"use_private", model.use_private()},
                    {"groups", groups},
                    {"extra", extra}};
  const std::string hs = header.dump();
  std::string out(kCheckpointMagic);
  const std::uint64_t len = hs.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += hs;
  out += payload;
  write_file_atomic(path, out);
}

struct LoadedCheckpoint {
  std::unique_ptr<ArnModel> model;
  json extra;
};

/// Rebuilds the model from the stored configuration and fills every array,
/// checking names and shapes against the freshly built architecture.
inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string magic(sizeof(kCheckpointMagic) - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) throw DataError(path.string() + ": not a checkpoint archive");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::error_code ec;
  const auto file_size = fs::file_size(path, ec);
  if (!in || ec || len > file_size) throw DataError(path.string() + ": truncated header");
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");
  json header;
  ModelConfig mc;
  try {
    header = json::parse(hs);
    mc = model_config_from_json(header.at("model_config"));
    header.at("use_private").get<bool>();
    header.at("groups").get<json::object_t>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  LoadedCheckpoint out;
  out.model = std::make_unique<ArnModel>(mc, header.at("use_private").get<bool>(), Rng(0));
  out.extra = header.value("extra", json::object());
  for (auto& g : out.model->parameter_groups()) {
    const std::string cname(component_name(g.component));
    if (!header["groups"].contains(cname)) throw DataError(path.string() + ": missing component " + cname);
    const json& arrays = header["groups"][cname];
    if (!arrays.is_array() || arrays.size() != g.parameters.size())
      throw ConfigError(path.string() + ": component " + std::string(component_name(g.component)) +
                        " has a different number of arrays than this architecture");
    for (std::size_t i = 0; i < g.parameters.size(); ++i) {
      Param* p = g.parameters[i];
      const json& a = arrays[i];
      if (!a.is_object() || !a.contains("rows") || !a.contains("cols") || !a.contains("name") ||
          !a["rows"].is_number_integer() || !a["cols"].is_number_integer() || !a["name"].is_string())
        throw DataError(path.string() + ": malformed array entry for " + p->name);
      const auto rows = a["rows"].get<Eigen::Index>(), cols = a["cols"].get<Eigen::Index>();
      if (a["name"].get<std::string>() != p->name || rows != p->value.rows() || cols != p->value.cols())
        throw ConfigError(path.string() + ": array " + p->name + " shape mismatch");
      in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
      if (!in) throw DataError(path.string() + ": truncated payload");
    }
  }
  return out;
}

}  // namespace arn
