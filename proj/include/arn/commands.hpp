#pragma once

// Command implementations behind the arn CLI. Each returns a process exit code:
// 0 ok, 2 configuration, 3 data, 4 numeric, 5 gradient check failed.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "arn/config.hpp"
#include "arn/core.hpp"
#include "arn/data.hpp"
#include "arn/evaluator.hpp"
#include "arn/gradcheck.hpp"
#include "arn/io.hpp"
#include "arn/trainer.hpp"

namespace arn {

inline constexpr const char* kVersion = "arn 1.0.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitNumeric = 4, kExitGradCheck = 5 };

struct CommandOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs/out";
  std::optional<Variant> ablation;
  std::optional<Protocol> protocol;
  bool plot = false;
  std::string checkpoint;  ///< cmd_eval
  std::string data_dir;    ///< cmd_eval: exported dataset root
  std::optional<LossKind> corrupt;  ///< cmd_check_grads test hook
  bool quiet = false;
};

/// Maps the error hierarchy onto exit codes and prints the diagnostic.
template <class F>
int run_guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

namespace cmd_detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Loads the config file and applies command-line overrides.
inline RunConfig resolve_config(const CommandOptions& o) {
  RunConfig c = o.config_path.empty() ? parse_run_config("") : load_run_config(o.config_path);
  if (o.seed) {
    c.train.seed = *o.seed;
    if (!c.data_seed) c.synth.seed = *o.seed;
  }
  if (o.ablation) c.train.ablation = flags_for(*o.ablation);
  if (o.protocol) c.protocol = *o.protocol;
  if (const auto v = validate_run_config(c); !v.empty()) {
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
  return c;
}

inline json flags_json(const AblationFlags& f) {
  return {{"use_class", f.use_class}, {"use_ctrs", f.use_ctrs}, {"use_private", f.use_private},
          {"use_rec", f.use_rec},     {"use_diff", f.use_diff}};
}

inline json manifest_json(const std::string& command, const RunConfig& c, const fs::path& out,
                          const std::vector<std::string>& outputs, const json& timings) {
  json files = json::array();
  for (const auto& f : outputs) files.push_back((out / f).string());
  return {{"command", command},
          {"version", kVersion},
          {"seed", c.train.seed},
          {"data_seed", c.synth.seed},
          {"ablation", flags_json(c.train.ablation)},
          {"config", to_text(c)},
          {"outputs", files},
          {"timings_seconds", timings}};
}

inline void write_manifest(const std::string& command, const RunConfig& c, const fs::path& out,
                           const std::vector<std::string>& outputs, const json& timings = json::object()) {
  write_file_atomic(out / "manifest.json", manifest_json(command, c, out, outputs, timings).dump(2) + "\n");
  write_file_atomic(out / "config.cfg", to_text(c));
}

inline std::string stats_text(const DatasetStats& s) {
  std::ostringstream o;
  o << std::left << std::setw(14) << "partition" << std::right << std::setw(6) << "ids" << std::setw(8) << "images"
    << "  per-camera\n";
  for (const auto& p : s.partitions) {
    o << std::left << std::setw(14) << p.name << std::right << std::setw(6) << p.identities << std::setw(8)
      << p.images << " ";
    for (const auto& [cam, n] : p.images_per_camera) o << " c" << cam << "=" << n;
    o << "\n";
  }
  return o.str();
}

inline void write_metrics(const Metrics& m, const fs::path& out, bool plot) {
  write_file_atomic(out / "metrics.json", to_json(m).dump(2) + "\n");
  write_file_atomic(out / "cmc.csv", cmc_csv(m.cmc_curve));
  if (plot) write_file_atomic(out / "cmc.svg", cmc_svg(m.cmc_curve));
}

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace cmd_detail

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const CommandOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_guarded(
      [&] {
        using namespace cmd_detail;
        const auto t0 = Clock::now();
        RunConfig c = resolve_config(o);
        const fs::path root(o.out_dir);
        const DatasetSplit split = load_data(c);
        export_split(split, root);
        const DatasetStats stats = dataset_stats(split);
        write_file_atomic(root / "stats.json", to_json(stats).dump(2) + "\n");
        write_file_atomic(root / "stats.txt", stats_text(stats));
        write_manifest("gen-data", c, root,
                       {kSourceTrainDir, kTargetTrainDir, kQueryDir, kGalleryDir, "stats.json", "stats.txt"},
                       {{"total", seconds_since(t0)}});
        if (!o.quiet) out << stats_text(stats);
        return int{kExitOk};
      },
      err);
}

inline int cmd_train(const CommandOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_guarded(
      [&] {
        using namespace cmd_detail;
        const auto t0 = Clock::now();
        RunConfig c = resolve_config(o);
        const fs::path root(o.out_dir);
        const std::vector<std::string> outputs{"log.jsonl",   "epochs.jsonl", "checkpoint_last.ckpt",
                                               "checkpoint_best.ckpt", "metrics.json", "cmc.csv"};
        write_manifest("train", c, root, outputs);
        const DatasetSplit split = load_data(c);
        const double t_data = seconds_since(t0);

        std::ofstream log(root / "log.jsonl");
        std::ofstream epochs(root / "epochs.jsonl");
        double best = -1.0;
        FitHooks hooks;
        hooks.eval_query = &split.query;
        hooks.eval_gallery = &split.gallery;
        hooks.protocol = c.protocol;
        hooks.on_step = [&](long step, const LossReport& r) { log << to_json(r, step).dump() << "\n"; };
        hooks.on_epoch_end = [&](const EpochRecord& rec, ArnModel& model) {
          json e{{"epoch", rec.epoch + 1}, {"mean_total", rec.mean_total}, {"mean_rec", rec.mean_rec}};
          e["metrics"] = to_json(rec.metrics);
          epochs << e.dump() << "\n";
          save_checkpoint(model, root / "checkpoint_last.ckpt", {{"epoch", rec.epoch + 1}});
          if (rec.metrics.mAP > best) {
            best = rec.metrics.mAP;
            save_checkpoint(model, root / "checkpoint_best.ckpt", {{"epoch", rec.epoch + 1}});
          }
          if (!o.quiet)
            out << "epoch " << rec.epoch + 1 << "/" << c.train.epochs << "  loss " << rec.mean_total << "  rank1 "
                << pct(rec.metrics.rank1) << "  mAP " << pct(rec.metrics.mAP) << std::endl;
        };
        FitResult res = fit(split, c.model, c.train, c.weights, hooks);
        const Metrics m = evaluate(*res.model, split.query, split.gallery, c.protocol, o.quiet);
        write_metrics(m, root, o.plot);
        write_manifest("train", c, root, outputs, {{"data", t_data}, {"total", seconds_since(t0)}});
        if (!o.quiet)
          out << "final  rank1 " << pct(m.rank1) << "  rank5 " << pct(m.rank5) << "  mAP " << pct(m.mAP) << "\n";
        return int{kExitOk};
      },
      err);
}

struct AblationTable {
  std::vector<Variant> variants;
  std::vector<std::array<double, 5>> percent;  ///< R1 R5 R10 R20 mAP, rounded to 2 decimals
};

inline AblationTable make_ablation_table(const std::vector<AblationRow>& rows) {
  AblationTable t;
  auto round2 = [](double v) { return std::round(v * 10000.0) / 100.0; };
  for (const auto& r : rows) {
    t.variants.push_back(r.variant);
    const Metrics& m = r.metrics;
    t.percent.push_back({round2(m.rank1), round2(m.rank5), round2(m.rank10), round2(m.rank20), round2(m.mAP)});
  }
  return t;
}

inline constexpr std::array<const char*, 5> kAblationColumns{"R1", "R5", "R10", "R20", "mAP"};

inline json to_json(const AblationTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.variants.size(); ++i) {
    json r{{"variant", std::string(variant_key(t.variants[i]))}, {"label", std::string(variant_label(t.variants[i]))}};
    for (std::size_t k = 0; k < 5; ++k) r[kAblationColumns[k]] = t.percent[i][k];
    rows.push_back(r);
  }
  return {{"columns", kAblationColumns}, {"rows", rows}};
}

inline std::string to_text(const AblationTable& t) {
  std::size_t width = 6;
  for (Variant v : t.variants) width = std::max(width, variant_label(v).size());
  std::ostringstream o;
  o << std::left << std::setw(static_cast<int>(width)) << "Method";
  for (const char* c : kAblationColumns) o << std::right << std::setw(8) << c;
  o << "\n";
  for (std::size_t i = 0; i < t.variants.size(); ++i) {
    o << std::left << std::setw(static_cast<int>(width)) << variant_label(t.variants[i]) << std::right << std::fixed
      << std::setprecision(2);
    for (double v : t.percent[i]) o << std::setw(8) << v;
    o << "\n";
  }
  return o.str();
}

inline int cmd_ablate(const CommandOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_guarded(
      [&] {
        using namespace cmd_detail;
        const auto t0 = Clock::now();
        RunConfig c = resolve_config(o);
        const fs::path root(o.out_dir);
        write_manifest("ablate", c, root, {"ablation.json", "ablation.txt"});
        const DatasetSplit split = load_data(c);
        const auto rows = run_ablation_suite(split, c.model, c.train, c.weights,
                                             {kAllVariants.begin(), kAllVariants.end()}, c.protocol);
        const AblationTable table = make_ablation_table(rows);
        write_file_atomic(root / "ablation.json", to_json(table).dump(2) + "\n");
        write_file_atomic(root / "ablation.txt", to_text(table));
        write_manifest("ablate", c, root, {"ablation.json", "ablation.txt"}, {{"total", seconds_since(t0)}});
        if (!o.quiet) out << to_text(table);
        return int{kExitOk};
      },
      err);
}

/// Evaluates a checkpoint on an exported dataset (query/ and gallery/ under
/// data_dir) or, without data_dir, on the split described by the config.
inline int cmd_eval(const CommandOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_guarded(
      [&] {
        using namespace cmd_detail;
        if (o.checkpoint.empty()) throw UsageError("eval requires --checkpoint");
        LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
        std::vector<LabeledSample> query, gallery;
        Protocol protocol = o.protocol.value_or(Protocol::CrossCamera);
        if (!o.data_dir.empty()) {
          const fs::path root(o.data_dir);
          std::tie(query, gallery) = load_query_gallery(root / kQueryDir, root / kGalleryDir);
        } else {
          RunConfig c = resolve_config(o);
          if (!o.protocol) protocol = c.protocol;
          DatasetSplit split = load_data(c);
          query = std::move(split.query);
          gallery = std::move(split.gallery);
        }
        const Shape3 want = ck.model->config().image_shape;
        for (const auto* set : {&query, &gallery})
          for (const auto& s : *set)
            if (s.image.shape != want)
              throw ConfigError("image shape " + s.image.shape.str() + " does not match checkpoint input shape " +
                                want.str());
            else if (!s.image.valid_for(want))
              throw DataError("image values must be finite and in [0, 1]");
        const EmbeddingSet q = embed(query, *ck.model);
        const EmbeddingSet g = embed(gallery, *ck.model);
        const RankingResult r = rank(q, g, protocol, o.quiet);
        const Metrics m = metrics_from_ranking(r);
        const fs::path root(o.out_dir);
        write_metrics(m, root, o.plot);
        if (!o.quiet)
          out << "protocol " << protocol_name(m.protocol) << "  queries " << m.num_queries << "  rank1 "
              << pct(m.rank1) << "  mAP " << pct(m.mAP) << "  chance mAP " << pct(m.chance_mAP) << "\n";
        return int{kExitOk};
      },
      err);
}

inline int cmd_check_grads(const CommandOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_guarded(
      [&] {
        const std::uint64_t seed = o.seed.value_or(0);
        const GradCheckOptions opts;
        std::vector<std::string> failed;
        out << std::left << std::setw(16) << "loss" << std::setw(16) << "max_rel_error" << std::setw(10) << "epsilon"
            << std::setw(13) << "coordinates" << "result\n";
        for (LossKind k : kAllLosses) {
          const bool corrupt = o.corrupt && *o.corrupt == k;
          const GradCheckResult r = check_loss_gradient(k, seed, opts, corrupt);
          const bool ok = r.passed(opts.tolerance);
          std::ostringstream e, eps;
          e << std::scientific << std::setprecision(3) << r.max_rel_error;
          eps << std::scientific << std::setprecision(0) << r.epsilon;
          out << std::left << std::setw(16) << loss_name(k) << std::setw(16) << e.str() << std::setw(10) << eps.str()
              << std::setw(13) << r.coordinates << (ok ? "PASS" : "FAIL") << "\n";
          if (!ok) failed.emplace_back(loss_name(k));
        }
        if (!failed.empty()) {
          err << "gradient check failed for:";
          for (const auto& f : failed) err << " " << f;
          err << "\n";
          return int{kExitGradCheck};
        }
        return int{kExitOk};
      },
      err);
}

}  // namespace arn
