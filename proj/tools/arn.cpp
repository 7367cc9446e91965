// arn: data generation, training, ablation, evaluation and gradient checks.

#include <CLI11.hpp>

#include "arn/commands.hpp"

namespace {

void add_common(CLI::App* sub, arn::CommandOptions& o, std::string& ablation, std::string& protocol) {
  sub->add_option("--config", o.config_path, "configuration file (key = value)");
  sub->add_option("--seed", o.seed, "override the configured seed");
  sub->add_option("--out", o.out_dir, "output directory")->capture_default_str();
  sub->add_option("--ablation", ablation, "variant")
      ->check(CLI::IsMember({"full", "no_supervised", "no_private", "rec_only"}));
  sub->add_option("--protocol", protocol, "evaluation protocol")->check(CLI::IsMember({"plain", "cross_camera"}));
  sub->add_flag("--plot", o.plot, "also write cmc.svg");
  sub->add_flag("--quiet", o.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared/private latent adaptation network for cross-domain re-identification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", arn::kVersion);

  arn::CommandOptions o;
  std::string ablation, protocol, corrupt;

  auto* gen = app.add_subcommand("gen-data", "generate and export a synthetic dataset");
  auto* train = app.add_subcommand("train", "train one model");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the four ablation variants");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* grads = app.add_subcommand("check-grads", "finite-difference checks of all losses");
  for (auto* s : {gen, train, ablate, eval}) add_common(s, o, ablation, protocol);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", o.data_dir, "exported dataset root (uses query/ and gallery/)");
  grads->add_option("--seed", o.seed, "case seed");
  grads->add_option("--corrupt", corrupt, "perturb one analytic gradient (test hook)")
      ->check(CLI::IsMember({"classification", "contrastive", "reconstruction", "difference"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : arn::kExitConfig;
  }

  if (!ablation.empty()) o.ablation = arn::parse_variant(ablation);
  if (!protocol.empty()) o.protocol = arn::parse_protocol(protocol);
  for (arn::LossKind k : arn::kAllLosses)
    if (arn::loss_name(k) == corrupt) o.corrupt = k;

  if (*gen) return arn::cmd_gen_data(o);
  if (*train) return arn::cmd_train(o);
  if (*ablate) return arn::cmd_ablate(o);
  if (*eval) return arn::cmd_eval(o);
  return arn::cmd_check_grads(o);
}
