#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/parallel.hpp"

namespace {

void add_common(CLI::App* cmd, dcnet::cli::CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "override [train] seed");
  cmd->add_option("--out", opts.out, "output directory (file for export-csv)");
  cmd->add_option("--init", opts.init, "initial or input checkpoint")->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcnet: decoupled convolution networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dcnet 0.1.0");

  dcnet::cli::CommonOptions opts;
  dcnet::cli::GradcheckFlags gc;

  auto* train = app.add_subcommand("train", "train a network and write metrics + checkpoint");
  add_common(train, opts);
  auto* adv = app.add_subcommand("adv-train", "train with FGSM examples mixed into each batch");
  add_common(adv, opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, opts);
  eval->add_option("checkpoint", opts.checkpoint, "checkpoint (same as --init)");

  auto* attack = app.add_subcommand("attack", "clean / FGSM / BIM accuracy of a checkpoint");
  add_common(attack, opts);
  attack->add_option("checkpoint", opts.checkpoint, "checkpoint (same as --init)");

  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients to finite differences");
  add_common(grad, opts);
  grad->add_flag("--all", gc.all_kinds, "every magnitude x angular x weighting combination");
  grad->add_flag("--force-knee", gc.force_knee, "put Ball/Segmented radii on a patch norm");
  grad->add_option("--batch", gc.batch, "batch size of the synthetic input")->check(CLI::PositiveNumber);

  auto* exp = app.add_subcommand("export-csv", "per-tensor summary of a checkpoint as CSV");
  add_common(exp, opts);
  exp->add_option("checkpoint", opts.checkpoint, "checkpoint (same as --init)");

  CLI11_PARSE(app, argc, argv);

  try {
    dcnet::configure_threads();
    if (*train) return dcnet::cli::run_train(opts, false);
    if (*adv) return dcnet::cli::run_train(opts, true);
    if (*eval) return dcnet::cli::run_eval(opts);
    if (*attack) return dcnet::cli::run_attack(opts);
    if (*grad) return dcnet::cli::run_gradcheck(opts, gc);
    if (*exp) return dcnet::cli::run_export_csv(opts);
  } catch (const dcnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dcnet::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
