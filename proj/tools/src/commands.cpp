#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dcnet/attack.hpp"
#include "dcnet/checkpoint.hpp"
#include "dcnet/config.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/metrics.hpp"
#include "dcnet/trainer.hpp"

namespace dcnet::cli {

namespace fs = std::filesystem;

namespace {

std::string checkpoint_path(const CommonOptions& opts) {
  if (!opts.checkpoint.empty() && !opts.init.empty() && opts.checkpoint != opts.init) {
    throw UsageError("give the checkpoint either positionally or with --init, not both");
  }
  const std::string path = opts.checkpoint.empty() ? opts.init : opts.checkpoint;
  if (path.empty()) throw UsageError("a checkpoint is required (positional or --init)");
  return path;
}

ExperimentConfig base_config(const CommonOptions& opts, const Checkpoint* ckpt) {
  if (!opts.config.empty()) return ExperimentConfig::from_file(opts.config);
  if (ckpt) {
    if (auto text = ckpt->meta("config")) return ExperimentConfig::parse(*text, "<checkpoint config>");
    throw UsageError("checkpoint has no embedded config; pass --config");
  }
  ExperimentConfig cfg;
  cfg.finalize();
  return cfg;
}

void apply_overrides(ExperimentConfig& cfg, const CommonOptions& opts, bool init_is_start) {
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (!opts.out.empty()) cfg.output.dir = opts.out;
  if (init_is_start && !opts.init.empty()) cfg.output.init_checkpoint = opts.init;
  cfg.validate();
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Network rebuilt from a config and strictly loaded from a checkpoint.
struct Loaded {
  ExperimentConfig cfg;
  Network<float> net;
};

Loaded load_trained(const CommonOptions& opts) {
  const auto ckpt = load_checkpoint(checkpoint_path(opts));
  auto cfg = base_config(opts, &ckpt);
  apply_overrides(cfg, opts, false);
  cfg.output.init_checkpoint.reset();
  auto net = make_network<float>(cfg);
  restore(net, ckpt, LoadMode::Strict);
  return {std::move(cfg), std::move(net)};
}

}  // namespace

int run_train(const CommonOptions& opts, bool adversarial) {
  auto cfg = base_config(opts, nullptr);
  apply_overrides(cfg, opts, true);
  const auto data = load_data(cfg);
  LoadReport report;
  auto net = make_network<float>(cfg, &report);
  if (cfg.output.init_checkpoint) {
    std::cout << "init: loaded " << report.loaded.size() << " tensors, skipped "
              << report.skipped.size() << ", left at initialisation " << report.missing.size()
              << '\n';
  }
  std::cout << "train: " << data.train.size() << " samples, test: " << data.test.size()
            << ", steps: " << cfg.train.steps << '\n';
  const auto outcome = train(cfg, data, net, adversarial);
  std::cout << "step " << outcome.steps << " eval_loss " << fixed(outcome.final_eval.loss)
            << " eval_acc " << fixed(outcome.final_eval.accuracy) << '\n'
            << "metrics: " << outcome.metrics.string() << '\n'
            << "checkpoint: " << outcome.checkpoint.string() << '\n';
  return 0;
}

int run_eval(const CommonOptions& opts) {
  auto [cfg, net] = load_trained(opts);
  const auto data = load_data(cfg);
  const auto result = evaluate(net, data.test, cfg.train.eval_batch);
  std::cout << "samples " << result.samples << " eval_loss " << fixed(result.loss) << " eval_acc "
            << fixed(result.accuracy) << '\n';
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    std::ofstream out(fs::path(opts.out) / "eval.csv");
    out << "samples,eval_loss,eval_acc\n"
        << result.samples << ',' << fixed(result.loss, 6) << ',' << fixed(result.accuracy, 6) << '\n';
  }
  return 0;
}

int run_attack(const CommonOptions& opts) {
  auto [cfg, net] = load_trained(opts);
  const auto data = load_data(cfg);
  const auto r = attack_eval(net, data.test, cfg.attack);
  std::ostringstream table;
  table << "attack,epsilon,tau,iterations,accuracy\n"
        << "none,0,0,0," << fixed(r.clean_accuracy) << '\n'
        << "fgsm," << cfg.attack.epsilon << ",0,1," << fixed(r.fgsm_accuracy) << '\n'
        << "bim," << cfg.attack.epsilon << ',' << cfg.attack.tau << ',' << cfg.attack.iterations
        << ',' << fixed(r.bim_accuracy) << '\n';
  std::cout << table.str() << "samples " << r.samples << " max_linf " << r.max_linf * 255.0
            << "/255 within_ball " << (r.within_ball ? "yes" : "no") << " within_range "
            << (r.within_range ? "yes" : "no") << '\n';
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    std::ofstream(fs::path(opts.out) / "attack.csv") << table.str();
  }
  return r.within_ball && r.within_range ? 0 : 1;
}

int run_gradcheck(const CommonOptions& opts, const GradcheckFlags& flags) {
  auto cfg = base_config(opts, nullptr);
  apply_overrides(cfg, opts, false);

  std::vector<OperatorSpec> specs;
  if (flags.all_kinds) {
    for (auto m : kAllMagnitudeKinds) {
      for (auto a : kAllAngularKinds) {
        std::vector<WeightingMode> modes{WeightingMode::Unweighted, WeightingMode::LinearWeighted};
        if (m == MagnitudeKind::Tanh) {
          modes.push_back(WeightingMode::NonlinearCoupled);
          modes.push_back(WeightingMode::NonlinearSeparate);
        }
        for (auto w : modes) {
          OperatorSpec s;
          s.magnitude = MagnitudeSpec::defaults(m);
          s.angular.kind = a;
          s.angular.k = cfg.arch.op.angular.k;
          s.weighting = w;
          specs.push_back(s);
        }
      }
    }
  } else {
    specs.push_back(cfg.arch.op);
  }

  std::ostringstream text;
  bool ok = true;
  for (const auto& spec : specs) {
    auto options = GradcheckOptions::tiny(spec);
    options.arch.batch_norm = cfg.arch.batch_norm;
    options.arch.relu = cfg.arch.relu;
    options.seed = cfg.train.seed;
    options.batch = flags.batch;
    options.force_knee = flags.force_knee;
    const auto report = gradcheck_network(options);
    ok = ok && report.passed();
    if (flags.all_kinds) {
      text << spec.describe() << '\t' << (report.passed() ? "PASS" : "FAIL") << " max_rel_error "
           << report.max_rel_error() << " excluded " << report.excluded() << '\n';
    } else {
      text << spec.describe() << '\n' << report.to_text();
    }
  }
  const auto eq = compare_linear_weighted_to_standard(cfg.train.seed);
  const bool eq_ok = eq.output < 1e-9 && eq.grad_input < 1e-9 && eq.grad_weights < 1e-9;
  ok = ok && eq_ok;
  text << "linear-weighted vs inner product: output " << eq.output << " grad_input " << eq.grad_input
       << " grad_weights " << eq.grad_weights << (eq_ok ? " PASS" : " FAIL") << '\n';

  std::cout << text.str();
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    std::ofstream(fs::path(opts.out) / "gradcheck.txt") << text.str();
  }
  return ok ? 0 : 1;
}

int run_export_csv(const CommonOptions& opts) {
  const auto ckpt = load_checkpoint(checkpoint_path(opts));
  const auto csv = checkpoint_summary_csv(ckpt);
  if (opts.out.empty()) {
    std::cout << csv;
  } else {
    const fs::path out = opts.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream file(out);
    if (!file) throw InputError("cannot write " + out.string());
    file << csv;
  }
  return 0;
}

}  // namespace dcnet::cli
