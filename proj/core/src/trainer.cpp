#include "dcnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dcnet/attack.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/loss.hpp"
#include "dcnet/metrics.hpp"
#include "dcnet/optim.hpp"

namespace dcnet {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kSamplerStream = 1;
constexpr std::uint64_t kAugmentStream = 2;

template <typename T>
std::string norm_dump(Network<T>& net) {
  std::ostringstream os;
  MetricsRow row;
  fill_layer_stats(net, row);
  const auto cols = LayerColumns::of(net);
  for (std::size_t i = 0; i < cols.w_norm_layers.size(); ++i) {
    os << ' ' << cols.w_norm_layers[i] << " mean|w|=" << row.w_norms[i];
  }
  for (std::size_t i = 0; i < cols.rho_layers.size(); ++i) {
    os << ' ' << cols.rho_layers[i] << " mean rho=" << row.rhos[i];
  }
  return os.str();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t batch_size,
                    std::size_t limit) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be >= 1");
  const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
  if (n == 0) throw InputError("evaluation on an empty dataset");
  double loss_sum = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto pass = net.forward(data.gather_images<T>(idx), Mode::Eval);
    const auto labels = data.gather_labels(idx);
    const auto result = softmax_xent(pass.logits, labels);
    loss_sum += static_cast<double>(result.loss) * static_cast<double>(idx.size());
    correct += result.correct;
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n), n};
}

DatasetSplit load_data(const ExperimentConfig& cfg) {
  DatasetSplit split = cfg.data.kind == DatasetKind::Mnist ? load_mnist(cfg.data.path)
                                                           : load_cifar10(cfg.data.path);
  if (cfg.data.train_subset) split.train = split.train.head(cfg.data.train_subset);
  if (cfg.data.test_subset) split.test = split.test.head(cfg.data.test_subset);
  const auto& s = split.train.images.shape();
  if (s[1] != cfg.arch.in_channels || s[2] != cfg.arch.height || s[3] != cfg.arch.width) {
    throw DimensionError("dataset images " + shape_str(s) + " do not match the architecture input");
  }
  return split;
}

template <typename T>
Network<T> make_network(const ExperimentConfig& cfg, LoadReport* report) {
  auto net = build_network<T>(cfg.arch, derive_seed(cfg.train.seed, kInitStream));
  if (cfg.output.init_checkpoint) {
    const auto ckpt = load_checkpoint(*cfg.output.init_checkpoint);
    auto r = restore(net, ckpt, cfg.output.strict_init ? LoadMode::Strict : LoadMode::Partial);
    if (r.loaded.empty()) {
      throw FormatError("init checkpoint " + cfg.output.init_checkpoint->string() +
                        " shares no tensors with the network");
    }
    if (report) *report = std::move(r);
  }
  return net;
}

TrainOutcome train(const ExperimentConfig& cfg, const DatasetSplit& data, Network<float>& net,
                   bool adversarial) {
  cfg.validate();
  if (adversarial && cfg.attack.method != AttackMethod::Fgsm) {
    throw ConfigError("adversarial training uses fgsm examples; set [attack] method = fgsm");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  const fs::path out = cfg.output.dir;
  fs::create_directories(out);
  {
    std::ofstream conf(out / "config.ini");
    conf << cfg.to_text();
  }

  TrainOutcome outcome;
  outcome.metrics = out / "metrics.csv";
  outcome.timing = out / "timing.csv";
  outcome.checkpoint = out / "model.ckpt";
  MetricsWriter writer(outcome.metrics, outcome.timing, LayerColumns::of(net));

  Optimizer<float> optimizer(cfg.optim.rule(cfg.train.steps));
  optimizer.initialize(net);
  BatchSampler sampler(data.train.size(), cfg.train.batch_size,
                       derive_seed(cfg.train.seed, kSamplerStream));
  std::mt19937_64 augment_rng(derive_seed(cfg.train.seed, kAugmentStream));
  const bool augment = cfg.data.augment && cfg.data.kind == DatasetKind::Cifar10;
  const std::size_t batch = cfg.train.batch_size;
  const std::size_t n_adv =
      adversarial ? static_cast<std::size_t>(std::llround(batch * cfg.attack.adv_ratio /
                                                          (1.0 - cfg.attack.adv_ratio)))
                  : 0;

  auto log_row = [&](std::size_t step, double train_loss, double train_acc) {
    MetricsRow row;
    row.step = step;
    row.train_loss = train_loss;
    row.train_acc = train_acc;
    const auto ev = evaluate(net, data.test, cfg.train.eval_batch);
    row.eval_loss = ev.loss;
    row.eval_acc = ev.accuracy;
    fill_layer_stats(net, row);
    writer.write(row, elapsed());
    outcome.final_eval = ev;
  };

  if (cfg.train.steps == 0) {
    const auto tr = evaluate(net, data.train, cfg.train.eval_batch, cfg.train.batch_size);
    log_row(0, tr.loss, tr.accuracy);
  }

  double loss_sum = 0;
  std::size_t correct = 0, seen = 0;
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    const auto idx = sampler.next();
    auto images = data.train.gather_images<float>(idx);
    auto labels = data.train.gather_labels(idx);
    if (augment) {
      const auto draws = draw_augment(augment_rng, images.dim(0));
      apply_augment(images, std::span<const AugmentDraw>(draws));
    }
    if (n_adv > 0) {
      std::vector<std::size_t> pick(n_adv);
      for (std::size_t i = 0; i < n_adv; ++i) pick[i] = i % batch;
      Shape s = images.shape();
      s[0] = n_adv;
      Tensor<float> src(s);
      const std::size_t stride = images.size() / batch;
      std::vector<int> adv_labels(n_adv);
      for (std::size_t i = 0; i < n_adv; ++i) {
        std::copy_n(images.data() + pick[i] * stride, stride, src.data() + i * stride);
        adv_labels[i] = labels[pick[i]];
      }
      const auto adv = fgsm(net, src, adv_labels, cfg.attack.epsilon);
      images = concat_rows(images, adv);
      labels.insert(labels.end(), adv_labels.begin(), adv_labels.end());
    }

    net.zero_grad();
    auto pass = net.forward(images, Mode::Train);
    const auto result = softmax_xent(pass.logits, labels);
    if (!std::isfinite(result.loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + ":" + norm_dump(net));
    }
    net.backward(pass, result.grad_logits);
    net.apply_regularizer();
    optimizer.step(net);

    loss_sum += static_cast<double>(result.loss) * static_cast<double>(labels.size());
    correct += result.correct;
    seen += labels.size();
    const std::size_t done = step + 1;
    if (done % cfg.train.eval_interval == 0 || done == cfg.train.steps) {
      log_row(done, loss_sum / static_cast<double>(seen),
              static_cast<double>(correct) / static_cast<double>(seen));
      loss_sum = 0;
      correct = seen = 0;
    }
  }

  outcome.steps = cfg.train.steps;
  save_checkpoint(outcome.checkpoint,
                  capture(net, {{"config", cfg.to_text()},
                                {"steps", std::to_string(cfg.train.steps)},
                                {"dtype", "f32"}}));
  return outcome;
}

template EvalResult evaluate(Network<float>&, const Dataset&, std::size_t, std::size_t);
template EvalResult evaluate(Network<double>&, const Dataset&, std::size_t, std::size_t);
template Network<float> make_network(const ExperimentConfig&, LoadReport*);
template Network<double> make_network(const ExperimentConfig&, LoadReport*);

}  // namespace dcnet
