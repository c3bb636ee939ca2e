#include "dcnet/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dcnet/errors.hpp"

namespace dcnet {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

/// Values of one section with "section.key" context for errors and a record of
/// which keys were consumed.
class Section {
 public:
  Section(std::string name, const pt::ptree& tree) : name_(std::move(name)), tree_(tree) {}

  bool has(const std::string& key) const { return tree_.find(key) != tree_.not_found(); }

  std::optional<std::string> raw(const std::string& key) {
    auto it = tree_.find(key);
    if (it == tree_.not_found()) return std::nullopt;
    used_.insert(key);
    return trim(it->second.data());
  }

  void read(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }
  void read(const std::string& key, bool& out) {
    if (auto v = raw(key)) {
      if (*v == "true" || *v == "on" || *v == "yes" || *v == "1") out = true;
      else if (*v == "false" || *v == "off" || *v == "no" || *v == "0") out = false;
      else fail(key, "expected a boolean");
    }
  }
  void read(const std::string& key, double& out) {
    if (auto v = raw(key)) out = parse_double(key, *v);
  }
  void read(const std::string& key, std::size_t& out) {
    if (auto v = raw(key)) out = parse_unsigned(key, *v);
  }
  double parse_double(const std::string& key, const std::string& text) const {
    double v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) fail(key, "expected a number");
    return v;
  }
  std::uint64_t parse_unsigned(const std::string& key, const std::string& text) const {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
      fail(key, "expected a non-negative integer");
    }
    return v;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("[" + name_ + "] " + key + ": " + what);
  }

  void reject_unused() const {
    for (const auto& [key, value] : tree_) {
      if (!used_.count(key)) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  std::string name_;
  const pt::ptree& tree_;
  std::set<std::string> used_;
};

OperatorSpec read_operator(Section& s, const OperatorSpec& base) {
  OperatorSpec op = base;
  if (auto v = s.raw("magnitude")) {
    op.magnitude = MagnitudeSpec::defaults(parse_magnitude_kind(*v));
    op.magnitude.alpha = base.magnitude.alpha;
  }
  if (auto v = s.raw("angular")) op.angular.kind = parse_angular_kind(*v);
  if (auto v = s.raw("weighting")) op.weighting = parse_weighting_mode(*v);
  s.read("alpha", op.magnitude.alpha);
  s.read("beta", op.magnitude.beta);
  s.read("k", op.angular.k);
  s.read("rho_learnable", op.magnitude.rho_learnable);
  return op;
}

void write_operator(std::ostream& os, const OperatorSpec& op) {
  os << "magnitude = " << to_string(op.magnitude.kind) << '\n'
     << "angular = " << to_string(op.angular.kind) << '\n'
     << "weighting = " << to_string(op.weighting) << '\n'
     << "alpha = " << fmt_double(op.magnitude.alpha) << '\n'
     << "beta = " << fmt_double(op.magnitude.beta) << '\n'
     << "k = " << fmt_double(op.angular.k) << '\n'
     << "rho_learnable = " << (op.magnitude.rho_learnable ? "true" : "false") << '\n';
}

}  // namespace

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::Mnist ? "mnist" : "cifar10";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "mnist") return DatasetKind::Mnist;
  if (text == "cifar10") return DatasetKind::Cifar10;
  throw ConfigError("unknown dataset '" + text + "'");
}

UpdateRule OptimConfig::rule(std::size_t total_steps) const {
  UpdateRule r;
  r.kind = kind;
  r.beta1 = beta1;
  r.beta2 = beta2;
  r.epsilon = epsilon;
  r.momentum = momentum;
  r.gradient_mode = gradient_mode;
  if (projection) r.projection = ProjectionSpec{projection_interval, projection_s};
  r.schedule = lr_schedule.empty()
                   ? LrSchedule::step_decay(lr, total_steps, lr_decay_at, lr_decay_factor)
                   : LrSchedule{lr_schedule};
  r.validate();
  return r;
}

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::string& origin) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig cfg;
  std::map<std::size_t, const pt::ptree*> groups;
  const pt::ptree* operator_tree = nullptr;
  for (const auto& [name, node] : tree) {
    if (node.empty() && !node.data().empty()) {
      throw ConfigError(origin + ": key '" + name + "' outside any section");
    }
    static const std::set<std::string> known{"model", "operator", "data", "train",
                                             "optim", "attack", "output"};
    if (name == "operator") {
      operator_tree = &node;
    } else if (name.rfind("operator.group", 0) == 0) {
      const std::string digits = name.substr(14);
      std::size_t g = 0;
      auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), g);
      if (digits.empty() || ec != std::errc() || end != digits.data() + digits.size() || g == 0) {
        throw ConfigError(origin + ": bad section name [" + name + "]");
      }
      groups[g] = &node;
    } else if (!known.count(name)) {
      throw ConfigError(origin + ": unknown section [" + name + "]");
    }
  }

  const pt::ptree empty;
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(name, it == tree.not_found() ? empty : it->second);
  };

  {
    auto s = section("model");
    s.read("preset", cfg.arch.preset);
    if (auto v = s.raw("layers")) cfg.arch.custom_layers = split_list(*v);
    if (auto v = s.raw("conv")) {
      if (*v == "decoupled") cfg.arch.decoupled = true;
      else if (*v == "standard") cfg.arch.decoupled = false;
      else s.fail("conv", "expected decoupled or standard");
    }
    s.read("batch_norm", cfg.arch.batch_norm);
    s.read("relu", cfg.arch.relu);
    s.read("width_multiplier", cfg.arch.width_multiplier);
    s.read("ma_momentum", cfg.arch.ma_momentum);
    if (auto v = s.raw("regularizer")) cfg.arch.regularizer.kind = parse_regularizer_kind(*v);
    s.read("lambda", cfg.arch.regularizer.lambda);
    s.read("regularize_fc", cfg.arch.regularize_fc);
    s.reject_unused();
  }
  {
    Section s("operator", operator_tree ? *operator_tree : empty);
    cfg.arch.op = read_operator(s, cfg.arch.op);
    s.reject_unused();
    for (const auto& [g, node] : groups) {
      Section gs("operator.group" + std::to_string(g), *node);
      cfg.arch.group_ops[g] = read_operator(gs, cfg.arch.op);
      gs.reject_unused();
    }
  }
  {
    auto s = section("data");
    if (auto v = s.raw("dataset")) cfg.data.kind = parse_dataset_kind(*v);
    if (auto v = s.raw("path")) cfg.data.path = *v;
    s.read("train_subset", cfg.data.train_subset);
    s.read("test_subset", cfg.data.test_subset);
    s.read("augment", cfg.data.augment);
    s.reject_unused();
  }
  {
    auto s = section("train");
    s.read("batch_size", cfg.train.batch_size);
    s.read("steps", cfg.train.steps);
    s.read("eval_interval", cfg.train.eval_interval);
    s.read("eval_batch", cfg.train.eval_batch);
    if (auto v = s.raw("seed")) cfg.train.seed = s.parse_unsigned("seed", *v);
    s.reject_unused();
  }
  {
    auto s = section("optim");
    if (auto v = s.raw("method")) cfg.optim.kind = parse_update_kind(*v);
    s.read("lr", cfg.optim.lr);
    if (auto v = s.raw("lr_decay_at")) {
      cfg.optim.lr_decay_at.clear();
      if (*v != "none") {
        for (const auto& item : split_list(*v)) {
          cfg.optim.lr_decay_at.push_back(s.parse_double("lr_decay_at", item));
        }
      }
    }
    s.read("lr_decay_factor", cfg.optim.lr_decay_factor);
    if (auto v = s.raw("lr_schedule")) {
      for (const auto& item : split_list(*v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) s.fail("lr_schedule", "expected step:lr pairs");
        cfg.optim.lr_schedule.push_back(
            {s.parse_unsigned("lr_schedule", trim(item.substr(0, colon))),
             s.parse_double("lr_schedule", trim(item.substr(colon + 1)))});
      }
    }
    s.read("beta1", cfg.optim.beta1);
    s.read("beta2", cfg.optim.beta2);
    s.read("epsilon", cfg.optim.epsilon);
    s.read("momentum", cfg.optim.momentum);
    if (auto v = s.raw("gradient_mode")) cfg.optim.gradient_mode = parse_gradient_mode(*v);
    s.read("projection", cfg.optim.projection);
    s.read("projection_interval", cfg.optim.projection_interval);
    s.read("projection_s", cfg.optim.projection_s);
    s.reject_unused();
  }
  {
    auto s = section("attack");
    if (auto v = s.raw("method")) cfg.attack.method = parse_attack_method(*v);
    s.read("epsilon", cfg.attack.epsilon);
    s.read("tau", cfg.attack.tau);
    s.read("iterations", cfg.attack.iterations);
    s.read("adv_ratio", cfg.attack.adv_ratio);
    s.read("eval_samples", cfg.attack.eval_samples);
    s.read("batch_size", cfg.attack.batch_size);
    s.reject_unused();
  }
  {
    auto s = section("output");
    if (auto v = s.raw("dir")) cfg.output.dir = *v;
    if (auto v = s.raw("init_checkpoint")) {
      if (!v->empty()) cfg.output.init_checkpoint = *v;
    }
    s.read("strict_init", cfg.output.strict_init);
    s.reject_unused();
  }
  cfg.finalize();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), file.string());
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "[model]\n"
     << "preset = " << arch.preset << '\n';
  if (!arch.custom_layers.empty()) {
    os << "layers = ";
    for (std::size_t i = 0; i < arch.custom_layers.size(); ++i) {
      os << (i ? ", " : "") << arch.custom_layers[i];
    }
    os << '\n';
  }
  os << "conv = " << (arch.decoupled ? "decoupled" : "standard") << '\n'
     << "batch_norm = " << (arch.batch_norm ? "true" : "false") << '\n'
     << "relu = " << (arch.relu ? "true" : "false") << '\n'
     << "width_multiplier = " << fmt_double(arch.width_multiplier) << '\n'
     << "ma_momentum = " << fmt_double(arch.ma_momentum) << '\n'
     << "regularizer = " << to_string(arch.regularizer.kind) << '\n'
     << "lambda = " << fmt_double(arch.regularizer.lambda) << '\n'
     << "regularize_fc = " << (arch.regularize_fc ? "true" : "false") << '\n';
  os << "\n[operator]\n";
  write_operator(os, arch.op);
  for (const auto& [g, op] : arch.group_ops) {
    os << "\n[operator.group" << g << "]\n";
    write_operator(os, op);
  }
  os << "\n[data]\n"
     << "dataset = " << to_string(data.kind) << '\n'
     << "path = " << data.path.string() << '\n'
     << "train_subset = " << data.train_subset << '\n'
     << "test_subset = " << data.test_subset << '\n'
     << "augment = " << (data.augment ? "true" : "false") << '\n';
  os << "\n[train]\n"
     << "batch_size = " << train.batch_size << '\n'
     << "steps = " << train.steps << '\n'
     << "eval_interval = " << train.eval_interval << '\n'
     << "eval_batch = " << train.eval_batch << '\n'
     << "seed = " << train.seed << '\n';
  os << "\n[optim]\n"
     << "method = " << (optim.kind == UpdateKind::Adam ? "adam" : "sgd") << '\n'
     << "lr = " << fmt_double(optim.lr) << '\n'
     << "lr_decay_at = ";
  if (optim.lr_decay_at.empty()) os << "none";
  for (std::size_t i = 0; i < optim.lr_decay_at.size(); ++i) {
    os << (i ? ", " : "") << fmt_double(optim.lr_decay_at[i]);
  }
  os << '\n' << "lr_decay_factor = " << fmt_double(optim.lr_decay_factor) << '\n';
  if (!optim.lr_schedule.empty()) {
    os << "lr_schedule = ";
    for (std::size_t i = 0; i < optim.lr_schedule.size(); ++i) {
      os << (i ? ", " : "") << optim.lr_schedule[i].step << ':' << fmt_double(optim.lr_schedule[i].lr);
    }
    os << '\n';
  }
  os << "beta1 = " << fmt_double(optim.beta1) << '\n'
     << "beta2 = " << fmt_double(optim.beta2) << '\n'
     << "epsilon = " << fmt_double(optim.epsilon) << '\n'
     << "momentum = " << fmt_double(optim.momentum) << '\n'
     << "gradient_mode = " << to_string(optim.gradient_mode) << '\n'
     << "projection = " << (optim.projection ? "true" : "false") << '\n'
     << "projection_interval = " << optim.projection_interval << '\n'
     << "projection_s = " << fmt_double(optim.projection_s) << '\n';
  os << "\n[attack]\n"
     << "method = " << to_string(attack.method) << '\n'
     << "epsilon = " << fmt_double(attack.epsilon) << '\n'
     << "tau = " << fmt_double(attack.tau) << '\n'
     << "iterations = " << attack.iterations << '\n'
     << "adv_ratio = " << fmt_double(attack.adv_ratio) << '\n'
     << "eval_samples = " << attack.eval_samples << '\n'
     << "batch_size = " << attack.batch_size << '\n';
  os << "\n[output]\n"
     << "dir = " << output.dir.string() << '\n';
  if (output.init_checkpoint) os << "init_checkpoint = " << output.init_checkpoint->string() << '\n';
  os << "strict_init = " << (output.strict_init ? "true" : "false") << '\n';
  return os.str();
}

void ExperimentConfig::finalize() {
  if (data.kind == DatasetKind::Mnist) {
    arch.in_channels = 1;
    arch.height = arch.width = 28;
  } else {
    arch.in_channels = 3;
    arch.height = arch.width = 32;
  }
  arch.num_classes = 10;
  validate();
}

void ExperimentConfig::validate() const {
  arch.validate();
  if (train.batch_size == 0) throw ConfigError("[train] batch_size must be >= 1");
  if (train.eval_interval == 0) throw ConfigError("[train] eval_interval must be >= 1");
  if (train.eval_batch == 0) throw ConfigError("[train] eval_batch must be >= 1");
  optim.rule(train.steps);
  attack.validate();
}

}  // namespace dcnet
