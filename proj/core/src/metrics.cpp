#include "dcnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dcnet/errors.hpp"

namespace dcnet {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename T>
double mean_row_norm(const Tensor<T>& w) {
  const auto norms = row_norms(w);
  double s = 0;
  for (auto v : norms.values()) s += v;
  return s / static_cast<double>(norms.size());
}

template <typename T>
double mean_of(std::span<const T> v) {
  double s = 0;
  for (auto x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

template <typename T>
LayerColumns LayerColumns::of(Network<T>& net) {
  LayerColumns c;
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& layer = net.layer(i);
    if (auto* d = dynamic_cast<DecoupledConv<T>*>(&layer)) {
      c.w_norm_layers.push_back(layer.name());
      if (d->op().spec.magnitude.has_radius()) c.rho_layers.push_back(layer.name());
    } else if (dynamic_cast<StandardConv<T>*>(&layer)) {
      c.w_norm_layers.push_back(layer.name());
    }
  }
  return c;
}

template <typename T>
void fill_layer_stats(Network<T>& net, MetricsRow& row) {
  row.w_norms.clear();
  row.rhos.clear();
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& layer = net.layer(i);
    if (auto* d = dynamic_cast<DecoupledConv<T>*>(&layer)) {
      row.w_norms.push_back(mean_row_norm(d->op().weights));
      if (d->op().spec.magnitude.has_radius()) {
        row.rhos.push_back(mean_of<T>(d->op().rho.values()));
      }
    } else if (auto* s = dynamic_cast<StandardConv<T>*>(&layer)) {
      row.w_norms.push_back(mean_row_norm(s->weights()));
    }
  }
}

std::string metrics_header(const LayerColumns& columns) {
  std::string h = "step,train_loss,train_acc,eval_loss,eval_acc";
  for (const auto& n : columns.w_norm_layers) h += ",w_norm:" + n;
  for (const auto& n : columns.rho_layers) h += ",rho:" + n;
  return h;
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.step) + "," + num(row.train_loss) + "," + num(row.train_acc) +
                  "," + num(row.eval_loss) + "," + num(row.eval_acc);
  for (double v : row.w_norms) s += "," + num(v);
  for (double v : row.rhos) s += "," + num(v);
  return s;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& metrics_file,
                             const std::filesystem::path& timing_file, const LayerColumns& columns)
    : expected_w_(columns.w_norm_layers.size()),
      expected_rho_(columns.rho_layers.size()),
      metrics_(metrics_file),
      timing_(timing_file) {
  if (!metrics_) throw InputError("cannot write " + metrics_file.string());
  if (!timing_) throw InputError("cannot write " + timing_file.string());
  metrics_ << metrics_header(columns) << '\n';
  timing_ << "step,wall_time\n";
  metrics_.flush();
  timing_.flush();
}

void MetricsWriter::write(const MetricsRow& row, double wall_time) {
  if (row.w_norms.size() != expected_w_ || row.rhos.size() != expected_rho_) {
    throw DimensionError("metrics row does not match the header columns");
  }
  if (any_row_ && row.step <= last_step_) throw UsageError("metrics steps must increase");
  const std::array<double, 4> core{row.train_loss, row.train_acc, row.eval_loss, row.eval_acc};
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(core.begin(), core.end(), finite) ||
      !std::all_of(row.w_norms.begin(), row.w_norms.end(), finite) ||
      !std::all_of(row.rhos.begin(), row.rhos.end(), finite)) {
    throw NumericError("non-finite metrics at step " + std::to_string(row.step));
  }
  metrics_ << format_metrics_row(row) << '\n';
  timing_ << row.step << ',' << num(wall_time) << '\n';
  metrics_.flush();
  timing_.flush();
  any_row_ = true;
  last_step_ = row.step;
}

std::string checkpoint_summary_csv(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "name,dtype,shape,count,mean,std,min,max,l2,mean_row_norm\n";
  for (const auto& t : ckpt.tensors) {
    double sum = 0, sq = 0, lo = t.values.front(), hi = t.values.front();
    for (double v : t.values) {
      sum += v;
      sq += v * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double n = static_cast<double>(t.values.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    std::string shape;
    for (std::size_t i = 0; i < t.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(t.shape[i]);
    std::string row_norm;
    if (t.shape.size() == 2) {
      double acc = 0;
      const std::size_t d = t.shape[1];
      for (std::size_t r = 0; r < t.shape[0]; ++r) {
        double rs = 0;
        for (std::size_t j = 0; j < d; ++j) rs += t.values[r * d + j] * t.values[r * d + j];
        acc += std::sqrt(rs);
      }
      row_norm = num(acc / static_cast<double>(t.shape[0]));
    }
    os << t.name << ',' << (t.dtype == DType::F32 ? "f32" : "f64") << ',' << shape << ','
       << t.values.size() << ',' << num(mean) << ',' << num(std::sqrt(var)) << ',' << num(lo) << ','
       << num(hi) << ',' << num(std::sqrt(sq)) << ',' << row_norm << '\n';
  }
  return os.str();
}

template LayerColumns LayerColumns::of(Network<float>&);
template LayerColumns LayerColumns::of(Network<double>&);
template void fill_layer_stats(Network<float>&, MetricsRow&);
template void fill_layer_stats(Network<double>&, MetricsRow&);

}  // namespace dcnet
