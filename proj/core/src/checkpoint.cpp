#include "dcnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <type_traits>

#include "dcnet/errors.hpp"

namespace dcnet {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint8_t b[sizeof(U)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U value;
    std::memcpy(&value, b, sizeof(U));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::optional<std::string> Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) return std::nullopt;
  return it->second;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(Checkpoint::kMagic), std::end(Checkpoint::kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> seen;
  for (const auto& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) throw UsageError("duplicate checkpoint tensor " + t.name);
    if (shape_numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint tensor " + t.name + " shape does not match its values");
    }
    put_string(out, t.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    for (double v : t.values) {
      if (t.dtype == DType::F32) put<float>(out, static_cast<float>(v));
      else put<double>(out, v);
    }
  }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), Checkpoint::kMagic, 8) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  Reader r(bytes.subspan(8));
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.get_string();
    ckpt.metadata[key] = r.get_string();
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError("checkpoint tensor " + t.name + " has unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint32_t>();
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0) throw FormatError("checkpoint tensor " + t.name + " has a zero dimension");
      t.shape.push_back(dim);
      count *= dim;
    }
    r.need(count * (t.dtype == DType::F32 ? 4 : 8));
    t.values.resize(count);
    for (auto& v : t.values) v = t.dtype == DType::F32 ? r.get<float>() : r.get<double>();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const fs::path& file, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  fs::rename(tmp, file);
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + file.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

template <typename T>
Checkpoint capture(Network<T>& net, std::map<std::string, std::string> metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  for (const auto& p : net.params()) {
    const auto v = p.value->values();
    ckpt.tensors.push_back({p.name, dtype_of<T>(), p.value->shape(), {v.begin(), v.end()}});
  }
  for (const auto& s : net.state()) {
    ckpt.tensors.push_back({s.name, dtype_of<T>(), Shape{s.values.size()},
                            {s.values.begin(), s.values.end()}});
  }
  return ckpt;
}

template <typename T>
LoadReport restore(Network<T>& net, const Checkpoint& ckpt, LoadMode mode) {
  struct Target {
    std::string name;
    Shape shape;
    std::span<T> values;
  };
  std::vector<Target> targets;
  for (const auto& p : net.params()) targets.push_back({p.name, p.value->shape(), p.value->values()});
  for (const auto& s : net.state()) targets.push_back({s.name, Shape{s.values.size()}, s.values});

  // Validate everything before writing so a strict failure leaves the network untouched.
  LoadReport report;
  std::vector<std::pair<const Target*, const NamedTensor*>> copies;
  std::set<std::string> used;
  for (const auto& target : targets) {
    const NamedTensor* src = ckpt.find(target.name);
    if (!src) {
      report.missing.push_back(target.name);
      continue;
    }
    if (src->shape != target.shape) {
      if (mode == LoadMode::Strict) {
        throw FormatError("checkpoint tensor " + target.name + " has shape " +
                          shape_str(src->shape) + ", network expects " + shape_str(target.shape));
      }
      continue;
    }
    copies.emplace_back(&target, src);
    used.insert(target.name);
  }
  for (const auto& t : ckpt.tensors)
    if (!used.count(t.name)) report.skipped.push_back(t.name);

  if (mode == LoadMode::Strict && (!report.missing.empty() || !report.skipped.empty())) {
    std::string msg = "checkpoint does not match the network:";
    for (const auto& n : report.missing) msg += " missing " + n + ";";
    for (const auto& n : report.skipped) msg += " unexpected " + n + ";";
    throw FormatError(msg);
  }
  for (const auto& [target, src] : copies) {
    for (std::size_t i = 0; i < src->values.size(); ++i) {
      target->values[i] = static_cast<T>(src->values[i]);
    }
    report.loaded.push_back(target->name);
  }
  return report;
}

template Checkpoint capture(Network<float>&, std::map<std::string, std::string>);
template Checkpoint capture(Network<double>&, std::map<std::string, std::string>);
template LoadReport restore(Network<float>&, const Checkpoint&, LoadMode);
template LoadReport restore(Network<double>&, const Checkpoint&, LoadMode);

}  // namespace dcnet
