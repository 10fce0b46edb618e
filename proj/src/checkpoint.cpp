#include "voxelforge/checkpoint.hpp"

#include <cstring>

#include "voxelforge/errors.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/volume.hpp"

namespace vxf {
namespace {

constexpr char kMagic[8] = {'V', 'X', 'F', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw DataError(std::string("truncated checkpoint while reading ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <class T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what).data(), sizeof(T));
    return value;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::int64_t> parse_ints(std::string_view text) {
  std::vector<std::int64_t> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_int(part));
  return out;
}

std::string channel_order() {
  std::string s;
  for (std::size_t i = 0; i < kModalityNames.size(); ++i) s += (i ? "," : "") + std::string(kModalityNames[i]);
  return s;
}

template <class Real>
void check_record(const TensorRecord* r, const std::string& name, const Shape& shape) {
  if (!r) throw ShapeError("checkpoint has no record for parameter " + name);
  if (r->shape != shape)
    throw ShapeError("shape mismatch for parameter " + name + ": checkpoint " + shape_string(r->shape) +
                     ", model " + shape_string(shape));
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name) const noexcept {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = checkpoint.metadata.serialize();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& r : checkpoint.records) {
    if (shape_numel(r.shape) != static_cast<std::int64_t>(r.values.size()))
      throw ShapeError("checkpoint record " + r.name + " has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.values.data());
    out.insert(out.end(), p, p + r.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) throw DataError("not a voxelforge checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = in.get<std::uint32_t>("metadata length");
  const auto meta = in.take(meta_len, "metadata");
  Checkpoint ck;
  ck.metadata = KeyValueText::parse(std::string(meta.begin(), meta.end()));
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const auto name_len = in.get<std::uint32_t>("record name length");
    const auto name = in.take(name_len, "record name");
    r.name.assign(name.begin(), name.end());
    const auto rank = in.get<std::uint32_t>("record rank");
    if (rank > 8) throw DataError("checkpoint record " + r.name + " has implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = in.get<std::uint64_t>("record extents");
      if (e > (std::uint64_t{1} << 40)) throw DataError("checkpoint record " + r.name + " has implausible extent");
      r.shape.push_back(static_cast<std::int64_t>(e));
      n *= e;
    }
    if (n > (std::uint64_t{1} << 34)) throw DataError("checkpoint record " + r.name + " is implausibly large");
    const auto values = in.take(n * sizeof(float), "record values");
    r.values.resize(n);
    std::memcpy(r.values.data(), values.data(), values.size());
    if (ck.find(r.name)) throw DataError("duplicate checkpoint record " + r.name);
    ck.records.push_back(std::move(r));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint records");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  auto tmp = path;
  tmp += ".partial";
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void write_model_config(KeyValueText& kv, const SegResNetConfig& c, const std::string& prefix) {
  kv.set(prefix + "in_channels", std::to_string(c.in_channels));
  kv.set(prefix + "out_channels", std::to_string(c.out_channels));
  kv.set(prefix + "init_filters", std::to_string(c.init_filters));
  kv.set(prefix + "dropout_prob", format_real(c.dropout_prob));
  kv.set(prefix + "down_blocks", join_ints(c.down_blocks));
  kv.set(prefix + "up_blocks", join_ints(c.up_blocks));
  kv.set(prefix + "norm_groups", std::to_string(c.norm_groups));
  kv.set(prefix + "norm_eps", format_real(c.norm_eps));
}

SegResNetConfig read_model_config(const KeyValueText& kv, const std::string& prefix) {
  SegResNetConfig c;
  c.in_channels = parse_int(kv.get(prefix + "in_channels"));
  c.out_channels = parse_int(kv.get(prefix + "out_channels"));
  c.init_filters = parse_int(kv.get(prefix + "init_filters"));
  c.dropout_prob = parse_real(kv.get(prefix + "dropout_prob"));
  c.down_blocks = parse_ints(kv.get(prefix + "down_blocks"));
  c.up_blocks = parse_ints(kv.get(prefix + "up_blocks"));
  c.norm_groups = parse_int(kv.get(prefix + "norm_groups"));
  c.norm_eps = parse_real(kv.get(prefix + "norm_eps"));
  c.validate();
  return c;
}

template <class Real>
Checkpoint capture_checkpoint(const SegResNet<Real>& model, const AdamState<Real>* adam, KeyValueText metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  ck.metadata.set("channel_order", channel_order());
  write_model_config(ck.metadata, model.config());
  const auto& names = model.parameter_names();
  const auto params = model.parameters();
  auto record = [](std::string name, const Shape& shape, auto values) {
    return TensorRecord{std::move(name), shape, std::vector<float>(values.begin(), values.end())};
  };
  for (std::size_t i = 0; i < params.size(); ++i) ck.records.push_back(record(names[i], params[i].shape(), params[i].data()));
  if (adam) {
    ck.metadata.set("adam.t", std::to_string(adam->t));
    for (std::size_t i = 0; i < params.size(); ++i)
      ck.records.push_back(record("adam.m." + names[i], params[i].shape(), std::span<const Real>(adam->m[i])));
    for (std::size_t i = 0; i < params.size(); ++i)
      ck.records.push_back(record("adam.v." + names[i], params[i].shape(), std::span<const Real>(adam->v[i])));
  }
  return ck;
}

template <class Real>
void restore_checkpoint(const Checkpoint& checkpoint, SegResNet<Real>& model, AdamState<Real>* adam) {
  if (const auto order = checkpoint.metadata.find("channel_order"); order && *order != channel_order())
    throw DataError("checkpoint channel order " + *order + " differs from " + channel_order());
  const auto& names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_record<Real>(checkpoint.find(names[i]), names[i], params[i].shape());
    if (adam) {
      check_record<Real>(checkpoint.find("adam.m." + names[i]), "adam.m." + names[i], params[i].shape());
      check_record<Real>(checkpoint.find("adam.v." + names[i]), "adam.v." + names[i], params[i].shape());
    }
  }
  std::int64_t t = 0;
  if (adam) {
    t = parse_int(checkpoint.metadata.get("adam.t"));
    if (t < 0) throw DataError("negative optimizer step count in checkpoint");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = checkpoint.find(names[i])->values;
    std::copy(v.begin(), v.end(), params[i].mutable_data().begin());
  }
  if (adam) {
    *adam = AdamState<Real>::zeros_like(std::as_const(model).parameters());
    adam->t = t;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& m = checkpoint.find("adam.m." + names[i])->values;
      const auto& v = checkpoint.find("adam.v." + names[i])->values;
      std::copy(m.begin(), m.end(), adam->m[i].begin());
      std::copy(v.begin(), v.end(), adam->v[i].begin());
    }
  }
}

template Checkpoint capture_checkpoint(const SegResNet<float>&, const AdamState<float>*, KeyValueText);
template Checkpoint capture_checkpoint(const SegResNet<double>&, const AdamState<double>*, KeyValueText);
template void restore_checkpoint(const Checkpoint&, SegResNet<float>&, AdamState<float>*);
template void restore_checkpoint(const Checkpoint&, SegResNet<double>&, AdamState<double>*);

}  // namespace vxf
