#include "fer/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fer/errors.hpp"

namespace fer {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(u & 0xFF));
      u = static_cast<U>(u >> 8);
    }
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& out() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) throw IntegrityError(std::string("truncated checkpoint reading ") + what, pos_);
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<decltype(u)>((u << 8) | data_[pos_ + i]);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint8_t>(ckpt.precision == Precision::f32 ? 32 : 64));
  w.str32(ckpt.config.to_text());
  w.le(static_cast<std::int32_t>(ckpt.epoch));
  w.f64(ckpt.best_val_acc);
  w.le(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& nt : ckpt.tensors) {
    w.le(static_cast<std::uint16_t>(nt.name.size()));
    w.bytes(nt.name.data(), nt.name.size());
    w.le(static_cast<std::uint8_t>(nt.tensor.dim()));
    for (std::size_t d : nt.tensor.shape()) w.le(static_cast<std::uint64_t>(d));
    for (double v : nt.tensor.data()) w.f32(static_cast<float>(v));
  }
  w.le(static_cast<std::uint8_t>(ckpt.optimizer ? 1 : 0));
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    w.f64(o.base_lr);
    w.f64(o.momentum);
    w.f64(o.rho);
    w.le(static_cast<std::int32_t>(o.epoch));
    w.le(static_cast<std::uint8_t>(o.sam_enabled ? 1 : 0));
    w.le(static_cast<std::uint32_t>(o.velocity.size()));
    for (const auto& v : o.velocity) {
      w.le(static_cast<std::uint64_t>(v.size()));
      for (double x : v) w.f64(x);
    }
  }
  auto& out = w.out();
  const std::uint32_t sum = crc(out.data(), out.size());
  w.le(sum);
  return std::move(out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes.data(), bytes.size());
  const std::string magic = r.str(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw IntegrityError("not a checkpoint (bad magic)", 0);
  }
  const auto version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")",
                         version_at);
  }
  Checkpoint ck;
  const auto prec_at = r.offset();
  const auto bits = r.le<std::uint8_t>("precision");
  if (bits != 32 && bits != 64) throw IntegrityError("bad precision marker", prec_at);
  ck.precision = bits == 32 ? Precision::f32 : Precision::f64;
  const auto cfg_at = r.offset();
  const auto cfg_len = r.le<std::uint32_t>("config length");
  const std::string cfg_text = r.str(cfg_len, "config");
  try {
    ck.config = parse_config(cfg_text, RunConfig{}, "checkpoint");
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("embedded config: ") + e.what(), cfg_at);
  }
  ck.epoch = r.le<std::int32_t>("epoch");
  ck.best_val_acc = r.f64("best_val_acc");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    const auto rank = r.le<std::uint8_t>("tensor rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim_at = r.offset();
      const auto dim = r.le<std::uint64_t>("tensor dims");
      if (dim == 0 || dim > bytes.size()) throw IntegrityError("implausible dimension for " + name, dim_at);
      shape.push_back(static_cast<std::size_t>(dim));
      numel *= static_cast<std::size_t>(dim);
    }
    r.need(numel * 4, "tensor values");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f32("tensor values");
    ck.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(values), true)});
  }
  const auto flag_at = r.offset();
  const auto has_opt = r.le<std::uint8_t>("optimizer flag");
  if (has_opt > 1) throw IntegrityError("bad optimizer flag", flag_at);
  if (has_opt) {
    OptimizerState o;
    o.base_lr = r.f64("optimizer");
    o.momentum = r.f64("optimizer");
    o.rho = r.f64("optimizer");
    o.epoch = r.le<std::int32_t>("optimizer");
    o.sam_enabled = r.le<std::uint8_t>("optimizer") != 0;
    const auto n = r.le<std::uint32_t>("velocity count");
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto len = r.le<std::uint64_t>("velocity length");
      r.need(len * 8, "velocity values");
      auto& v = o.velocity.emplace_back(static_cast<std::size_t>(len));
      for (auto& x : v) x = r.f64("velocity values");
    }
    ck.optimizer = std::move(o);
  }
  const auto crc_at = r.offset();
  const auto stored = r.le<std::uint32_t>("checksum");
  if (r.offset() != bytes.size()) throw IntegrityError("trailing bytes after checksum", r.offset());
  if (stored != crc(bytes.data(), crc_at)) throw IntegrityError("checksum mismatch", crc_at);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string(), 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const RunConfig& config, const SwinModel& model, int epoch, double best_val_acc,
                           const OptimizerState* optimizer) {
  Checkpoint ck;
  ck.config = config;
  ck.precision = precision_mode();
  ck.epoch = epoch;
  ck.best_val_acc = best_val_acc;
  ck.tensors = model.parameters();
  if (optimizer) ck.optimizer = *optimizer;
  return ck;
}

SwinModel model_from_checkpoint(const Checkpoint& ckpt) {
  try {
    ckpt.config.model.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("embedded config: ") + e.what(), 0);
  }
  SwinModel model(ckpt.config.model, 0);
  auto slots = model.parameters();
  if (slots.size() != ckpt.tensors.size()) {
    throw IntegrityError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, architecture needs " +
                             std::to_string(slots.size()),
                         0);
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    if (src.name != slots[i].name || src.tensor.shape() != slots[i].tensor.shape()) {
      throw IntegrityError("tensor " + std::to_string(i) + " is " + src.name + " " + shape_str(src.tensor.shape()) +
                               ", architecture expects " + slots[i].name + " " + shape_str(slots[i].tensor.shape()),
                           0);
    }
    auto dst = slots[i].tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.begin());
  }
  return model;
}

}  // namespace fer
