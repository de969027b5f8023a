#include "tierprune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "tierprune/error.hpp"

namespace tierprune {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'R', 'N'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <class T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void u32(std::size_t v) { le<std::uint32_t>(static_cast<std::uint32_t>(v)); }
  void f32(float v) { le<std::uint32_t>(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <class T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const ViTConfig& c = model.config();
  for (int v : {c.image_size, c.patch_size, c.embed_dim, c.num_heads, c.depth, c.mlp_ratio,
                c.num_classes}) {
    w.u32(static_cast<std::size_t>(v));
  }
  w.le<std::uint64_t>(c.seed);

  const auto params = model.parameters();
  w.u32(params.size());
  for (const auto& p : params) {
    w.u32(p.name.size());
    w.bytes(p.name.data(), p.name.size());
    w.u32(p.tensor->rank());
    for (auto extent : p.tensor->shape()) w.u32(extent);
    for (float v : p.tensor->values()) w.f32(v);
  }

  w.u32(model.num_linear_groups());
  for (const auto& g : model.groups()) {
    w.u32(static_cast<std::size_t>(g.layer_number()));
    const auto mask = g.mask();
    w.le<std::uint64_t>(mask.size());
    std::vector<std::uint8_t> bits((mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    w.bytes(bits.data(), bits.size());
  }
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ViTConfig c;
  for (int* field : {&c.image_size, &c.patch_size, &c.embed_dim, &c.num_heads, &c.depth,
                     &c.mlp_ratio, &c.num_classes}) {
    *field = static_cast<int>(r.u32());
  }
  c.seed = r.le<std::uint64_t>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  Model model(c);
  auto params = model.parameters();
  if (r.u32() != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (auto& p : params) {
    const std::uint32_t name_len = r.u32();
    const auto* name = reinterpret_cast<const char*>(r.take(name_len));
    if (std::string(name, name_len) != p.name) {
      throw FormatError("checkpoint: expected parameter '" + p.name + "', found '" +
                        std::string(name, name_len) + "'");
    }
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != p.tensor->shape()) {
      throw FormatError("checkpoint: shape mismatch for " + p.name);
    }
    for (float& v : p.tensor->values()) v = r.f32();
  }

  if (r.u32() != model.num_linear_groups()) throw FormatError("checkpoint: group count mismatch");
  for (auto& g : model.groups()) {
    if (static_cast<int>(r.u32()) != g.layer_number()) {
      throw FormatError("checkpoint: layer numbers out of order");
    }
    const auto count = r.le<std::uint64_t>();
    if (count != g.weight().numel()) throw FormatError("checkpoint: mask length mismatch for " + g.name());
    const std::uint8_t* bits = r.take((count + 7) / 8);
    std::vector<std::uint8_t> mask(count);
    for (std::size_t i = 0; i < count; ++i) mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
    g.set_mask(std::move(mask));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace tierprune
