#include "tierprune/model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <type_traits>

#include "tierprune/error.hpp"
#include "tierprune/ops.hpp"

namespace tierprune {

void ViTConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(embed_dim, "embed_dim");
  positive(num_heads, "num_heads");
  positive(depth, "depth");
  positive(mlp_ratio, "mlp_ratio");
  positive(num_classes, "num_classes");
  if (image_size % patch_size != 0) {
    throw ConfigError("model config: patch_size must divide image_size");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("model config: num_heads must divide embed_dim");
  }
}

std::string_view role_name(LinearRole role) {
  switch (role) {
    case LinearRole::kQkv: return "qkv";
    case LinearRole::kAttnOut: return "attn_out";
    case LinearRole::kFc1: return "fc1";
    case LinearRole::kFc2: return "fc2";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// LinearGroup

LinearGroup::LinearGroup(int layer_number, int block, LinearRole role, Tensor weight, Tensor bias)
    : layer_number_(layer_number),
      block_(block),
      role_(role),
      weight_(std::move(weight)),
      bias_(std::move(bias)),
      mask_(weight_.numel(), 1),
      kept_(weight_.numel()) {
  if (weight_.rank() != 2 || bias_.numel() != weight_.dim(0)) {
    throw DimensionError("LinearGroup: weight must be [out x in] and bias [out]");
  }
}

std::string LinearGroup::name() const {
  return "blocks." + std::to_string(block_) + "." + std::string(role_name(role_));
}

std::size_t LinearGroup::kept_count() const { return kept_; }

void LinearGroup::prune(std::size_t index) {
  if (index >= mask_.size()) throw UsageError("prune index out of range for " + name());
  if (!mask_[index]) throw UsageError("weight already pruned in " + name());
  mask_[index] = 0;
  weight_[index] = 0.0f;
  --kept_;
}

void LinearGroup::set_mask(std::vector<std::uint8_t> mask) {
  if (mask.size() != weight_.numel()) {
    throw DimensionError("mask length does not match weight of " + name());
  }
  kept_ = 0;
  for (auto& bit : mask) {
    bit = bit ? 1 : 0;
    kept_ += bit;
  }
  mask_ = std::move(mask);
  apply_mask();
}

void LinearGroup::apply_mask() {
  if (kept_ == mask_.size()) return;
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (!mask_[i]) weight_[i] = 0.0f;
  }
}

namespace {

Var skipped_output(Tape& tape, Var x, std::size_t out_features) {
  Shape shape = tape.shape(x);
  shape.back() = out_features;
  return tape.constant(Tensor(std::move(shape), 0.0f));
}

}  // namespace

Var LinearGroup::apply(Tape& tape, Var x) {
  if (is_skip_) return skipped_output(tape, x, out_features());
  return ops::linear(tape, x, tape.param(weight_), tape.param(bias_));
}

Var LinearGroup::apply(Tape& tape, Var x) const {
  if (is_skip_) return skipped_output(tape, x, out_features());
  return ops::linear(tape, x, tape.input(weight_), tape.input(bias_));
}

// ---------------------------------------------------------------------------
// Model

namespace {

Tensor uniform(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

float fan_in_bound(std::size_t fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

}  // namespace

Model::Model(const ViTConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const auto d = static_cast<std::size_t>(config_.embed_dim);
  const auto pf = static_cast<std::size_t>(config_.patch_features());
  const auto hidden = static_cast<std::size_t>(config_.hidden_dim());
  const auto tokens = static_cast<std::size_t>(config_.num_tokens());
  const auto classes = static_cast<std::size_t>(config_.num_classes);

  patch_weight_ = uniform({d, pf}, fan_in_bound(pf), rng);
  patch_bias_ = Tensor({d}, 0.0f);
  cls_token_ = uniform({d}, 0.02f, rng);
  pos_embed_ = uniform({tokens, d}, 0.02f, rng);

  int layer_number = 0;
  for (int b = 0; b < config_.depth; ++b) {
    blocks_.push_back(Block{Tensor({d}, 1.0f), Tensor({d}, 0.0f), Tensor({d}, 1.0f),
                            Tensor({d}, 0.0f)});
    const std::pair<LinearRole, std::pair<std::size_t, std::size_t>> layout[] = {
        {LinearRole::kQkv, {3 * d, d}},
        {LinearRole::kAttnOut, {d, d}},
        {LinearRole::kFc1, {hidden, d}},
        {LinearRole::kFc2, {d, hidden}},
    };
    for (const auto& [role, dims] : layout) {
      const auto [out_f, in_f] = dims;
      groups_.emplace_back(layer_number++, b, role, uniform({out_f, in_f}, fan_in_bound(in_f), rng),
                           Tensor({out_f}, 0.0f));
    }
  }
  norm_gain_ = Tensor({d}, 1.0f);
  norm_bias_ = Tensor({d}, 0.0f);
  head_weight_ = uniform({classes, d}, fan_in_bound(d), rng);
  head_bias_ = Tensor({classes}, 0.0f);
  set_requires_grad(true);
}

Model build_model(const ViTConfig& config) { return Model(config); }

std::vector<int> Model::enumerate_linear_groups() const {
  std::vector<int> ids;
  ids.reserve(groups_.size());
  for (const auto& g : groups_) ids.push_back(g.layer_number());
  return ids;
}

LinearGroup& Model::group(int layer_number) {
  if (layer_number < 0 || static_cast<std::size_t>(layer_number) >= groups_.size()) {
    throw UsageError("no linear group with layer_number " + std::to_string(layer_number));
  }
  return groups_[static_cast<std::size_t>(layer_number)];
}

const LinearGroup& Model::group(int layer_number) const {
  return const_cast<Model*>(this)->group(layer_number);
}

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out;
  out.push_back({"patch_embed.weight", &patch_weight_});
  out.push_back({"patch_embed.bias", &patch_bias_});
  out.push_back({"cls_token", &cls_token_});
  out.push_back({"pos_embed", &pos_embed_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    out.push_back({prefix + "norm1.gain", &blocks_[b].norm1_gain});
    out.push_back({prefix + "norm1.bias", &blocks_[b].norm1_bias});
    out.push_back({prefix + "norm2.gain", &blocks_[b].norm2_gain});
    out.push_back({prefix + "norm2.bias", &blocks_[b].norm2_bias});
    for (std::size_t r = 0; r < 4; ++r) {
      auto& g = groups_[4 * b + r];
      out.push_back({g.name() + ".weight", &g.weight()});
      out.push_back({g.name() + ".bias", &g.bias()});
    }
  }
  out.push_back({"norm.gain", &norm_gain_});
  out.push_back({"norm.bias", &norm_bias_});
  out.push_back({"head.weight", &head_weight_});
  out.push_back({"head.bias", &head_bias_});
  return out;
}

std::vector<ConstNamedTensor> Model::parameters() const {
  std::vector<ConstNamedTensor> out;
  for (auto& p : const_cast<Model*>(this)->parameters()) out.push_back({p.name, p.tensor});
  return out;
}

Tensor& Model::parameter(std::string_view name) {
  for (auto& p : parameters()) {
    if (p.name == name) return *p.tensor;
  }
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

const Tensor& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

std::size_t Model::prunable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.weight().numel();
  return n;
}

std::size_t Model::nonprunable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    bool prunable = false;
    for (const auto& g : groups_) prunable = prunable || (p.tensor == &g.weight());
    if (!prunable) n += p.tensor->numel();
  }
  return n;
}

Tensor patchify(const Tensor& images, int patch_size) {
  if (images.rank() != 4) throw DimensionError("images must be [batch x C x H x W]");
  const std::size_t batch = images.dim(0), ch = images.dim(1), h = images.dim(2),
                    w = images.dim(3);
  const auto p = static_cast<std::size_t>(patch_size);
  if (h % p != 0 || w % p != 0) throw DimensionError("patch size must divide image size");
  const std::size_t ph = h / p, pw = w / p, feat = ch * p * p;
  Tensor out({batch, ph * pw, feat});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t px = 0; px < pw; ++px) {
        float* dst = out.data() + ((b * ph + py) * pw + px) * feat;
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              *dst++ = images[((b * ch + c) * h + py * p + y) * w + px * p + x];
      }
  return out;
}

template <class Self>
Var Model::forward_impl(Self& self, Tape& tape, const Tensor& images) {
  const ViTConfig& cfg = self.config_;
  const auto size = static_cast<std::size_t>(cfg.image_size);
  if (images.rank() != 4 || images.dim(1) != ViTConfig::kChannels || images.dim(2) != size ||
      images.dim(3) != size) {
    throw DimensionError("forward: expected images [batch x 3 x " + std::to_string(size) + " x " +
                         std::to_string(size) + "], got " + shape_to_string(images.shape()));
  }
  auto bind = [&tape](auto& t) {
    if constexpr (std::is_const_v<std::remove_reference_t<decltype(t)>>) {
      return tape.input(t);
    } else {
      return tape.param(t);
    }
  };

  const std::size_t batch = images.dim(0);
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto tokens = static_cast<std::size_t>(cfg.num_tokens());

  Var patches = tape.constant(patchify(images, cfg.patch_size));
  Var x = ops::linear(tape, patches, bind(self.patch_weight_), bind(self.patch_bias_));
  x = ops::prepend_token(tape, x, bind(self.cls_token_));
  x = ops::add_broadcast(tape, x, bind(self.pos_embed_));
  x = ops::reshape(tape, x, {batch * tokens, d});

  for (std::size_t b = 0; b < self.blocks_.size(); ++b) {
    auto& blk = self.blocks_[b];
    auto& qkv = self.groups_[4 * b + 0];
    auto& attn_out = self.groups_[4 * b + 1];
    auto& fc1 = self.groups_[4 * b + 2];
    auto& fc2 = self.groups_[4 * b + 3];

    Var h = ops::layer_norm(tape, x, bind(blk.norm1_gain), bind(blk.norm1_bias));
    h = qkv.apply(tape, h);
    h = ops::attention(tape, h, batch, tokens, static_cast<std::size_t>(cfg.num_heads));
    h = attn_out.apply(tape, h);
    x = ops::add(tape, x, h);

    h = ops::layer_norm(tape, x, bind(blk.norm2_gain), bind(blk.norm2_bias));
    h = fc1.apply(tape, h);
    h = ops::gelu(tape, h);
    h = fc2.apply(tape, h);
    x = ops::add(tape, x, h);
  }

  x = ops::layer_norm(tape, x, bind(self.norm_gain_), bind(self.norm_bias_));
  x = ops::reshape(tape, x, {batch, tokens, d});
  Var cls = ops::select_token(tape, x, 0);
  return ops::linear(tape, cls, bind(self.head_weight_), bind(self.head_bias_));
}

Var Model::forward(Tape& tape, const Tensor& images) { return forward_impl(*this, tape, images); }

Var Model::forward(Tape& tape, const Tensor& images) const {
  return forward_impl(*this, tape, images);
}

Tensor Model::logits(const Tensor& images) const {
  Tape tape(false);
  Var out = forward(tape, images);
  return tape.value(out);
}

void Model::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.tensor->set_requires_grad(on);
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

void Model::clear_grad() {
  for (auto& p : parameters()) p.tensor->clear_grad();
}

void Model::apply_masks() {
  for (auto& g : groups_) g.apply_mask();
}

void Model::clear_skips() {
  for (auto& g : groups_) g.set_skip(false);
}

bool Model::any_skipped() const {
  for (const auto& g : groups_) {
    if (g.is_skip()) return true;
  }
  return false;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : parameters()) mix(p.tensor->data(), p.tensor->numel() * sizeof(float));
  for (const auto& g : groups_) mix(g.mask().data(), g.mask().size());
  return h;
}

}  // namespace tierprune
