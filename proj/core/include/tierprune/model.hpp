#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tierprune/autograd.hpp"
#include "tierprune/tensor.hpp"

namespace tierprune {

struct ViTConfig {
  int image_size = 32;
  int patch_size = 4;
  int embed_dim = 64;
  int num_heads = 4;
  int depth = 4;
  int mlp_ratio = 2;
  int num_classes = 10;
  std::uint64_t seed = 0;

  static constexpr int kChannels = 3;

  /// Throws ConfigError unless every field is positive, patch_size divides
  /// image_size and num_heads divides embed_dim.
  void validate() const;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  /// Sequence length including the class token.
  int num_tokens() const { return num_patches() + 1; }
  int patch_features() const { return kChannels * patch_size * patch_size; }
  int hidden_dim() const { return embed_dim * mlp_ratio; }
  int num_linear_groups() const { return 4 * depth; }

  bool operator==(const ViTConfig&) const = default;
};

/// Position of a prunable linear layer inside its transformer block.
enum class LinearRole { kQkv = 0, kAttnOut = 1, kFc1 = 2, kFc2 = 3 };

std::string_view role_name(LinearRole role);

/// One prunable linear layer. Holds the weight, the bias, a keep-mask over the
/// weight and the is_skip flag used to ablate the whole layer.
///
/// Invariant: weight[i] == 0 wherever the mask bit is cleared.
class LinearGroup {
 public:
  LinearGroup(int layer_number, int block, LinearRole role, Tensor weight, Tensor bias);

  int layer_number() const { return layer_number_; }
  int block() const { return block_; }
  LinearRole role() const { return role_; }
  /// "blocks.<b>.<role>".
  std::string name() const;

  bool is_skip() const { return is_skip_; }
  void set_skip(bool skip) { is_skip_ = skip; }

  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& bias() const { return bias_; }

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

  /// 1 = kept, 0 = pruned; same length as the weight.
  std::span<const std::uint8_t> mask() const { return mask_; }
  bool kept(std::size_t index) const { return mask_[index] != 0; }
  std::size_t kept_count() const;
  std::size_t pruned_count() const { return mask_.size() - kept_count(); }

  /// Clears one mask bit and zeroes the weight. Throws UsageError if the
  /// entry is already pruned.
  void prune(std::size_t index);
  /// Replaces the mask wholesale (used by checkpoint loading) and re-applies it.
  void set_mask(std::vector<std::uint8_t> mask);
  /// Zeroes every weight whose mask bit is cleared.
  void apply_mask();

  /// Records x * W^T + b, or an all-zero output of the same shape when the
  /// layer is skipped.
  Var apply(Tape& tape, Var x);
  Var apply(Tape& tape, Var x) const;

 private:
  int layer_number_;
  int block_;
  LinearRole role_;
  bool is_skip_ = false;
  Tensor weight_;
  Tensor bias_;
  std::vector<std::uint8_t> mask_;
  std::size_t kept_ = 0;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

/// Mini Vision Transformer: patch embedding, class token, learned positional
/// embedding, `depth` pre-norm blocks (fused qkv attention + GELU MLP), final
/// norm and a linear head over the class token.
///
/// The four linear layers of every block are LinearGroups numbered
/// block-major in the order [qkv, attn-out, fc1, fc2]. Patch embedding and
/// head are ordinary (non-prunable) parameters.
class Model {
 public:
  /// Deterministic scaled-uniform initialization from config.seed.
  explicit Model(const ViTConfig& config);

  const ViTConfig& config() const { return config_; }

  std::size_t num_linear_groups() const { return groups_.size(); }
  /// Layer numbers in enumeration order: 0, 1, ..., 4*depth - 1.
  std::vector<int> enumerate_linear_groups() const;
  LinearGroup& group(int layer_number);
  const LinearGroup& group(int layer_number) const;
  std::span<LinearGroup> groups() { return groups_; }
  std::span<const LinearGroup> groups() const { return groups_; }

  /// Every parameter tensor in a stable order (checkpoint order).
  std::vector<NamedTensor> parameters();
  std::vector<ConstNamedTensor> parameters() const;
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;

  std::size_t parameter_count() const;
  /// LinearGroup weights only.
  std::size_t prunable_parameter_count() const;
  std::size_t nonprunable_parameter_count() const;

  /// images: [batch x 3 x H x W] -> logits [batch x num_classes]. Parameters
  /// are bound as trainable leaves, so backward() on a loss derived from the
  /// result fills their gradients.
  Var forward(Tape& tape, const Tensor& images);
  /// Same graph with parameters bound read-only.
  Var forward(Tape& tape, const Tensor& images) const;
  /// Inference-only convenience: logits for a batch.
  Tensor logits(const Tensor& images) const;

  void set_requires_grad(bool on);
  void zero_grad();
  void clear_grad();
  void apply_masks();
  void clear_skips();
  bool any_skipped() const;

  /// FNV-1a over all parameter bytes and mask bits.
  std::uint64_t checksum() const;

 private:
  struct Block {
    Tensor norm1_gain, norm1_bias;
    Tensor norm2_gain, norm2_bias;
  };

  template <class Self>
  static Var forward_impl(Self& self, Tape& tape, const Tensor& images);

  ViTConfig config_;
  Tensor patch_weight_, patch_bias_;
  Tensor cls_token_, pos_embed_;
  std::vector<Block> blocks_;
  std::vector<LinearGroup> groups_;
  Tensor norm_gain_, norm_bias_;
  Tensor head_weight_, head_bias_;
};

/// Validates the config and builds a freshly initialized model.
Model build_model(const ViTConfig& config);

/// Rearranges [batch x C x H x W] images into [batch x patches x C*p*p] rows,
/// patches in raster order, each row channel-major.
Tensor patchify(const Tensor& images, int patch_size);

}  // namespace tierprune
