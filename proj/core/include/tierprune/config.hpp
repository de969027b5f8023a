#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tierprune/data.hpp"
#include "tierprune/model.hpp"
#include "tierprune/probe.hpp"
#include "tierprune/pruner.hpp"

namespace tierprune {

enum class DataSource { kSynthetic, kCifar10 };

/// Everything one experiment needs. Serialized as a flat JSON object whose
/// keys are exactly the member names below; unknown keys are rejected.
struct ExperimentConfig {
  // Model.
  int image_size = 32;
  int patch_size = 4;
  int embed_dim = 64;
  int num_heads = 4;
  int depth = 4;
  int mlp_ratio = 2;
  int num_classes = 10;

  // Data.
  DataSource dataset = DataSource::kSynthetic;
  std::vector<std::string> cifar10_train;
  /// Held-out batches; when empty the train batches are split by eval_fraction.
  std::vector<std::string> cifar10_test;
  double eval_fraction = 0.2;
  int synth_per_class = 100;
  int synth_eval_per_class = 50;
  double synth_noise = 0.35;

  // Personalization (D_user).
  std::vector<int> kept_classes = {0, 1, 2, 3};
  std::optional<int> per_class_cap;

  // Pretraining.
  int pretrain_epochs = 10;
  double pretrain_lr = 0.05;
  int batch_size = 32;
  std::string pretrained_checkpoint;

  // Probe.
  int random_number = 4;
  /// 0 selects default_num_trials().
  int num_trials = 0;
  /// Dead band as a fraction of the baseline loss.
  double margin = kDefaultMarginFraction;
  int refine_budget = 0;
  SamplingMode sampling = SamplingMode::kIndependent;

  // Pruning.
  double prob = 0.04;
  Criterion criterion = Criterion::kWeight;
  int rounds = 10;
  int finetune_epochs = 1;
  double finetune_lr = 0.02;
  bool prune_personalized = true;
  /// With prune_personalized off, raise prob until total compression matches
  /// what the unprotected schedule at `prob` would reach.
  bool compensate_prob = false;

  std::uint64_t seed = 0;
  std::string output_dir = "tierprune_out";

  /// Throws ConfigError naming the offending field.
  void validate() const;

  ViTConfig model_config() const;
  PersonalizationSpec personalization() const;
  PruneSchedule schedule() const;
  std::size_t trials_for(std::size_t num_layers) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Stage-specific seed derived from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage);

/// Throws ConfigError for malformed JSON, wrong value types or unknown keys.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Pretty-printed, keys in declaration order.
std::string config_to_json(const ExperimentConfig& config);

}  // namespace tierprune
