#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "tierprune/data.hpp"
#include "tierprune/model.hpp"
#include "tierprune/probe.hpp"

namespace tierprune {

enum class Criterion { kWeight, kGradient };

std::string_view criterion_name(Criterion c);
/// "weight" or "gradient"; throws ConfigError otherwise.
Criterion parse_criterion(std::string_view name);

struct PruneSchedule {
  /// Global per-round rate in [0, 1).
  double prob = 0.04;
  Criterion criterion = Criterion::kWeight;
  int rounds = 10;
  int finetune_epochs = 1;
  float lr = 0.05f;
  std::size_t batch_size = kDefaultBatchSize;
  /// When false the Personalized tier is never pruned.
  bool prune_personalized = true;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Per-round rate for a tier: Generic prob, Personalized prob/2 (0 when the
/// tier is protected), Other (prob + prob/2) / 2. The arithmetic is done on
/// the decimal value of prob, so tier_rate(0.05, Other) == 0.0375 exactly.
double tier_rate(double prob, Tier tier, bool prune_personalized = true);

/// Scores of the still-kept weights of one layer, in ascending flat index.
struct LayerScores {
  std::vector<std::size_t> index;
  std::vector<float> score;
};

/// Weight criterion: |w|. Gradient criterion: |dL/dw| averaged over one pass
/// of `dataset` in order, in batches of `batch_size` (the gradient of the mean
/// batch loss). Returns one entry per LinearGroup. Throws InputError if the
/// gradient criterion gets an empty dataset and NumericError for non-finite
/// gradients.
std::vector<LayerScores> score_weights(Model& model, Criterion criterion, const Dataset* dataset,
                                       std::size_t batch_size = kDefaultBatchSize);

/// Single-layer form of score_weights.
LayerScores score_weights(Model& model, int layer_number, Criterion criterion,
                          const Dataset* dataset, std::size_t batch_size = kDefaultBatchSize);

/// floor(rate * kept), with a 1e-9 guard so products like 0.03 * 1000 are not
/// floored to 29 by representation error.
std::size_t prune_count(double rate, std::size_t kept);

/// Prunes the floor(rate * kept) lowest-scored kept weights of one layer.
/// Equal scores go to the lower flat index first. Returns the count pruned.
std::size_t prune_layer(LinearGroup& layer, const LayerScores& scores, double rate);

/// One pruning pass over every layer at its tier rate. Returns the pruned
/// count per layer (enumeration order). Throws UsageError when `tiers` does
/// not cover every layer.
std::vector<std::size_t> prune_step(Model& model, const TierAssignment& tiers,
                                    const PruneSchedule& schedule, const Dataset* scoring_data);

struct LayerRoundRecord {
  int layer_number = 0;
  Tier tier = Tier::kOther;
  double step_prob = 0.0;
  std::size_t pruned = 0;
  std::size_t kept = 0;

  bool operator==(const LayerRoundRecord&) const = default;
};

struct RoundRecord {
  int round = 0;
  std::vector<LayerRoundRecord> layers;
  double compression = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;

  bool operator==(const RoundRecord&) const = default;
};

struct PruneHistory {
  std::vector<RoundRecord> rounds;

  double final_compression() const { return rounds.empty() ? 0.0 : rounds.back().compression; }
  bool operator==(const PruneHistory&) const = default;
};

/// `rounds` iterations of prune_step followed by `finetune_epochs` of SGD on
/// `user_data` (masks enforced after every step). Rounds that prune nothing
/// skip the fine-tune. Loss and accuracy of each round are measured on
/// `eval_data` when given, else on `user_data`.
PruneHistory iterative_prune(Model& model, const Dataset& user_data, const TierAssignment& tiers,
                             const PruneSchedule& schedule, const Dataset* eval_data = nullptr);

/// Pruned fraction of LinearGroup weights (biases excluded).
double compression(const Model& model);

/// Compression that iterative_prune would reach. The number of weights each
/// round removes depends only on kept counts and rates, never on scores, so
/// this is exact.
double simulate_compression(const Model& model, const TierAssignment& tiers, double prob,
                            int rounds, bool prune_personalized);

/// Smallest prob (to 1e-6) whose protected-personalized schedule reaches at
/// least `target` compression, found by bisection on simulate_compression.
/// Throws ConfigError if no prob below 1 reaches the target.
double compensated_prob(const Model& model, const TierAssignment& tiers, double target,
                        int rounds);

inline constexpr std::string_view kHistoryCsvHeader =
    "round,layer_number,tier,step_prob,pruned_this_round,cumulative_compression,loss,accuracy";

/// One row per (round, layer) under kHistoryCsvHeader.
std::string history_to_csv(const PruneHistory& history);
void write_history_csv(const PruneHistory& history, const std::filesystem::path& path);

}  // namespace tierprune
