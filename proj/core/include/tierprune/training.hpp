#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tierprune/data.hpp"
#include "tierprune/model.hpp"

namespace tierprune {

inline constexpr std::size_t kDefaultBatchSize = 32;

/// Mean cross-entropy over every example, visited in dataset order in
/// batches of `batch_size`. Honors is_skip flags. Throws InputError for an
/// empty dataset and NumericError if the loss is not finite.
double dataset_loss(const Model& model, const Dataset& dataset,
                    std::size_t batch_size = kDefaultBatchSize);

/// Fraction of examples whose argmax logit equals the label. Ties go to the
/// lowest class index.
double accuracy(const Model& model, const Dataset& dataset,
                std::size_t batch_size = kDefaultBatchSize);

/// Index of the largest value; the first one wins ties.
std::size_t argmax(std::span<const float> values);

struct TrainOptions {
  int epochs = 10;
  float lr = 0.05f;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t seed = 0;
};

struct EpochStats {
  /// Example-weighted mean of the batch losses seen during the epoch.
  double loss = 0.0;
  /// Running training accuracy during the epoch.
  double accuracy = 0.0;

  bool operator==(const EpochStats&) const = default;
};

using TrainingHistory = std::vector<EpochStats>;

/// Plain minibatch SGD with a seeded shuffle per epoch. Masks are re-applied
/// after every optimizer step so pruned weights stay exactly zero.
/// Throws ConfigError for lr <= 0, negative epochs or a zero batch size.
TrainingHistory train(Model& model, const Dataset& dataset, const TrainOptions& options);

/// One optimizer step on a batch; returns the batch loss. Exposed for
/// fixtures that need custom training loops.
double train_step(Model& model, const Tensor& images, std::span<const int> labels, float lr);

}  // namespace tierprune
