#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tierprune/data.hpp"
#include "tierprune/model.hpp"
#include "tierprune/training.hpp"

namespace tierprune {

enum class Tier { kPersonalized = 0, kGeneric = 1, kOther = 2 };

/// "personalized", "generic" or "buffer" (the intermediate tier).
std::string_view tier_name(Tier tier);
/// Inverse of tier_name; also accepts "other". Throws FormatError.
Tier parse_tier(std::string_view name);

inline constexpr double kDefaultMarginFraction = 0.02;

/// Loss of the untouched model plus the dead band used by classify().
struct ThresholdSpec {
  double baseline_loss = 0.0;
  double margin = 0.0;

  double upper() const { return baseline_loss + margin; }
  double lower() const { return baseline_loss - margin; }
};

/// threshold = dataset_loss(model, dataset); margin = margin_fraction * threshold.
/// Throws UsageError if any layer is currently skipped, ConfigError for a
/// negative margin fraction.
ThresholdSpec baseline_loss(const Model& model, const Dataset& dataset,
                            double margin_fraction = kDefaultMarginFraction,
                            std::size_t batch_size = kDefaultBatchSize);

enum class TrialStatus { kPending, kObserved, kFailed };

/// One random observation: a set of layers ablated together and the loss
/// seen with them ablated.
struct MaskTrial {
  std::vector<int> layer_ids;  // ascending, distinct
  std::optional<double> observed_loss;
  TrialStatus status = TrialStatus::kPending;
  double wall_ms = 0.0;
  std::string error;
};

enum class SamplingMode {
  /// Each trial is an independent uniform k-subset.
  kIndependent,
  /// Trials are consecutive k-chunks of seeded permutations, so every layer
  /// is covered once before any is repeated (k = 1, n = L gives each layer
  /// exactly once).
  kCovering,
};

/// 3 * ceil(num_layers / k): each layer is expected in about three trials.
std::size_t default_num_trials(std::size_t num_layers, std::size_t random_number);

/// Throws ConfigError unless 1 <= random_number <= num_layers and num_trials >= 1.
std::vector<MaskTrial> sample_trials(std::size_t num_layers, std::size_t random_number,
                                     std::size_t num_trials, std::uint64_t seed,
                                     SamplingMode mode = SamplingMode::kIndependent);

/// Loss with exactly trial.layer_ids skipped. Flags are restored on exit,
/// including on error, and weights are never touched. An empty trial gives
/// the baseline loss. Throws UsageError for invalid ids and NumericError for a
/// non-finite loss.
double observe(Model& model, const Dataset& dataset, const MaskTrial& trial,
               std::size_t batch_size = kDefaultBatchSize);

struct ObserveOptions {
  std::size_t batch_size = kDefaultBatchSize;
  std::size_t threads = 1;
};

/// Observes every pending trial. With threads > 1 each worker uses its own
/// copy of the model; results do not depend on scheduling. Non-finite
/// observations are marked kFailed and logged, not thrown.
void observe_all(Model& model, const Dataset& dataset, std::span<MaskTrial> trials,
                 const ObserveOptions& options = {});

struct TierAssignment {
  std::vector<Tier> tiers;
  /// Per layer: indices of the trials whose verdict (above or below the
  /// band) included that layer.
  std::vector<std::vector<std::size_t>> provenance;

  std::size_t size() const { return tiers.size(); }
  Tier tier(int layer_number) const { return tiers.at(static_cast<std::size_t>(layer_number)); }
  std::size_t count(Tier t) const;
  std::vector<int> layers(Tier t) const;

  static TierAssignment uniform(std::size_t num_layers, Tier tier);

  bool operator==(const TierAssignment&) const = default;
};

/// Thresholded set rule. A trial whose loss exceeds baseline + margin votes
/// all its layers Personalized; one below baseline - margin votes them
/// Generic. Personalized wins conflicts; layers with no decisive vote are
/// Other. Failed trials are ignored. Throws UsageError if a trial is still
/// pending or names a layer outside [0, num_layers).
TierAssignment classify(std::span<const MaskTrial> trials, const ThresholdSpec& threshold,
                        std::size_t num_layers);

struct RefineResult {
  TierAssignment assignment;
  /// The solo observations made, in order.
  std::vector<MaskTrial> observations;
};

/// Matching-pursuit style clean-up of the Personalized tier: each
/// Personalized layer (ascending layer number, at most `budget` of them) is
/// ablated alone and demoted to Other when that loss is not above
/// baseline + margin. Throws ConfigError for a negative budget.
RefineResult refine_personalized(Model& model, const Dataset& dataset,
                                 const TierAssignment& assignment, const ThresholdSpec& threshold,
                                 int budget, std::size_t batch_size = kDefaultBatchSize);

/// Appends one CSV record per trial, writing the header first when the file is
/// new or empty:
///
///   trial,layer_ids,observed_loss,status,wall_ms
///
/// layer_ids are ';'-separated; observed_loss is empty for failed trials.
/// Trial indices start at `first_index`.
void append_trial_log(const std::filesystem::path& path, std::span<const MaskTrial> trials,
                      std::size_t first_index = 0);

inline constexpr std::string_view kTrialLogHeader = "trial,layer_ids,observed_loss,status,wall_ms";

}  // namespace tierprune
