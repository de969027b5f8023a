#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tierprune/config.hpp"
#include "tierprune/data.hpp"
#include "tierprune/error.hpp"
#include "tierprune/model.hpp"
#include "tierprune/report.hpp"

namespace tierprune {

enum class Stage { kConfig, kData, kPretrain, kProbe, kPrune, kReport };

std::string_view stage_name(Stage stage);
/// Process exit code for a failure in `stage`: config 2, data 3, pretrain 4,
/// probe 5, prune 6, report 7.
int stage_exit_code(Stage stage);

/// A pipeline failure tagged with the stage it happened in. what() reads
/// "[stage] original message".
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& message);
  Stage stage() const { return stage_; }
  int exit_code() const { return stage_exit_code(stage_); }

 private:
  Stage stage_;
};

/// The three datasets one experiment touches. user_train / user_eval carry
/// the personalized classes with labels mapped back to the pretrained head's
/// class ids.
struct ExperimentData {
  Dataset train;       // full label space, used for pretraining
  Dataset user_train;  // probe + fine-tune split
  Dataset user_eval;   // held out; every reported accuracy comes from here
};

ExperimentData prepare_data(const ExperimentConfig& config);

/// Loads config.pretrained_checkpoint when set (its geometry must match the
/// config), else trains a fresh model on data.train.
Model pretrain(const ExperimentConfig& config, const ExperimentData& data);

struct RunOptions {
  /// Skip pretraining and start from a copy of this model.
  const Model* pretrained = nullptr;
  /// Reuse already prepared data.
  const ExperimentData* data = nullptr;
  /// Threads for probe trials; 0 means thread_limit().
  std::size_t threads = 0;
  /// When false nothing is written to config.output_dir.
  bool write_outputs = true;
};

/// data -> personalize -> pretrain -> baseline -> trials -> classify
/// (-> refine) -> iterative prune -> evaluate -> report + checkpoint.
/// Deterministic in config.seed. Output directory gets config.json,
/// trials.csv, history.csv, model.tprn, report.json and report.csv; files
/// written before a failure are left in place. Throws StageError.
ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

enum class SweepAxis { kPruneRate, kRandomNumber, kCriterion, kPrunePersonalized };
std::string_view axis_name(SweepAxis axis);
/// prune_rate | random_number | criterion | prune_personalized.
SweepAxis parse_axis(std::string_view name);
/// Copy of `base` with the axis field set from its text value. Throws
/// ConfigError for an unparseable value.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

struct SweepCell {
  std::string value;
  bool ok = false;
  std::string error;
  std::optional<ExperimentReport> report;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::kPruneRate;
  std::vector<SweepCell> cells;
};

struct SweepOptions {
  /// Concurrent cells; 0 means thread_limit().
  std::size_t threads = 0;
  bool write_outputs = true;
};

/// One run_experiment per value, all from the same seed and the same
/// pretrained model. Cell outputs go to <output_dir>/<axis>_<value>/ and the
/// combined table to <output_dir>/sweep.csv. A failing cell is recorded and
/// the sweep carries on; only data or pretraining failures, which every cell
/// shares, throw.
SweepResult sweep(const ExperimentConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values, const SweepOptions& options = {});

/// Header: axis,value,status,<report.csv columns>,error
std::string sweep_to_csv(const SweepResult& result);

}  // namespace tierprune
