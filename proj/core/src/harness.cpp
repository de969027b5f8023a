#include "tierprune/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <utility>

#include <spdlog/spdlog.h>

#include "tierprune/checkpoint.hpp"
#include "tierprune/parallel.hpp"
#include "tierprune/probe.hpp"
#include "tierprune/pruner.hpp"
#include "tierprune/training.hpp"
#include "tierprune/version.hpp"

namespace tierprune {

namespace {

// Stage ids for derive_seed. Model init (1), personalization (4) and the
// prune schedule (7) are assigned in config.cpp.
constexpr std::uint64_t kSeedSynthTrain = 2;
constexpr std::uint64_t kSeedSynthEval = 3;
constexpr std::uint64_t kSeedPretrain = 5;
constexpr std::uint64_t kSeedTrials = 6;
constexpr std::uint64_t kSeedEvalSplit = 8;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs fn, rethrowing anything it throws as a StageError for `stage`.
template <typename Fn>
auto in_stage(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::vector<std::filesystem::path> to_paths(const std::vector<std::string>& names) {
  return {names.begin(), names.end()};
}

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kConfig: return "config";
    case Stage::kData: return "data";
    case Stage::kPretrain: return "pretrain";
    case Stage::kProbe: return "probe";
    case Stage::kPrune: return "prune";
    case Stage::kReport: return "report";
  }
  return "unknown";
}

int stage_exit_code(Stage stage) { return 2 + static_cast<int>(stage); }

StageError::StageError(Stage stage, const std::string& message)
    : Error("[" + std::string(stage_name(stage)) + "] " + message), stage_(stage) {}

ExperimentData prepare_data(const ExperimentConfig& config) {
  return in_stage(Stage::kData, [&] {
    Dataset train, eval;
    if (config.dataset == DataSource::kSynthetic) {
      SynthOptions o;
      o.num_classes = config.num_classes;
      o.image_size = config.image_size;
      o.noise = static_cast<float>(config.synth_noise);
      o.per_class = config.synth_per_class;
      o.seed = derive_seed(config.seed, kSeedSynthTrain);
      train = synth_dataset(o);
      o.per_class = config.synth_eval_per_class;
      o.seed = derive_seed(config.seed, kSeedSynthEval);
      eval = synth_dataset(o);
    } else {
      const auto train_paths = to_paths(config.cifar10_train);
      Dataset all = load_cifar10_bin(train_paths);
      if (config.cifar10_test.empty()) {
        auto parts = split(all, config.eval_fraction, derive_seed(config.seed, kSeedEvalSplit));
        eval = std::move(parts.first);
        train = std::move(parts.second);
      } else {
        train = std::move(all);
        const auto test_paths = to_paths(config.cifar10_test);
        eval = load_cifar10_bin(test_paths);
      }
      if (train.image_size() != config.image_size) {
        throw ConfigError("image_size " + std::to_string(config.image_size) +
                          " does not match CIFAR-10 images (" +
                          std::to_string(train.image_size()) + ")");
      }
      if (train.num_classes != config.num_classes) {
        throw ConfigError("num_classes must be 10 for CIFAR-10");
      }
    }
    PersonalizationSpec spec = config.personalization();
    Dataset user_train = personalize(train, spec);
    spec.per_class_cap.reset();
    Dataset user_eval = personalize(eval, spec);
    ExperimentData data;
    data.user_train = restore_source_labels(user_train, config.num_classes);
    data.user_eval = restore_source_labels(user_eval, config.num_classes);
    data.train = std::move(train);
    return data;
  });
}

Model pretrain(const ExperimentConfig& config, const ExperimentData& data) {
  return in_stage(Stage::kPretrain, [&] {
    const ViTConfig want = config.model_config();
    if (!config.pretrained_checkpoint.empty()) {
      Model model = load_checkpoint(config.pretrained_checkpoint);
      ViTConfig got = model.config();
      got.seed = want.seed;
      if (!(got == want)) {
        throw ConfigError("checkpoint " + config.pretrained_checkpoint +
                          " does not match the configured model geometry");
      }
      if (compression(model) > 0.0) {
        throw ConfigError("checkpoint " + config.pretrained_checkpoint + " is already pruned");
      }
      return model;
    }
    Model model(want);
    TrainOptions o;
    o.epochs = config.pretrain_epochs;
    o.lr = static_cast<float>(config.pretrain_lr);
    o.batch_size = static_cast<std::size_t>(config.batch_size);
    o.seed = derive_seed(config.seed, kSeedPretrain);
    const auto history = train(model, data.train, o);
    if (!history.empty()) {
      spdlog::info("pretrain: {} epochs, final loss {:.4f}, train accuracy {:.3f}", history.size(),
                   history.back().loss, history.back().accuracy);
    }
    return model;
  });
}

ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  in_stage(Stage::kConfig, [&] { config.validate(); });

  ExperimentReport report;
  report.config = config;
  report.version = kVersion;
  report.git_revision = kGitRevision;

  const std::filesystem::path out_dir = config.output_dir;
  if (options.write_outputs) {
    in_stage(Stage::kReport, [&] {
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
      write_text(out_dir / "config.json", config_to_json(config));
      std::filesystem::remove(out_dir / "trials.csv", ec);
    });
  }

  auto start = Clock::now();
  std::optional<ExperimentData> owned_data;
  if (options.data == nullptr) owned_data = prepare_data(config);
  const ExperimentData& data = options.data ? *options.data : *owned_data;
  report.timings["data"] = seconds_since(start);

  start = Clock::now();
  Model model = options.pretrained ? *options.pretrained : pretrain(config, data);
  if (options.pretrained) {
    in_stage(Stage::kPretrain, [&] {
      ViTConfig got = model.config();
      got.seed = config.model_config().seed;
      if (!(got == config.model_config())) throw ConfigError("shared model does not match config");
    });
  }
  if (options.write_outputs && !options.pretrained) {
    in_stage(Stage::kReport, [&] { save_checkpoint(model, out_dir / "pretrained.tprn"); });
  }
  report.timings["pretrain"] = seconds_since(start);

  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t num_layers = model.num_linear_groups();

  start = Clock::now();
  const TierAssignment tiers = in_stage(Stage::kProbe, [&] {
    const ThresholdSpec threshold = baseline_loss(model, data.user_train, config.margin, batch);
    report.baseline_loss = threshold.baseline_loss;
    report.margin = threshold.margin;
    report.baseline_accuracy = accuracy(model, data.user_eval, batch);

    auto trials = sample_trials(num_layers, static_cast<std::size_t>(config.random_number),
                                config.trials_for(num_layers),
                                derive_seed(config.seed, kSeedTrials), config.sampling);
    ObserveOptions oo;
    oo.batch_size = batch;
    oo.threads = options.threads == 0 ? thread_limit() : options.threads;
    observe_all(model, data.user_train, trials, oo);
    if (options.write_outputs) append_trial_log(out_dir / "trials.csv", trials);

    report.num_trials = trials.size();
    report.failed_trials = static_cast<std::size_t>(std::count_if(
        trials.begin(), trials.end(), [](const MaskTrial& t) { return t.status == TrialStatus::kFailed; }));

    TierAssignment assignment = classify(trials, threshold, num_layers);
    if (config.refine_budget > 0) {
      auto refined = refine_personalized(model, data.user_train, assignment, threshold,
                                         config.refine_budget, batch);
      if (options.write_outputs) {
        append_trial_log(out_dir / "trials.csv", refined.observations, trials.size());
      }
      assignment = std::move(refined.assignment);
    }
    return assignment;
  });
  report.tiers = tiers.tiers;
  report.personalized = tiers.count(Tier::kPersonalized);
  report.generic = tiers.count(Tier::kGeneric);
  report.buffer = tiers.count(Tier::kOther);
  report.timings["probe"] = seconds_since(start);
  spdlog::info("probe: baseline {:.4f}, tiers P/G/B = {}/{}/{}", report.baseline_loss,
               report.personalized, report.generic, report.buffer);

  start = Clock::now();
  in_stage(Stage::kPrune, [&] {
    PruneSchedule schedule = config.schedule();
    if (!config.prune_personalized && config.compensate_prob && config.prob > 0.0) {
      const double target =
          simulate_compression(model, tiers, config.prob, config.rounds, /*prune_personalized=*/true);
      schedule.prob = compensated_prob(model, tiers, target, config.rounds);
    }
    report.effective_prob = schedule.prob;
    report.history = iterative_prune(model, data.user_train, tiers, schedule, &data.user_eval);
    report.final_compression = compression(model);
    report.final_accuracy = accuracy(model, data.user_eval, batch);
    report.final_loss = dataset_loss(model, data.user_eval, batch);
  });
  report.timings["prune"] = seconds_since(start);

  if (options.write_outputs) {
    in_stage(Stage::kReport, [&] {
      save_checkpoint(model, out_dir / "model.tprn");
      write_history_csv(report.history, out_dir / "history.csv");
      emit_report(report, out_dir, ReportFormat::kJson);
      emit_report(report, out_dir, ReportFormat::kCsv);
    });
  }
  spdlog::info("done: compression {}%, accuracy {}%", format_percent(report.final_compression),
               format_percent(report.final_accuracy));
  return report;
}

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kPruneRate: return "prune_rate";
    case SweepAxis::kRandomNumber: return "random_number";
    case SweepAxis::kCriterion: return "criterion";
    case SweepAxis::kPrunePersonalized: return "prune_personalized";
  }
  return "unknown";
}

SweepAxis parse_axis(std::string_view name) {
  for (SweepAxis a : {SweepAxis::kPruneRate, SweepAxis::kRandomNumber, SweepAxis::kCriterion,
                      SweepAxis::kPrunePersonalized}) {
    if (axis_name(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(name) +
                    "' (prune_rate|random_number|criterion|prune_personalized)");
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
  ExperimentConfig c = base;
  std::size_t used = 0;
  try {
    switch (axis) {
      case SweepAxis::kPruneRate:
        c.prob = std::stod(value, &used);
        break;
      case SweepAxis::kRandomNumber:
        c.random_number = std::stoi(value, &used);
        break;
      case SweepAxis::kCriterion:
        c.criterion = parse_criterion(value);
        used = value.size();
        break;
      case SweepAxis::kPrunePersonalized:
        if (value != "true" && value != "false") throw ConfigError("expected true or false");
        c.prune_personalized = value == "true";
        used = value.size();
        break;
    }
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) {
    throw ConfigError("bad value '" + value + "' for sweep axis " + std::string(axis_name(axis)));
  }
  return c;
}

SweepResult sweep(const ExperimentConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values, const SweepOptions& options) {
  if (values.empty()) throw StageError(Stage::kConfig, "sweep needs at least one value");
  in_stage(Stage::kConfig, [&] { base.validate(); });

  const ExperimentData data = prepare_data(base);
  const Model pretrained = pretrain(base, data);
  const std::filesystem::path root = base.output_dir;
  if (options.write_outputs) {
    in_stage(Stage::kReport, [&] {
      std::filesystem::create_directories(root);
      save_checkpoint(pretrained, root / "pretrained.tprn");
    });
  }

  SweepResult result;
  result.axis = axis;
  result.cells.resize(values.size());
  const std::size_t limit = options.threads == 0 ? thread_limit() : options.threads;
  const std::size_t workers = std::max<std::size_t>(1, std::min(limit, values.size()));
  const std::size_t inner = std::max<std::size_t>(1, limit / workers);

  parallel_for(values.size(), workers, [&](std::size_t, std::size_t i) {
    SweepCell& cell = result.cells[i];
    cell.value = values[i];
    try {
      ExperimentConfig c = in_stage(Stage::kConfig, [&] { return apply_axis(base, axis, values[i]); });
      c.output_dir = (root / (std::string(axis_name(axis)) + "_" + values[i])).string();
      RunOptions ro;
      ro.pretrained = &pretrained;
      ro.data = &data;
      ro.threads = inner;
      ro.write_outputs = options.write_outputs;
      cell.report = run_experiment(c, ro);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
      spdlog::warn("sweep cell {}={} failed: {}", axis_name(axis), values[i], e.what());
    }
  });

  if (options.write_outputs) {
    in_stage(Stage::kReport, [&] { write_text(root / "sweep.csv", sweep_to_csv(result)); });
  }
  return result;
}

std::string sweep_to_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "axis,value,status," << kReportCsvHeader << ",error\n";
  for (const SweepCell& cell : result.cells) {
    out << axis_name(result.axis) << ',' << cell.value << ',' << (cell.ok ? "ok" : "failed") << ',';
    if (cell.ok && cell.report) {
      out << format_report_row(make_report_row(*cell.report)) << ",\n";
    } else {
      out << std::string(15, ',');
      std::string msg = cell.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ',' << msg << '\n';
    }
  }
  return out.str();
}

}  // namespace tierprune
