#include "tierprune/probe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "tierprune/error.hpp"
#include "tierprune/parallel.hpp"

namespace tierprune {

std::string_view tier_name(Tier tier) {
  switch (tier) {
    case Tier::kPersonalized: return "personalized";
    case Tier::kGeneric: return "generic";
    case Tier::kOther: return "buffer";
  }
  return "unknown";
}

Tier parse_tier(std::string_view name) {
  if (name == "personalized") return Tier::kPersonalized;
  if (name == "generic") return Tier::kGeneric;
  if (name == "buffer" || name == "other") return Tier::kOther;
  throw FormatError("unknown tier '" + std::string(name) + "'");
}

ThresholdSpec baseline_loss(const Model& model, const Dataset& dataset, double margin_fraction,
                            std::size_t batch_size) {
  if (model.any_skipped()) {
    throw UsageError("baseline_loss: model has skipped layers; the baseline needs the full model");
  }
  if (!(margin_fraction >= 0.0)) throw ConfigError("baseline_loss: margin must be nonnegative");
  ThresholdSpec spec;
  spec.baseline_loss = dataset_loss(model, dataset, batch_size);
  spec.margin = margin_fraction * spec.baseline_loss;
  return spec;
}

std::size_t default_num_trials(std::size_t num_layers, std::size_t random_number) {
  if (random_number == 0) throw ConfigError("random_number must be positive");
  return 3 * ((num_layers + random_number - 1) / random_number);
}

std::vector<MaskTrial> sample_trials(std::size_t num_layers, std::size_t random_number,
                                     std::size_t num_trials, std::uint64_t seed,
                                     SamplingMode mode) {
  if (random_number < 1 || random_number > num_layers) {
    throw ConfigError("sample_trials: random_number " + std::to_string(random_number) +
                      " must be in [1, " + std::to_string(num_layers) + "]");
  }
  if (num_trials < 1) throw ConfigError("sample_trials: num_trials must be at least 1");

  std::mt19937_64 rng(seed);
  std::vector<int> pool(num_layers);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<MaskTrial> trials(num_trials);

  if (mode == SamplingMode::kIndependent) {
    for (auto& trial : trials) {
      // Partial Fisher-Yates: the first k slots become a uniform k-subset.
      for (std::size_t i = 0; i < random_number; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, num_layers - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      trial.layer_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(random_number));
      std::sort(trial.layer_ids.begin(), trial.layer_ids.end());
    }
    return trials;
  }

  std::vector<int> order;
  std::size_t cursor = 0;
  for (auto& trial : trials) {
    std::vector<int> ids;
    while (ids.size() < random_number) {
      if (cursor == order.size()) {
        order = pool;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int candidate = order[cursor++];
      // Wrapping into a fresh permutation can repeat an id within one trial.
      if (std::find(ids.begin(), ids.end(), candidate) == ids.end()) ids.push_back(candidate);
    }
    std::sort(ids.begin(), ids.end());
    trial.layer_ids = std::move(ids);
  }
  return trials;
}

namespace {

class SkipGuard {
 public:
  SkipGuard(Model& model, std::span<const int> ids) : model_(model) {
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= model.num_linear_groups()) {
        throw UsageError("trial names layer " + std::to_string(id) + " which the model does not have");
      }
    }
    for (int id : ids) model_.group(id).set_skip(true);
  }
  ~SkipGuard() { model_.clear_skips(); }
  SkipGuard(const SkipGuard&) = delete;
  SkipGuard& operator=(const SkipGuard&) = delete;

 private:
  Model& model_;
};

void run_observation(Model& model, const Dataset& dataset, MaskTrial& trial, std::size_t batch) {
  const auto start = std::chrono::steady_clock::now();
  try {
    trial.observed_loss = observe(model, dataset, trial, batch);
    trial.status = TrialStatus::kObserved;
  } catch (const NumericError& e) {
    trial.observed_loss.reset();
    trial.status = TrialStatus::kFailed;
    trial.error = e.what();
  }
  trial.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double observe(Model& model, const Dataset& dataset, const MaskTrial& trial, std::size_t batch_size) {
  if (model.any_skipped()) throw UsageError("observe: model already has skipped layers");
  SkipGuard guard(model, trial.layer_ids);
  return dataset_loss(model, dataset, batch_size);
}

void observe_all(Model& model, const Dataset& dataset, std::span<MaskTrial> trials,
                 const ObserveOptions& options) {
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].status == TrialStatus::kPending) pending.push_back(i);
  }
  const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), pending.size());
  if (workers <= 1) {
    for (auto i : pending) run_observation(model, dataset, trials[i], options.batch_size);
  } else {
    std::vector<Model> replicas(workers, model);
    parallel_for(pending.size(), workers, [&](std::size_t w, std::size_t j) {
      run_observation(replicas[w], dataset, trials[pending[j]], options.batch_size);
    });
  }
  for (auto i : pending) {
    if (trials[i].status == TrialStatus::kFailed) {
      spdlog::warn("probe trial {} dropped: {}", i, trials[i].error);
    }
  }
}

std::size_t TierAssignment::count(Tier t) const {
  return static_cast<std::size_t>(std::count(tiers.begin(), tiers.end(), t));
}

std::vector<int> TierAssignment::layers(Tier t) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    if (tiers[i] == t) out.push_back(static_cast<int>(i));
  }
  return out;
}

TierAssignment TierAssignment::uniform(std::size_t num_layers, Tier tier) {
  TierAssignment a;
  a.tiers.assign(num_layers, tier);
  a.provenance.assign(num_layers, {});
  return a;
}

TierAssignment classify(std::span<const MaskTrial> trials, const ThresholdSpec& threshold,
                        std::size_t num_layers) {
  std::vector<bool> personalized(num_layers, false), generic(num_layers, false);
  TierAssignment out = TierAssignment::uniform(num_layers, Tier::kOther);
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const MaskTrial& trial = trials[t];
    if (trial.status == TrialStatus::kPending) {
      throw UsageError("classify: trial " + std::to_string(t) + " has not been observed");
    }
    for (int id : trial.layer_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= num_layers) {
        throw UsageError("classify: trial " + std::to_string(t) + " names unknown layer " +
                         std::to_string(id));
      }
    }
    if (trial.status == TrialStatus::kFailed) continue;
    const double loss = *trial.observed_loss;
    std::vector<bool>* votes = nullptr;
    if (loss > threshold.upper()) {
      votes = &personalized;
    } else if (loss < threshold.lower()) {
      votes = &generic;
    }
    if (!votes) continue;
    for (int id : trial.layer_ids) {
      (*votes)[static_cast<std::size_t>(id)] = true;
      out.provenance[static_cast<std::size_t>(id)].push_back(t);
    }
  }
  for (std::size_t s = 0; s < num_layers; ++s) {
    if (personalized[s]) {
      out.tiers[s] = Tier::kPersonalized;
    } else if (generic[s]) {
      out.tiers[s] = Tier::kGeneric;
    }
  }
  return out;
}

RefineResult refine_personalized(Model& model, const Dataset& dataset,
                                 const TierAssignment& assignment, const ThresholdSpec& threshold,
                                 int budget, std::size_t batch_size) {
  if (budget < 0) throw ConfigError("refine_personalized: budget must be nonnegative");
  RefineResult result{assignment, {}};
  int remaining = budget;
  for (int layer : assignment.layers(Tier::kPersonalized)) {
    if (remaining == 0) break;
    --remaining;
    MaskTrial solo;
    solo.layer_ids = {layer};
    run_observation(model, dataset, solo, batch_size);
    if (solo.status == TrialStatus::kObserved && *solo.observed_loss <= threshold.upper()) {
      result.assignment.tiers[static_cast<std::size_t>(layer)] = Tier::kOther;
    }
    result.observations.push_back(std::move(solo));
  }
  return result;
}

void append_trial_log(const std::filesystem::path& path, std::span<const MaskTrial> trials,
                      std::size_t first_index) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to trial log " + path.string());
  if (fresh) out << kTrialLogHeader << '\n';
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const MaskTrial& t = trials[i];
    std::ostringstream ids;
    for (std::size_t j = 0; j < t.layer_ids.size(); ++j) {
      if (j) ids << ';';
      ids << t.layer_ids[j];
    }
    out << first_index + i << ',' << ids.str() << ',';
    if (t.observed_loss) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", *t.observed_loss);
      out << buf;
    }
    const char* status = t.status == TrialStatus::kObserved ? "ok"
                         : t.status == TrialStatus::kFailed ? "failed"
                                                            : "pending";
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", t.wall_ms);
    out << ',' << status << ',' << wall << '\n';
  }
  if (!out) throw IoError("write to trial log " + path.string() + " failed");
}

}  // namespace tierprune
