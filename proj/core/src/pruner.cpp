#include "tierprune/pruner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tierprune/error.hpp"
#include "tierprune/ops.hpp"
#include "tierprune/training.hpp"

namespace tierprune {

std::string_view criterion_name(Criterion c) {
  return c == Criterion::kWeight ? "weight" : "gradient";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "weight") return Criterion::kWeight;
  if (name == "gradient") return Criterion::kGradient;
  throw ConfigError("unknown prune criterion '" + std::string(name) + "' (weight|gradient)");
}

void PruneSchedule::validate() const {
  if (!(prob >= 0.0 && prob < 1.0)) throw ConfigError("prune schedule: prob must be in [0, 1)");
  if (rounds < 1) throw ConfigError("prune schedule: rounds must be at least 1");
  if (finetune_epochs < 0) throw ConfigError("prune schedule: finetune_epochs must be nonnegative");
  if (finetune_epochs > 0 && !(lr > 0.0f)) throw ConfigError("prune schedule: lr must be positive");
  if (batch_size == 0) throw ConfigError("prune schedule: batch_size must be positive");
}

namespace {

// prob * num / 10^shift, computed on the shortest decimal spelling of prob
// and rounded once. Plain binary arithmetic gives 0.05 * 3/4 =
// 0.037500000000000006 instead of the double nearest 0.0375.
double decimal_scaled(double prob, std::uint64_t num, int shift) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, prob, std::chars_format::scientific);
  const std::string text(buf, res.ptr);
  const auto e = text.find('e');
  std::uint64_t mantissa = 0;
  int digits_after_point = 0;
  bool after_point = false;
  for (std::size_t i = 0; i < e; ++i) {
    if (text[i] == '.') {
      after_point = true;
      continue;
    }
    mantissa = mantissa * 10 + static_cast<std::uint64_t>(text[i] - '0');
    if (after_point) ++digits_after_point;
  }
  const int exponent = std::atoi(text.c_str() + e + 1) - digits_after_point - shift;
  const std::string scaled = std::to_string(mantissa * num) + "e" + std::to_string(exponent);
  return std::strtod(scaled.c_str(), nullptr);
}

}  // namespace

double tier_rate(double prob, Tier tier, bool prune_personalized) {
  if (prob < 0.0) return -tier_rate(-prob, tier, prune_personalized);
  if (prob == 0.0 || !std::isfinite(prob)) {
    return tier == Tier::kPersonalized && !prune_personalized ? 0.0 : prob;
  }
  switch (tier) {
    case Tier::kGeneric: return prob;
    // prob / 2
    case Tier::kPersonalized: return prune_personalized ? decimal_scaled(prob, 5, 1) : 0.0;
    // (prob + prob / 2) / 2 = 3 * prob / 4
    case Tier::kOther: return decimal_scaled(prob, 75, 2);
  }
  return 0.0;
}

namespace {

LayerScores magnitude_scores(const LinearGroup& layer, std::span<const float> values) {
  LayerScores s;
  s.index.reserve(layer.kept_count());
  s.score.reserve(layer.kept_count());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!layer.kept(i)) continue;
    s.index.push_back(i);
    s.score.push_back(std::fabs(values[i]));
  }
  return s;
}

}  // namespace

std::vector<LayerScores> score_weights(Model& model, Criterion criterion, const Dataset* dataset,
                                       std::size_t batch_size) {
  std::vector<LayerScores> out;
  out.reserve(model.num_linear_groups());
  if (criterion == Criterion::kWeight) {
    for (const auto& g : model.groups()) out.push_back(magnitude_scores(g, g.weight().values()));
    return out;
  }

  if (!dataset || dataset->empty()) throw InputError("gradient criterion needs a nonempty dataset");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (model.any_skipped()) throw UsageError("gradient scoring needs every layer active");
  model.zero_grad();
  std::size_t batches = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset->size(); start += batch_size) {
    const std::size_t end = std::min(dataset->size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    Var loss = ops::cross_entropy(tape, model.forward(tape, dataset->gather_images(idx)),
                                  dataset->gather_labels(idx));
    tape.backward(loss);
    ++batches;
  }
  const float inv = 1.0f / static_cast<float>(batches);
  for (auto& g : model.groups()) {
    std::vector<float> mean(g.weight().grad().begin(), g.weight().grad().end());
    for (float& v : mean) {
      v *= inv;
      if (!std::isfinite(v)) throw NumericError("non-finite gradient while scoring " + g.name());
    }
    out.push_back(magnitude_scores(g, mean));
  }
  model.clear_grad();
  return out;
}

LayerScores score_weights(Model& model, int layer_number, Criterion criterion,
                          const Dataset* dataset, std::size_t batch_size) {
  model.group(layer_number);  // validates the id
  auto all = score_weights(model, criterion, dataset, batch_size);
  return std::move(all[static_cast<std::size_t>(layer_number)]);
}

std::size_t prune_count(double rate, std::size_t kept) {
  if (rate <= 0.0) return 0;
  const double raw = std::floor(rate * static_cast<double>(kept) + 1e-9);
  return std::min(kept, static_cast<std::size_t>(raw));
}

std::size_t prune_layer(LinearGroup& layer, const LayerScores& scores, double rate) {
  if (scores.index.size() != scores.score.size()) throw DimensionError("malformed layer scores");
  const std::size_t n = prune_count(rate, scores.index.size());
  if (n == 0) return 0;
  std::vector<std::size_t> order(scores.index.size());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    if (scores.score[a] != scores.score[b]) return scores.score[a] < scores.score[b];
    return scores.index[a] < scores.index[b];
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - 1), order.end(), less);
  for (std::size_t i = 0; i < n; ++i) layer.prune(scores.index[order[i]]);
  return n;
}

std::vector<std::size_t> prune_step(Model& model, const TierAssignment& tiers,
                                    const PruneSchedule& schedule, const Dataset* scoring_data) {
  schedule.validate();
  if (tiers.size() != model.num_linear_groups()) {
    throw UsageError("prune_step: tier assignment covers " + std::to_string(tiers.size()) +
                     " layers, model has " + std::to_string(model.num_linear_groups()));
  }
  std::vector<std::size_t> pruned(model.num_linear_groups(), 0);
  if (schedule.prob == 0.0) return pruned;
  const auto scores = score_weights(model, schedule.criterion, scoring_data, schedule.batch_size);
  for (auto& g : model.groups()) {
    const auto s = static_cast<std::size_t>(g.layer_number());
    const double rate = tier_rate(schedule.prob, tiers.tiers[s], schedule.prune_personalized);
    pruned[s] = prune_layer(g, scores[s], rate);
  }
  return pruned;
}

double compression(const Model& model) {
  std::size_t total = 0, pruned = 0;
  for (const auto& g : model.groups()) {
    total += g.mask().size();
    pruned += g.pruned_count();
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

PruneHistory iterative_prune(Model& model, const Dataset& user_data, const TierAssignment& tiers,
                             const PruneSchedule& schedule, const Dataset* eval_data) {
  schedule.validate();
  const Dataset& eval = eval_data ? *eval_data : user_data;
  PruneHistory history;
  for (int r = 1; r <= schedule.rounds; ++r) {
    const auto pruned = prune_step(model, tiers, schedule, &user_data);
    const std::size_t total = std::accumulate(pruned.begin(), pruned.end(), std::size_t{0});
    if (total > 0 && schedule.finetune_epochs > 0) {
      TrainOptions opts;
      opts.epochs = schedule.finetune_epochs;
      opts.lr = schedule.lr;
      opts.batch_size = schedule.batch_size;
      opts.seed = schedule.seed + static_cast<std::uint64_t>(r);
      train(model, user_data, opts);
    }
    RoundRecord rec;
    rec.round = r;
    for (const auto& g : model.groups()) {
      const auto s = static_cast<std::size_t>(g.layer_number());
      rec.layers.push_back({g.layer_number(), tiers.tiers[s],
                            tier_rate(schedule.prob, tiers.tiers[s], schedule.prune_personalized),
                            pruned[s], g.kept_count()});
    }
    rec.compression = compression(model);
    rec.loss = dataset_loss(model, eval, schedule.batch_size);
    rec.accuracy = accuracy(model, eval, schedule.batch_size);
    history.rounds.push_back(std::move(rec));
  }
  return history;
}

double simulate_compression(const Model& model, const TierAssignment& tiers, double prob,
                            int rounds, bool prune_personalized) {
  if (tiers.size() != model.num_linear_groups()) {
    throw UsageError("simulate_compression: tier assignment does not cover the model");
  }
  std::size_t total = 0, pruned = 0;
  for (const auto& g : model.groups()) {
    const double rate = tier_rate(prob, tiers.tier(g.layer_number()), prune_personalized);
    std::size_t kept = g.kept_count();
    for (int r = 0; r < rounds; ++r) kept -= prune_count(rate, kept);
    total += g.mask().size();
    pruned += g.mask().size() - kept;
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

double compensated_prob(const Model& model, const TierAssignment& tiers, double target,
                        int rounds) {
  double lo = 0.0, hi = 0.999999;
  if (simulate_compression(model, tiers, hi, rounds, false) < target) {
    throw ConfigError("no prune rate below 1 reaches compression " + std::to_string(target) +
                      " with the personalized tier protected");
  }
  if (simulate_compression(model, tiers, lo, rounds, false) >= target) return lo;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    if (simulate_compression(model, tiers, mid, rounds, false) >= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

std::string history_to_csv(const PruneHistory& history) {
  std::ostringstream out;
  out << kHistoryCsvHeader << '\n';
  char buf[256];
  for (const auto& round : history.rounds) {
    for (const auto& l : round.layers) {
      std::snprintf(buf, sizeof buf, "%d,%d,%s,%.6g,%zu,%.6f,%.6f,%.6f\n", round.round,
                    l.layer_number, std::string(tier_name(l.tier)).c_str(), l.step_prob, l.pruned,
                    round.compression, round.loss, round.accuracy);
      out << buf;
    }
  }
  return out.str();
}

void write_history_csv(const PruneHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << history_to_csv(history);
  if (!out) throw IoError("write to " + path.string() + " failed");
}

}  // namespace tierprune
