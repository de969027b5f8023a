#include "tierprune/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tierprune/error.hpp"
#include "tierprune/ops.hpp"

namespace tierprune {

namespace {

void require_nonempty(const Dataset& dataset, const char* what) {
  if (dataset.empty()) throw InputError(std::string(what) + ": dataset is empty");
}

template <class Fn>
void for_each_batch(std::size_t n, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(std::span<const std::size_t>(idx));
  }
}

}  // namespace

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double dataset_loss(const Model& model, const Dataset& dataset, std::size_t batch_size) {
  require_nonempty(dataset, "dataset_loss");
  double total = 0.0;
  for_each_batch(dataset.size(), batch_size, [&](std::span<const std::size_t> idx) {
    Tape tape(false);
    const Tensor images = dataset.gather_images(idx);
    const std::vector<int> labels = dataset.gather_labels(idx);
    Var loss = ops::cross_entropy(tape, model.forward(tape, images), labels);
    total += static_cast<double>(tape.value(loss).item()) * static_cast<double>(idx.size());
  });
  const double mean = total / static_cast<double>(dataset.size());
  if (!std::isfinite(mean)) throw NumericError("dataset_loss is not finite");
  return mean;
}

double accuracy(const Model& model, const Dataset& dataset, std::size_t batch_size) {
  require_nonempty(dataset, "accuracy");
  std::size_t correct = 0;
  const auto classes = static_cast<std::size_t>(model.config().num_classes);
  for_each_batch(dataset.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const Tensor logits = model.logits(dataset.gather_images(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = logits.values().subspan(i * classes, classes);
      if (static_cast<int>(argmax(row)) == dataset.labels[idx[i]]) ++correct;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

double train_step(Model& model, const Tensor& images, std::span<const int> labels, float lr) {
  model.zero_grad();
  Tape tape;
  Var loss = ops::cross_entropy(tape, model.forward(tape, images), labels);
  const double value = tape.value(loss).item();
  tape.backward(loss);
  for (auto& p : model.parameters()) {
    if (p.tensor->requires_grad()) sgd_step(p.tensor->values(), p.tensor->grad(), lr);
  }
  model.apply_masks();
  return value;
}

TrainingHistory train(Model& model, const Dataset& dataset, const TrainOptions& options) {
  if (!(options.lr > 0.0f)) throw ConfigError("train: learning rate must be positive");
  if (options.epochs < 0) throw ConfigError("train: epochs must be nonnegative");
  if (options.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  TrainingHistory history;
  if (options.epochs == 0) return history;
  require_nonempty(dataset, "train");

  const auto classes = static_cast<std::size_t>(model.config().num_classes);
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor images = dataset.gather_images(idx);
      const std::vector<int> labels = dataset.gather_labels(idx);

      model.zero_grad();
      Tape tape;
      Var logits = model.forward(tape, images);
      Var loss = ops::cross_entropy(tape, logits, labels);
      const Tensor& lv = tape.value(logits);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (static_cast<int>(argmax(lv.values().subspan(i * classes, classes))) == labels[i]) {
          ++correct;
        }
      }
      loss_sum += static_cast<double>(tape.value(loss).item()) * static_cast<double>(idx.size());
      tape.backward(loss);
      for (auto& p : model.parameters()) {
        if (p.tensor->requires_grad()) sgd_step(p.tensor->values(), p.tensor->grad(), options.lr);
      }
      model.apply_masks();
    }
    history.push_back({loss_sum / static_cast<double>(dataset.size()),
                       static_cast<double>(correct) / static_cast<double>(dataset.size())});
  }
  model.clear_grad();
  return history;
}

}  // namespace tierprune
