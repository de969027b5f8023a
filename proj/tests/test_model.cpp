#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "reference_vit.hpp"
#include "support.hpp"
#include "tierprune/checkpoint.hpp"
#include "tierprune/error.hpp"
#include "tierprune/model.hpp"
#include "tierprune/training.hpp"

namespace tierprune {
namespace {

using testing::random_tensor;
using testing::tiny_config;
using testing::tiny_dataset;

std::vector<float> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(ViTConfig, RejectsInvalidGeometry) {
  ViTConfig c = tiny_config();
  c.depth = 0;
  EXPECT_THROW(build_model(c), ConfigError);
  c = tiny_config();
  c.patch_size = 3;
  EXPECT_THROW(build_model(c), ConfigError);
  c = tiny_config();
  c.num_heads = 3;
  EXPECT_THROW(build_model(c), ConfigError);
  c = tiny_config();
  c.num_classes = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, FourLinearGroupsPerBlock) {
  for (int depth : {1, 2, 3}) {
    Model m = build_model(tiny_config(1, depth));
    const auto ids = m.enumerate_linear_groups();
    ASSERT_EQ(ids.size(), static_cast<std::size_t>(4 * depth));
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], static_cast<int>(i));
    for (int id : ids) {
      const auto& g = m.group(id);
      EXPECT_EQ(g.layer_number(), id);
      EXPECT_EQ(g.block(), id / 4);
      EXPECT_EQ(static_cast<int>(g.role()), id % 4);
      EXPECT_FALSE(g.is_skip());
      EXPECT_EQ(g.kept_count(), g.weight().numel());
    }
  }
  Model m = build_model(tiny_config(1, 1));
  EXPECT_EQ(m.enumerate_linear_groups(), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(m.group(0).name(), "blocks.0.qkv");
  EXPECT_EQ(m.group(3).name(), "blocks.0.fc2");
  EXPECT_THROW(m.group(4), UsageError);
}

TEST(Model, SameSeedSameParameters) {
  Model a = build_model(tiny_config(5)), b = build_model(tiny_config(5));
  EXPECT_EQ(a.checksum(), b.checksum());
  Model c = build_model(tiny_config(6));
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Model, ParameterCountsPartition) {
  Model m = build_model(tiny_config());
  EXPECT_EQ(m.prunable_parameter_count() + m.nonprunable_parameter_count(), m.parameter_count());
  std::size_t total = 0;
  for (const auto& p : std::as_const(m).parameters()) total += p.tensor->numel();
  EXPECT_EQ(total, m.parameter_count());
  std::size_t prunable = 0;
  for (const auto& g : std::as_const(m).groups()) prunable += g.weight().numel();
  EXPECT_EQ(prunable, m.prunable_parameter_count());

  Model full = build_model(ViTConfig{});
  EXPECT_LE(full.parameter_count(), 300000u);
  EXPECT_EQ(full.num_linear_groups(), 16u);
}

TEST(Model, ForwardShapeAndMismatch) {
  Model m = build_model(tiny_config());
  Tensor images = random_tensor({2, 3, 8, 8}, 1, 0.0f, 1.0f);
  Tensor logits = m.logits(images);
  EXPECT_EQ(logits.shape(), (Shape{2, 4}));
  EXPECT_THROW(m.logits(random_tensor({2, 3, 16, 16}, 1)), DimensionError);
  EXPECT_THROW(m.logits(random_tensor({2, 1, 8, 8}, 1)), DimensionError);
}

TEST(Model, FullAblationUsesEmbeddingPathOnly) {
  Model m = build_model(tiny_config());
  Tensor images = random_tensor({3, 3, 8, 8}, 2, 0.0f, 1.0f);
  for (auto& g : m.groups()) g.set_skip(true);
  EXPECT_TRUE(m.any_skipped());
  Tensor before = m.logits(images);
  EXPECT_TRUE(before.all_finite());
  // With every LinearGroup skipped their weights cannot matter.
  for (auto& g : m.groups()) {
    for (float& w : g.weight().values()) w = 7.0f;
    for (float& b : g.bias().values()) b = -3.0f;
  }
  Tensor after = m.logits(images);
  EXPECT_EQ(copy_values(before), copy_values(after));
  m.clear_skips();
  EXPECT_FALSE(m.any_skipped());
}

TEST(Model, SkipEqualsManualZeroingBitForBit) {
  Model skipped = build_model(tiny_config());
  Model zeroed = skipped;
  Tensor images = random_tensor({3, 3, 8, 8}, 3, 0.0f, 1.0f);
  for (int id : skipped.enumerate_linear_groups()) {
    Model a = skipped, b = zeroed;
    a.group(id).set_skip(true);
    for (float& w : b.group(id).weight().values()) w = 0.0f;
    for (float& v : b.group(id).bias().values()) v = 0.0f;
    EXPECT_EQ(copy_values(a.logits(images)), copy_values(b.logits(images))) << "layer " << id;
  }
}

TEST(Model, FullModelGradientMatchesFiniteDifferences) {
  Model m = build_model(tiny_config(11));
  Dataset ds = tiny_dataset(4, 2);
  auto params = m.parameters();
  std::vector<Tensor*> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);
  auto rep = testing::finite_difference_check(
      tensors, [&](Tape& t) { return ops::cross_entropy(t, m.forward(t, ds.images), ds.labels); },
      {.per_param = 20, .seed = 3});
  // Every parameter tensor got at least min(20, numel) coordinates.
  for (std::size_t pi = 0; pi < tensors.size(); ++pi) {
    const auto n = std::count_if(rep.samples.begin(), rep.samples.end(),
                                 [&](const auto& s) { return s.param == pi; });
    EXPECT_EQ(static_cast<std::size_t>(n), std::min<std::size_t>(20, tensors[pi]->numel()))
        << params[pi].name;
  }
  EXPECT_LT(rep.max_rel_error, 1e-2);
}

TEST(Model, MatchesDoublePrecisionReference) {
  for (ViTConfig c : {tiny_config(4), ViTConfig{}}) {
    Model m = build_model(c);
    Dataset ds = tiny_dataset(c.num_classes, 1, c.image_size, 8);
    testing::ReferenceViT ref(m);
    const auto expect = ref.logits(ds.images);
    const Tensor got = m.logits(ds.images);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-5) << i;
    EXPECT_NEAR(dataset_loss(m, ds), ref.loss(ds), 1e-5);
  }
}

TEST(Model, GradientMatchesReferenceFiniteDifferences) {
  Model m = build_model(tiny_config(21, 3));
  Dataset ds = tiny_dataset(4, 2);
  const auto rep = testing::reference_gradient_check(m, ds, 30, 5, 1e-3);
  EXPECT_LT(rep.max_rel_error, 1e-2);
}

TEST(Masks, PruneZeroesAndPersists) {
  Model m = build_model(tiny_config());
  LinearGroup& g = m.group(2);
  g.prune(5);
  EXPECT_FALSE(g.kept(5));
  EXPECT_EQ(g.weight()[5], 0.0f);
  EXPECT_EQ(g.pruned_count(), 1u);
  EXPECT_THROW(g.prune(5), UsageError);
  g.weight()[5] = 1.0f;
  m.apply_masks();
  EXPECT_EQ(g.weight()[5], 0.0f);
  std::vector<std::uint8_t> wrong(3, 1);
  EXPECT_THROW(g.set_mask(wrong), DimensionError);
}

TEST(DatasetLoss, UntrainedModelIsNearLogC) {
  ViTConfig c = tiny_config();
  c.num_classes = 10;
  Model m = build_model(c);
  Dataset ds = tiny_dataset(10, 3);
  const double loss = dataset_loss(m, ds);
  EXPECT_GE(loss, 1.8);
  EXPECT_LE(loss, 2.8);
}

TEST(DatasetLoss, DuplicatesAndRepeatsAreInvariant) {
  Model m = build_model(tiny_config());
  Dataset ds = tiny_dataset(4, 3);
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    twice.push_back(i);
    twice.push_back(i);
  }
  Dataset doubled = subset(ds, twice);
  const double once = dataset_loss(m, ds, 5);
  EXPECT_EQ(once, dataset_loss(m, ds, 5));
  EXPECT_NEAR(dataset_loss(m, doubled, 5), once, 1e-6);
  Dataset empty;
  EXPECT_THROW(dataset_loss(m, empty), InputError);
  EXPECT_THROW(accuracy(m, empty), InputError);
}

TEST(Accuracy, ConstantLogitsFavouringClassZero) {
  Model m = build_model(tiny_config());
  for (float& w : m.parameter("head.weight").values()) w = 0.0f;
  Tensor& bias = m.parameter("head.bias");
  for (float& b : bias.values()) b = 0.0f;
  bias[0] = 1.0f;
  Dataset ds = tiny_dataset(4, 3);
  std::fill(ds.labels.begin(), ds.labels.end(), 0);
  EXPECT_EQ(accuracy(m, ds), 1.0);
  // Ties go to the lowest index: all-equal logits predict class 0 too.
  bias[0] = 0.0f;
  EXPECT_EQ(accuracy(m, ds), 1.0);
  const float tied[] = {0.5f, 0.5f, 0.1f};
  EXPECT_EQ(argmax(tied), 0u);
}

TEST(Accuracy, MatchesBruteForceRecountAndComplements) {
  Model m = build_model(tiny_config(9));
  Dataset ds = tiny_dataset(4, 5);
  Tensor logits = m.logits(ds.images);
  std::size_t hits = 0;
  std::vector<int> predicted(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (logits[i * 4 + c] > logits[i * 4 + best]) best = c;
    predicted[i] = static_cast<int>(best);
    hits += predicted[i] == ds.labels[i];
  }
  EXPECT_DOUBLE_EQ(accuracy(m, ds, 3), static_cast<double>(hits) / ds.size());

  // Relabel so exactly the previously correct examples become wrong.
  Dataset flipped = ds;
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    flipped.labels[i] = predicted[i] == ds.labels[i] ? (predicted[i] + 1) % 4 : predicted[i];
    mismatches += flipped.labels[i] != predicted[i];
  }
  EXPECT_DOUBLE_EQ(accuracy(m, flipped), 1.0 - static_cast<double>(mismatches) / ds.size());
  EXPECT_DOUBLE_EQ(accuracy(m, ds) + accuracy(m, flipped), 1.0);
}

TEST(Train, ZeroEpochsLeavesModel) {
  Model m = build_model(tiny_config());
  const auto before = m.checksum();
  TrainOptions o;
  o.epochs = 0;
  EXPECT_TRUE(train(m, tiny_dataset(), o).empty());
  EXPECT_EQ(m.checksum(), before);
}

TEST(Train, RejectsBadOptions) {
  Model m = build_model(tiny_config());
  TrainOptions o;
  o.lr = 0.0f;
  EXPECT_THROW(train(m, tiny_dataset(), o), ConfigError);
  o.lr = 0.1f;
  o.epochs = -1;
  EXPECT_THROW(train(m, tiny_dataset(), o), ConfigError);
}

TEST(Train, SameSeedSameHistory) {
  TrainOptions o;
  o.epochs = 3;
  o.lr = 0.1f;
  o.batch_size = 4;
  o.seed = 17;
  Model a = build_model(tiny_config()), b = build_model(tiny_config());
  const auto ha = train(a, tiny_dataset(), o);
  const auto hb = train(b, tiny_dataset(), o);
  EXPECT_EQ(ha, hb);
  EXPECT_EQ(a.checksum(), b.checksum());
  ASSERT_EQ(ha.size(), 3u);
}

TEST(Train, MasksHoldAfterEverySgdStep) {
  Model m = build_model(tiny_config());
  for (auto& g : m.groups())
    for (std::size_t i = 0; i < g.weight().numel(); i += 3) g.prune(i);
  TrainOptions o;
  o.epochs = 2;
  o.lr = 0.2f;
  o.batch_size = 4;
  train(m, tiny_dataset(), o);
  for (const auto& g : std::as_const(m).groups())
    for (std::size_t i = 0; i < g.weight().numel(); ++i)
      if (!g.kept(i)) {
        EXPECT_EQ(g.weight()[i], 0.0f);
      }
}

// Baseline fixture: the tiny ViT separates the synthetic classes.
TEST(Train, TinyModelFitsSyntheticData) {
  ViTConfig c = tiny_config(1);
  c.num_classes = 10;
  Model m = build_model(c);
  Dataset ds = tiny_dataset(10, 12, 8, 5, 0.35f);
  TrainOptions o;
  o.epochs = 30;
  o.lr = 0.05f;
  o.batch_size = 4;
  o.seed = 2;
  const auto history = train(m, ds, o);
  EXPECT_GE(accuracy(m, ds), 0.9) << "final epoch loss " << history.back().loss;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m = build_model(tiny_config(21));
  m.group(1).prune(0);
  m.group(6).prune(4);
  m.group(6).prune(9);
  const auto bytes = serialize_model(m);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TPRN");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  Model back = deserialize_model(bytes);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.enumerate_linear_groups(), m.enumerate_linear_groups());
  for (int id : m.enumerate_linear_groups()) {
    const auto a = m.group(id).mask(), b = back.group(id).mask();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    EXPECT_EQ(back.group(id).name(), m.group(id).name());
  }

  const auto path = std::filesystem::temp_directory_path() / "tierprune_test_model.tprn";
  save_checkpoint(m, path);
  EXPECT_EQ(load_checkpoint(path).checksum(), m.checksum());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto bytes = serialize_model(build_model(tiny_config()));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(deserialize_model(bad_version), FormatError);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(deserialize_model(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.tprn"), IoError);
}

}  // namespace
}  // namespace tierprune
