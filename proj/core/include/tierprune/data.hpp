#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tierprune/tensor.hpp"

namespace tierprune {

/// Labelled images, [N x 3 x H x W] with values in [0, 1].
///
/// `source_classes[c]` is the original class id of dense label c; it is the
/// identity for freshly loaded or generated data and records the re-indexing
/// done by personalize().
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<int> source_classes;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  int image_size() const { return empty() ? 0 : static_cast<int>(images.dim(2)); }

  /// Images and labels for the given example indices, in that order.
  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  /// Throws InputError if shapes and labels disagree.
  void validate() const;
};

inline constexpr std::size_t kCifarImageSize = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarImageSize * kCifarImageSize;

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte then
/// the R, G and B planes of a 32x32 image. Pixels are scaled by 1/255.
/// Throws FormatError for truncated files or labels above 9, IoError if a
/// file cannot be opened.
Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths);

/// Parses CIFAR-style records from memory. `image_size` generalizes the
/// record to 1 + 3*image_size^2 bytes for cached synthetic data.
Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, std::size_t image_size = 32,
                              const std::string& source = "<memory>");

/// Encodes a dataset in the same record layout (pixel = round(v * 255)).
std::vector<std::uint8_t> encode_cifar10_records(const Dataset& dataset);
void write_cifar10_bin(const Dataset& dataset, const std::filesystem::path& path);

struct SynthOptions {
  int num_classes = 10;
  int per_class = 100;
  int image_size = 32;
  /// Standard deviation of the additive Gaussian pixel noise.
  float noise = 0.35f;
  std::uint64_t seed = 0;
};

/// Class-conditional oriented gratings (one orientation, spatial frequency
/// and color mix per class) plus seeded Gaussian noise, clamped to [0, 1]
/// and quantized to multiples of 1/255 so the result survives a round trip
/// through the binary record format. Examples are ordered by class.
Dataset synth_dataset(const SynthOptions& options);

struct PersonalizationSpec {
  std::vector<int> kept_classes;
  std::optional<int> per_class_cap;
  std::uint64_t seed = 0;
};

/// D_user: keeps only `kept_classes`, relabels them densely in ascending
/// order of original id and optionally subsamples each class to
/// `per_class_cap` examples (seeded; surviving examples keep their relative
/// order). Throws InputError if a kept class is absent, ConfigError for an
/// invalid spec.
Dataset personalize(const Dataset& dataset, const PersonalizationSpec& spec);

/// Seeded shuffle then split: the first round(fraction * N) shuffled
/// examples go to the first part. Each part keeps the original relative order.
/// Throws ConfigError unless 0 < fraction < 1 and InputError if a part would be
/// empty.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Undoes the dense relabelling of personalize(): labels become
/// source_classes[label] and num_classes becomes `num_classes`, so a subset
/// can be scored by a model trained on the full label space. Throws
/// InputError if a source id does not fit.
Dataset restore_source_labels(const Dataset& dataset, int num_classes);

/// Examples at `indices`, in that order.
Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace tierprune
