#include "tierprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

#include "tierprune/error.hpp"

namespace tierprune {

namespace {

const std::vector<std::string>& cifar10_names() {
  static const std::vector<std::string> names = {"airplane", "automobile", "bird",  "cat",
                                                 "deer",     "dog",        "frog",  "horse",
                                                 "ship",     "truck"};
  return names;
}

std::vector<int> identity_classes(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

std::size_t image_numel(const Dataset& d) { return d.images.numel() / d.size(); }

}  // namespace

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("gather_images: no indices");
  const std::size_t per = image_numel(*this);
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("gather_images: index out of range");
    std::copy_n(images.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (empty()) return;
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(1) != 3) {
    throw InputError("dataset images must be [N x 3 x H x W] with one label per image");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InputError("dataset label out of range");
  }
}

// ---------------------------------------------------------------------------
// Binary records

Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, std::size_t image_size,
                              const std::string& source) {
  const std::size_t pixels = 3 * image_size * image_size;
  const std::size_t record = 1 + pixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw FormatError(source + ": length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of the " + std::to_string(record) +
                      "-byte record size");
  }
  const std::size_t n = bytes.size() / record;
  Dataset out;
  out.images = Tensor({n, 3, image_size, image_size});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    if (rec[0] > 9) {
      throw FormatError(source + ": record " + std::to_string(i) + " has label " +
                        std::to_string(rec[0]) + " (expected 0-9)");
    }
    out.labels[i] = rec[0];
    float* dst = out.images.data() + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  out.num_classes = 10;
  out.class_names = cifar10_names();
  out.source_classes = identity_classes(10);
  return out;
}

Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw InputError("load_cifar10_bin: no input files");
  std::vector<Dataset> parts;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    parts.push_back(parse_cifar10_records(bytes, kCifarImageSize, path.string()));
  }
  if (parts.size() == 1) return std::move(parts.front());

  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset out = parts.front();
  out.images = Tensor({total, 3, kCifarImageSize, kCifarImageSize});
  out.labels.clear();
  float* dst = out.images.data();
  for (const auto& p : parts) {
    dst = std::copy(p.images.data(), p.images.data() + p.images.numel(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar10_records(const Dataset& dataset) {
  dataset.validate();
  if (dataset.empty()) throw InputError("cannot encode an empty dataset");
  const std::size_t pixels = image_numel(dataset);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(dataset.size() * (pixels + 1));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int label = dataset.labels[i];
    if (label > 9) throw FormatError("label " + std::to_string(label) + " does not fit the record format");
    bytes.push_back(static_cast<std::uint8_t>(label));
    const float* src = dataset.images.data() + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      const float v = std::clamp(src[p], 0.0f, 1.0f);
      bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return bytes;
}

void write_cifar10_bin(const Dataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_cifar10_records(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset synth_dataset(const SynthOptions& o) {
  if (o.num_classes < 1 || o.per_class < 1 || o.image_size < 1) {
    throw ConfigError("synth_dataset: num_classes, per_class and image_size must be positive");
  }
  if (!(o.noise >= 0.0f)) throw ConfigError("synth_dataset: noise must be nonnegative");

  const auto classes = static_cast<std::size_t>(o.num_classes);
  const auto per = static_cast<std::size_t>(o.per_class);
  const auto s = static_cast<std::size_t>(o.image_size);
  const std::size_t n = classes * per;
  const double two_pi = 2.0 * std::numbers::pi;

  // Noise-free template per class.
  std::vector<std::vector<double>> templates(classes, std::vector<double>(3 * s * s));
  for (std::size_t c = 0; c < classes; ++c) {
    const double frac = static_cast<double>(c) / static_cast<double>(classes);
    const double theta = std::numbers::pi * frac;
    const double freq = 1.5 + static_cast<double>(c % 3);
    const double phase = 0.37 * static_cast<double>(c);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double weight = 0.5 + 0.5 * std::cos(two_pi * (frac + static_cast<double>(ch) / 3.0));
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double u = (static_cast<double>(x) * std::cos(theta) +
                            static_cast<double>(y) * std::sin(theta)) /
                           static_cast<double>(s);
          templates[c][(ch * s + y) * s + x] =
              0.5 + 0.35 * weight * std::sin(two_pi * freq * u + phase);
        }
    }
  }

  Dataset out;
  out.images = Tensor({n, 3, s, s});
  out.labels.resize(n);
  out.num_classes = o.num_classes;
  out.source_classes = identity_classes(o.num_classes);
  for (std::size_t c = 0; c < classes; ++c) out.class_names.push_back("class" + std::to_string(c));

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, o.noise);
  const std::size_t pixels = 3 * s * s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i / per;
    out.labels[i] = static_cast<int>(c);
    float* dst = out.images.data() + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      double v = templates[c][p];
      if (o.noise > 0.0f) v += gauss(rng);
      v = std::clamp(v, 0.0, 1.0);
      dst[p] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsets

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.class_names = dataset.class_names;
  out.source_classes = dataset.source_classes;
  if (indices.empty()) return out;
  out.images = dataset.gather_images(indices);
  out.labels = dataset.gather_labels(indices);
  return out;
}

Dataset personalize(const Dataset& dataset, const PersonalizationSpec& spec) {
  if (spec.kept_classes.empty()) throw ConfigError("personalize: kept_classes is empty");
  const std::set<int> kept(spec.kept_classes.begin(), spec.kept_classes.end());
  if (kept.size() != spec.kept_classes.size()) {
    throw ConfigError("personalize: kept_classes contains duplicates");
  }
  for (int c : kept) {
    if (c < 0 || c >= dataset.num_classes) {
      throw ConfigError("personalize: class " + std::to_string(c) + " outside [0, " +
                        std::to_string(dataset.num_classes) + ")");
    }
  }
  if (spec.per_class_cap && *spec.per_class_cap < 1) {
    throw ConfigError("personalize: per_class_cap must be positive");
  }

  // Dense label = rank of the original id among the kept classes.
  std::vector<int> dense(static_cast<std::size_t>(dataset.num_classes), -1);
  std::vector<int> ordered(kept.begin(), kept.end());
  for (std::size_t i = 0; i < ordered.size(); ++i) dense[static_cast<std::size_t>(ordered[i])] = static_cast<int>(i);

  std::vector<std::vector<std::size_t>> by_class(ordered.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int d = dense[static_cast<std::size_t>(dataset.labels[i])];
    if (d >= 0) by_class[static_cast<std::size_t>(d)].push_back(i);
  }
  for (std::size_t d = 0; d < ordered.size(); ++d) {
    if (by_class[d].empty()) {
      throw InputError("personalize: class " + std::to_string(ordered[d]) + " has no examples");
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> chosen;
  for (auto& members : by_class) {
    if (spec.per_class_cap && members.size() > static_cast<std::size_t>(*spec.per_class_cap)) {
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(static_cast<std::size_t>(*spec.per_class_cap));
    }
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  std::sort(chosen.begin(), chosen.end());

  Dataset out = subset(dataset, chosen);
  for (int& y : out.labels) y = dense[static_cast<std::size_t>(y)];
  out.num_classes = static_cast<int>(ordered.size());
  out.source_classes.clear();
  out.class_names.clear();
  for (int c : ordered) {
    const int source = dataset.source_classes.empty()
                           ? c
                           : dataset.source_classes[static_cast<std::size_t>(c)];
    out.source_classes.push_back(source);
    if (!dataset.class_names.empty()) out.class_names.push_back(dataset.class_names[static_cast<std::size_t>(c)]);
  }
  return out;
}

Dataset restore_source_labels(const Dataset& dataset, int num_classes) {
  Dataset out = dataset;
  if (dataset.source_classes.empty()) {
    if (dataset.num_classes > num_classes) throw InputError("restore_source_labels: too few classes");
    out.num_classes = num_classes;
    return out;
  }
  for (int& y : out.labels) {
    const int source = dataset.source_classes.at(static_cast<std::size_t>(y));
    if (source < 0 || source >= num_classes) {
      throw InputError("restore_source_labels: source class " + std::to_string(source) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    y = source;
  }
  out.num_classes = num_classes;
  out.source_classes.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) out.source_classes[static_cast<std::size_t>(c)] = c;
  out.class_names.clear();
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split: fraction must be in (0, 1)");
  const std::size_t n = dataset.size();
  const auto first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (first == 0 || first >= n) {
    throw InputError("split: fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                     " examples leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {subset(dataset, a), subset(dataset, b)};
}

}  // namespace tierprune
