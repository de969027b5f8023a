#include "tierprune/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tierprune/error.hpp"

namespace tierprune {

using ordered_json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  try {
    model_config().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (dataset == DataSource::kCifar10) {
    if (cifar10_train.empty()) fail("cifar10_train must list at least one batch file");
    if (num_classes != 10) fail("num_classes must be 10 for cifar10");
    if (image_size != 32) fail("image_size must be 32 for cifar10");
    if (cifar10_test.empty() && !(eval_fraction > 0.0 && eval_fraction < 1.0)) {
      fail("eval_fraction must be in (0, 1)");
    }
  } else {
    if (synth_per_class < 1) fail("synth_per_class must be positive");
    if (synth_eval_per_class < 1) fail("synth_eval_per_class must be positive");
    if (!(synth_noise >= 0.0)) fail("synth_noise must be nonnegative");
  }
  if (kept_classes.empty()) fail("kept_classes must not be empty");
  for (int c : kept_classes) {
    if (c < 0 || c >= num_classes) fail("kept_classes entry " + std::to_string(c) + " out of range");
  }
  if (per_class_cap && *per_class_cap < 1) fail("per_class_cap must be positive");
  if (pretrain_epochs < 0) fail("pretrain_epochs must be nonnegative");
  if (pretrain_epochs > 0 && !(pretrain_lr > 0.0)) fail("pretrain_lr must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (random_number < 1 || random_number > 4 * depth) {
    fail("random_number must be in [1, " + std::to_string(4 * depth) + "]");
  }
  if (num_trials < 0) fail("num_trials must be nonnegative");
  if (!(margin >= 0.0)) fail("margin must be nonnegative");
  if (refine_budget < 0) fail("refine_budget must be nonnegative");
  try {
    schedule().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (output_dir.empty()) fail("output_dir must not be empty");
}

ViTConfig ExperimentConfig::model_config() const {
  ViTConfig c;
  c.image_size = image_size;
  c.patch_size = patch_size;
  c.embed_dim = embed_dim;
  c.num_heads = num_heads;
  c.depth = depth;
  c.mlp_ratio = mlp_ratio;
  c.num_classes = num_classes;
  c.seed = derive_seed(seed, 1);
  return c;
}

PersonalizationSpec ExperimentConfig::personalization() const {
  return PersonalizationSpec{kept_classes, per_class_cap, derive_seed(seed, 4)};
}

PruneSchedule ExperimentConfig::schedule() const {
  PruneSchedule s;
  s.prob = prob;
  s.criterion = criterion;
  s.rounds = rounds;
  s.finetune_epochs = finetune_epochs;
  s.lr = static_cast<float>(finetune_lr);
  s.batch_size = static_cast<std::size_t>(batch_size);
  s.prune_personalized = prune_personalized;
  s.seed = derive_seed(seed, 7);
  return s;
}

std::size_t ExperimentConfig::trials_for(std::size_t num_layers) const {
  return num_trials > 0 ? static_cast<std::size_t>(num_trials)
                        : default_num_trials(num_layers, static_cast<std::size_t>(random_number));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
  // splitmix64 finalizer over (seed, stage).
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stage + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

std::string source_name(DataSource s) { return s == DataSource::kSynthetic ? "synthetic" : "cifar10"; }
std::string sampling_name(SamplingMode m) {
  return m == SamplingMode::kIndependent ? "independent" : "covering";
}

// One entry per key: how to read it into the config and how to write it out.
struct Field {
  std::function<void(const ordered_json&, ExperimentConfig&)> read;
  std::function<ordered_json(const ExperimentConfig&)> write;
};

template <class T>
Field plain(T ExperimentConfig::*member) {
  return {[member](const ordered_json& j, ExperimentConfig& c) { c.*member = j.get<T>(); },
          [member](const ExperimentConfig& c) { return ordered_json(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"image_size", plain(&ExperimentConfig::image_size)},
      {"patch_size", plain(&ExperimentConfig::patch_size)},
      {"embed_dim", plain(&ExperimentConfig::embed_dim)},
      {"num_heads", plain(&ExperimentConfig::num_heads)},
      {"depth", plain(&ExperimentConfig::depth)},
      {"mlp_ratio", plain(&ExperimentConfig::mlp_ratio)},
      {"num_classes", plain(&ExperimentConfig::num_classes)},
      {"dataset",
       {[](const ordered_json& j, ExperimentConfig& c) {
          const auto s = j.get<std::string>();
          if (s == "synthetic") {
            c.dataset = DataSource::kSynthetic;
          } else if (s == "cifar10") {
            c.dataset = DataSource::kCifar10;
          } else {
            throw ConfigError("config: dataset must be \"synthetic\" or \"cifar10\"");
          }
        },
        [](const ExperimentConfig& c) { return ordered_json(source_name(c.dataset)); }}},
      {"cifar10_train", plain(&ExperimentConfig::cifar10_train)},
      {"cifar10_test", plain(&ExperimentConfig::cifar10_test)},
      {"eval_fraction", plain(&ExperimentConfig::eval_fraction)},
      {"synth_per_class", plain(&ExperimentConfig::synth_per_class)},
      {"synth_eval_per_class", plain(&ExperimentConfig::synth_eval_per_class)},
      {"synth_noise", plain(&ExperimentConfig::synth_noise)},
      {"kept_classes", plain(&ExperimentConfig::kept_classes)},
      {"per_class_cap",
       {[](const ordered_json& j, ExperimentConfig& c) {
          if (j.is_null()) {
            c.per_class_cap.reset();
          } else {
            c.per_class_cap = j.get<int>();
          }
        },
        [](const ExperimentConfig& c) {
          return c.per_class_cap ? ordered_json(*c.per_class_cap) : ordered_json(nullptr);
        }}},
      {"pretrain_epochs", plain(&ExperimentConfig::pretrain_epochs)},
      {"pretrain_lr", plain(&ExperimentConfig::pretrain_lr)},
      {"batch_size", plain(&ExperimentConfig::batch_size)},
      {"pretrained_checkpoint", plain(&ExperimentConfig::pretrained_checkpoint)},
      {"random_number", plain(&ExperimentConfig::random_number)},
      {"num_trials", plain(&ExperimentConfig::num_trials)},
      {"margin", plain(&ExperimentConfig::margin)},
      {"refine_budget", plain(&ExperimentConfig::refine_budget)},
      {"sampling",
       {[](const ordered_json& j, ExperimentConfig& c) {
          const auto s = j.get<std::string>();
          if (s == "independent") {
            c.sampling = SamplingMode::kIndependent;
          } else if (s == "covering") {
            c.sampling = SamplingMode::kCovering;
          } else {
            throw ConfigError("config: sampling must be \"independent\" or \"covering\"");
          }
        },
        [](const ExperimentConfig& c) { return ordered_json(sampling_name(c.sampling)); }}},
      {"prob", plain(&ExperimentConfig::prob)},
      {"criterion",
       {[](const ordered_json& j, ExperimentConfig& c) {
          c.criterion = parse_criterion(j.get<std::string>());
        },
        [](const ExperimentConfig& c) {
          return ordered_json(std::string(criterion_name(c.criterion)));
        }}},
      {"rounds", plain(&ExperimentConfig::rounds)},
      {"finetune_epochs", plain(&ExperimentConfig::finetune_epochs)},
      {"finetune_lr", plain(&ExperimentConfig::finetune_lr)},
      {"prune_personalized", plain(&ExperimentConfig::prune_personalized)},
      {"compensate_prob", plain(&ExperimentConfig::compensate_prob)},
      {"seed", plain(&ExperimentConfig::seed)},
      {"output_dir", plain(&ExperimentConfig::output_dir)},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");

  ExperimentConfig config;
  for (const auto& [key, value] : doc.items()) {
    const Field* field = nullptr;
    for (const auto& [name, f] : fields()) {
      if (name == key) field = &f;
    }
    if (!field) throw ConfigError("config: unknown key '" + key + "'");
    if (value.is_object()) throw ConfigError("config: '" + key + "' must not be nested");
    try {
      field->read(value, config);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& config) {
  ordered_json doc = ordered_json::object();
  for (const auto& [name, f] : fields()) doc[name] = f.write(config);
  return doc.dump(2);
}

}  // namespace tierprune
