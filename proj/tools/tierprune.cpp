// tierprune: run, sweep and re-emit personalized pruning experiments.

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "tierprune/harness.hpp"
#include "tierprune/version.hpp"

namespace tp = tierprune;

namespace {

tp::ExperimentConfig read_config(const std::string& path) {
  try {
    return tp::load_config(path);
  } catch (const std::exception& e) {
    throw tp::StageError(tp::Stage::kConfig, e.what());
  }
}

int cmd_report(const std::string& dir, const std::string& format_name) {
  try {
    const auto format = tp::parse_report_format(format_name);
    const std::filesystem::path in = std::filesystem::path(dir) / "report.json";
    std::ifstream file(in);
    if (!file) throw tp::IoError("cannot open " + in.string());
    std::ostringstream text;
    text << file.rdbuf();
    const auto report = tp::report_from_json(text.str());
    std::cout << (format == tp::ReportFormat::kCsv ? tp::report_to_csv(report)
                                                    : tp::report_to_json(report));
    tp::emit_report(report, dir, format);
    return 0;
  } catch (const std::exception& e) {
    throw tp::StageError(tp::Stage::kReport, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized tiered pruning for a mini vision transformer"};
  app.set_version_flag("--version", std::string(tp::kVersion) + " (" + tp::kGitRevision + ")");
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Override the output directory");

  std::string axis;
  std::vector<std::string> values;
  auto* sw = app.add_subcommand("sweep", "Run one experiment per value of an axis");
  sw->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  sw->add_option("--axis", axis, "prune_rate|random_number|criterion|prune_personalized")
      ->required();
  sw->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sw->add_option("--seed", seed, "Override the config seed");
  sw->add_option("--out", out_dir, "Override the output directory");

  std::string in_dir, format = "csv";
  auto* rep = app.add_subcommand("report", "Re-emit a finished run's report");
  rep->add_option("--in", in_dir, "Run output directory")->required();
  rep->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*rep) return cmd_report(in_dir, format);

    auto config = read_config(config_path);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.output_dir = out_dir;

    if (*run) {
      const auto report = tp::run_experiment(config);
      std::cout << tp::report_to_csv(report);
      return 0;
    }
    tp::SweepAxis sweep_axis;
    try {
      sweep_axis = tp::parse_axis(axis);
    } catch (const std::exception& e) {
      throw tp::StageError(tp::Stage::kConfig, e.what());
    }
    const auto result = tp::sweep(config, sweep_axis, values);
    std::cout << tp::sweep_to_csv(result);
    const bool all_ok = std::all_of(result.cells.begin(), result.cells.end(),
                                     [](const tp::SweepCell& c) { return c.ok; });
    return all_ok ? 0 : 1;
  } catch (const tp::StageError& e) {
    std::cerr << "tierprune: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "tierprune: " << e.what() << '\n';
    return 1;
  }
}
