#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tierprune/checkpoint.hpp"
#include "tierprune/harness.hpp"
#include "tierprune/pruner.hpp"
#include "tierprune/report.hpp"

namespace fs = std::filesystem;
using namespace tierprune;

namespace {

ExperimentConfig small_config(const std::string& name) {
  ExperimentConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.depth = 2;
  c.num_classes = 4;
  c.kept_classes = {0, 1};
  c.synth_per_class = 8;
  c.synth_eval_per_class = 4;
  c.pretrain_epochs = 3;
  c.batch_size = 4;
  c.random_number = 2;
  c.num_trials = 12;
  c.prob = 0.1;
  c.rounds = 2;
  c.finetune_epochs = 1;
  c.seed = 11;
  c.output_dir = (fs::temp_directory_path() / ("tierprune_harness_" + name)).string();
  fs::remove_all(c.output_dir);
  return c;
}

// trials.csv minus the wall-clock column, which is the only non-deterministic field.
std::string strip_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config(R"({"depht": 4})"), ConfigError);
}

TEST(Config, NestedObjectRejected) {
  EXPECT_THROW(parse_config(R"({"depth": {"value": 4}})"), ConfigError);
}

TEST(Config, TypeMismatchRejected) {
  EXPECT_THROW(parse_config(R"({"depth": "four"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sampling": "sometimes"})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(Config, NullCapAndRoundTrip) {
  auto c = parse_config(R"({"per_class_cap": null, "prob": 0.05, "criterion": "gradient"})");
  EXPECT_FALSE(c.per_class_cap.has_value());
  c.per_class_cap = 7;
  const auto back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.per_class_cap, 7);
  EXPECT_EQ(back.criterion, Criterion::kGradient);
}

TEST(Config, ValidateCatchesBadValues) {
  auto c = small_config("validate");
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.random_number = 4 * bad.depth + 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.prob = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.kept_classes = {0, 9};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Report, FormatsPercentWithOneDecimal) {
  EXPECT_EQ(format_percent(0.448), "44.8");
  EXPECT_EQ(format_percent(0.0), "0.0");
  EXPECT_EQ(parse_report_format("json"), ReportFormat::kJson);
  EXPECT_THROW(parse_report_format("xml"), ConfigError);
}

TEST(Report, UnwritableDirectoryIsIoError) {
  const fs::path file = fs::temp_directory_path() / "tierprune_not_a_dir";
  std::ofstream(file) << "x";
  ExperimentReport r;
  EXPECT_THROW(emit_report(r, file / "sub", ReportFormat::kCsv), IoError);
  fs::remove(file);
}

TEST(Report, MalformedJsonIsFormatError) {
  EXPECT_THROW(report_from_json("{}"), FormatError);
  EXPECT_THROW(report_from_json(R"({"schema": "other/9"})"), FormatError);
  EXPECT_THROW(parse_report_csv("a,b\n1"), FormatError);
}

TEST(Harness, ZeroRateLeavesModelUntouched) {
  auto c = small_config("zero");
  c.prob = 0.0;
  const auto r = run_experiment(c);
  EXPECT_DOUBLE_EQ(r.final_compression, 0.0);
  EXPECT_DOUBLE_EQ(r.final_accuracy, r.baseline_accuracy);
  EXPECT_EQ(r.personalized + r.generic + r.buffer, static_cast<std::size_t>(4 * c.depth));
  fs::remove_all(c.output_dir);
}

TEST(Harness, RunWritesConsistentOutputs) {
  auto c = small_config("outputs");
  const auto r = run_experiment(c);
  const fs::path out = c.output_dir;
  for (const char* f : {"config.json", "trials.csv", "history.csv", "model.tprn", "report.json",
                        "report.csv", "pretrained.tprn"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(r.tiers.size(), static_cast<std::size_t>(4 * c.depth));
  EXPECT_EQ(r.personalized + r.generic + r.buffer, r.tiers.size());
  EXPECT_GT(r.final_compression, 0.0);
  EXPECT_DOUBLE_EQ(compression(load_checkpoint(out / "model.tprn")), r.final_compression);

  // JSON round trip is lossless; both formats agree on the table row.
  const auto back = report_from_json(slurp(out / "report.json"));
  EXPECT_EQ(back, r);
  EXPECT_EQ(parse_report_csv(slurp(out / "report.csv")), make_report_row(back));
  EXPECT_EQ(report_to_csv(back), slurp(out / "report.csv"));

  // The saved config reproduces the run.
  EXPECT_EQ(config_to_json(load_config(out / "config.json")), config_to_json(c));
  fs::remove_all(out);
}

TEST(Harness, DeterministicInSeed) {
  auto a = small_config("det_a");
  auto b = small_config("det_b");
  run_experiment(a);
  run_experiment(b);
  EXPECT_EQ(slurp(fs::path(a.output_dir) / "report.csv"), slurp(fs::path(b.output_dir) / "report.csv"));
  EXPECT_EQ(slurp(fs::path(a.output_dir) / "history.csv"), slurp(fs::path(b.output_dir) / "history.csv"));
  EXPECT_EQ(strip_timing(slurp(fs::path(a.output_dir) / "trials.csv")),
            strip_timing(slurp(fs::path(b.output_dir) / "trials.csv")));
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
}

TEST(Harness, BadCheckpointFailsPretrainStage) {
  auto c = small_config("badckpt");
  const fs::path bogus = fs::temp_directory_path() / "tierprune_bogus.tprn";
  std::ofstream(bogus) << "garbage";
  c.pretrained_checkpoint = bogus.string();
  try {
    run_experiment(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::kPretrain);
    EXPECT_EQ(e.exit_code(), 4);
  }
  fs::remove(bogus);
  fs::remove_all(c.output_dir);
}

TEST(Harness, MissingDataFailsDataStage) {
  auto c = small_config("nodata");
  c.dataset = DataSource::kCifar10;
  c.image_size = 32;
  c.num_classes = 10;
  c.cifar10_train = {"/nonexistent/data_batch_1.bin"};
  try {
    run_experiment(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::kData);
    EXPECT_EQ(e.exit_code(), 3);
  }
  fs::remove_all(c.output_dir);
}

TEST(Harness, InvalidConfigFailsConfigStage) {
  auto c = small_config("badcfg");
  c.random_number = 0;
  try {
    run_experiment(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.exit_code(), 2);
  }
  fs::remove_all(c.output_dir);
}

TEST(Sweep, AxisParsing) {
  EXPECT_EQ(parse_axis("prune_rate"), SweepAxis::kPruneRate);
  EXPECT_EQ(axis_name(SweepAxis::kPrunePersonalized), "prune_personalized");
  EXPECT_THROW(parse_axis("depth"), ConfigError);
  const auto base = small_config("axis");
  EXPECT_DOUBLE_EQ(apply_axis(base, SweepAxis::kPruneRate, "0.05").prob, 0.05);
  EXPECT_EQ(apply_axis(base, SweepAxis::kRandomNumber, "3").random_number, 3);
  EXPECT_FALSE(apply_axis(base, SweepAxis::kPrunePersonalized, "false").prune_personalized);
  EXPECT_THROW(apply_axis(base, SweepAxis::kPruneRate, "lots"), ConfigError);
  EXPECT_THROW(apply_axis(base, SweepAxis::kPrunePersonalized, "maybe"), ConfigError);
  EXPECT_THROW(apply_axis(base, SweepAxis::kCriterion, "magic"), ConfigError);
}

TEST(Sweep, SingleCellMatchesRun) {
  auto c = small_config("sweep_one");
  const auto single = run_experiment(c, {.write_outputs = false});
  const auto res = sweep(c, SweepAxis::kPruneRate, {"0.1"}, {.threads = 1});
  ASSERT_EQ(res.cells.size(), 1u);
  ASSERT_TRUE(res.cells[0].ok) << res.cells[0].error;
  EXPECT_EQ(make_report_row(*res.cells[0].report), make_report_row(single));
  EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "sweep.csv"));
  EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "prune_rate_0.1" / "report.csv"));
  fs::remove_all(c.output_dir);
}

TEST(Sweep, FailingCellIsRecordedAndSweepContinues) {
  auto c = small_config("sweep_fail");
  const auto res = sweep(c, SweepAxis::kRandomNumber, {"1", "99", "2"}, {.threads = 2});
  ASSERT_EQ(res.cells.size(), 3u);
  EXPECT_TRUE(res.cells[0].ok);
  EXPECT_FALSE(res.cells[1].ok);
  EXPECT_FALSE(res.cells[1].error.empty());
  EXPECT_TRUE(res.cells[2].ok);

  const auto csv = sweep_to_csv(res);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "axis,value,status," + std::string(kReportCsvHeader) + ",error");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 19) << line;
  }
  EXPECT_EQ(rows, 3);
  fs::remove_all(c.output_dir);
}
