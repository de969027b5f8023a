#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tierprune/config.hpp"
#include "tierprune/pruner.hpp"

namespace tierprune {

inline constexpr std::string_view kReportSchema = "tierprune.report/1";

struct ExperimentReport {
  ExperimentConfig config;
  std::string version;
  std::string git_revision;

  double baseline_loss = 0.0;
  double margin = 0.0;
  double baseline_accuracy = 0.0;

  std::size_t num_trials = 0;
  std::size_t failed_trials = 0;
  std::vector<Tier> tiers;
  std::size_t personalized = 0;
  std::size_t generic = 0;
  std::size_t buffer = 0;

  /// prob actually used (differs from config.prob only when compensated).
  double effective_prob = 0.0;
  PruneHistory history;
  double final_compression = 0.0;
  double final_accuracy = 0.0;
  double final_loss = 0.0;

  /// Stage name -> seconds. Excluded from every CSV.
  std::map<std::string, double> timings;

  bool operator==(const ExperimentReport&) const = default;
};

enum class ReportFormat { kCsv, kJson };
ReportFormat parse_report_format(std::string_view name);

/// One row of report.csv / sweep.csv. Percentages carry one decimal, as in
/// the usual compression/accuracy tables ("44.8").
struct ReportRow {
  double prune_rate = 0.0;
  double effective_prune_rate = 0.0;
  std::string prune_object;
  int random_number = 0;
  bool prune_personalized = true;
  std::uint64_t seed = 0;
  double baseline_loss = 0.0;
  double margin = 0.0;
  double baseline_accuracy_pct = 0.0;
  std::size_t personalized = 0;
  std::size_t generic = 0;
  std::size_t buffer = 0;
  std::size_t failed_trials = 0;
  double compression_pct = 0.0;
  double accuracy_pct = 0.0;
  double final_loss = 0.0;

  bool operator==(const ReportRow&) const = default;
};

inline constexpr std::string_view kReportCsvHeader =
    "prune_rate,effective_prune_rate,prune_object,random_number,prune_personalized,seed,"
    "baseline_loss,margin,baseline_accuracy_pct,personalized,generic,buffer,failed_trials,"
    "compression_pct,accuracy_pct,final_loss";

/// Formats one row (no trailing newline).
std::string format_report_row(const ReportRow& row);
/// Builds the row exactly as it reads back from CSV (values rounded to the
/// printed precision).
ReportRow make_report_row(const ExperimentReport& report);
/// Parses a header line plus one data row.
ReportRow parse_report_csv(std::string_view text);

std::string report_to_csv(const ExperimentReport& report);
std::string report_to_json(const ExperimentReport& report);
/// Throws FormatError for a missing field or a schema mismatch.
ExperimentReport report_from_json(const std::string& text);

/// Writes report.csv or report.json into `dir` (created if missing).
/// Throws IoError when the directory cannot be written. Returns the path.
std::filesystem::path emit_report(const ExperimentReport& report, const std::filesystem::path& dir,
                                  ReportFormat format);

/// Compression as a percentage with one decimal.
std::string format_percent(double fraction);

}  // namespace tierprune
