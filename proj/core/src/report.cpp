#include "tierprune/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tierprune/error.hpp"

namespace tierprune {

using ordered_json = nlohmann::ordered_json;

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + std::string(name) + "' (csv|json)");
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError("report csv: bad number '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw FormatError("report csv: bad integer '" + s + "'");
  return v;
}

}  // namespace

std::string format_report_row(const ReportRow& r) {
  std::ostringstream out;
  out << fmt("%.6g", r.prune_rate) << ',' << fmt("%.6g", r.effective_prune_rate) << ','
      << r.prune_object << ',' << r.random_number << ','
      << (r.prune_personalized ? "true" : "false") << ',' << r.seed << ','
      << fmt("%.6f", r.baseline_loss) << ',' << fmt("%.6f", r.margin) << ','
      << fmt("%.1f", r.baseline_accuracy_pct) << ',' << r.personalized << ',' << r.generic << ','
      << r.buffer << ',' << r.failed_trials << ',' << fmt("%.1f", r.compression_pct) << ','
      << fmt("%.1f", r.accuracy_pct) << ',' << fmt("%.6f", r.final_loss);
  return out.str();
}

ReportRow parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header, line;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != kReportCsvHeader) throw FormatError("report csv: unexpected header");
  if (!std::getline(in, line)) throw FormatError("report csv: missing data row");
  const auto f = split_csv_line(line);
  if (f.size() != 16) throw FormatError("report csv: expected 16 fields");
  ReportRow r;
  r.prune_rate = to_double(f[0]);
  r.effective_prune_rate = to_double(f[1]);
  r.prune_object = f[2];
  r.random_number = static_cast<int>(to_u64(f[3]));
  if (f[4] != "true" && f[4] != "false") throw FormatError("report csv: bad boolean");
  r.prune_personalized = f[4] == "true";
  r.seed = to_u64(f[5]);
  r.baseline_loss = to_double(f[6]);
  r.margin = to_double(f[7]);
  r.baseline_accuracy_pct = to_double(f[8]);
  r.personalized = to_u64(f[9]);
  r.generic = to_u64(f[10]);
  r.buffer = to_u64(f[11]);
  r.failed_trials = to_u64(f[12]);
  r.compression_pct = to_double(f[13]);
  r.accuracy_pct = to_double(f[14]);
  r.final_loss = to_double(f[15]);
  return r;
}

ReportRow make_report_row(const ExperimentReport& report) {
  ReportRow r;
  r.prune_rate = report.config.prob;
  r.effective_prune_rate = report.effective_prob;
  r.prune_object = std::string(criterion_name(report.config.criterion));
  r.random_number = report.config.random_number;
  r.prune_personalized = report.config.prune_personalized;
  r.seed = report.config.seed;
  r.baseline_loss = report.baseline_loss;
  r.margin = report.margin;
  r.baseline_accuracy_pct = report.baseline_accuracy * 100.0;
  r.personalized = report.personalized;
  r.generic = report.generic;
  r.buffer = report.buffer;
  r.failed_trials = report.failed_trials;
  r.compression_pct = report.final_compression * 100.0;
  r.accuracy_pct = report.final_accuracy * 100.0;
  r.final_loss = report.final_loss;
  const std::string text =
      std::string(kReportCsvHeader) + "\n" + format_report_row(r) + "\n";
  return parse_report_csv(text);
}

std::string report_to_csv(const ExperimentReport& report) {
  ReportRow r = make_report_row(report);
  return std::string(kReportCsvHeader) + "\n" + format_report_row(r) + "\n";
}

std::string report_to_json(const ExperimentReport& report) {
  ordered_json doc;
  doc["schema"] = kReportSchema;
  doc["version"] = report.version;
  doc["git_revision"] = report.git_revision;
  doc["config"] = ordered_json::parse(config_to_json(report.config));
  doc["baseline_loss"] = report.baseline_loss;
  doc["margin"] = report.margin;
  doc["baseline_accuracy"] = report.baseline_accuracy;
  doc["num_trials"] = report.num_trials;
  doc["failed_trials"] = report.failed_trials;
  ordered_json tiers = ordered_json::array();
  for (Tier t : report.tiers) tiers.push_back(std::string(tier_name(t)));
  doc["tiers"] = tiers;
  doc["tier_counts"] = {{"personalized", report.personalized},
                        {"generic", report.generic},
                        {"buffer", report.buffer}};
  doc["effective_prob"] = report.effective_prob;
  ordered_json rounds = ordered_json::array();
  for (const auto& round : report.history.rounds) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : round.layers) {
      layers.push_back({{"layer_number", l.layer_number},
                        {"tier", std::string(tier_name(l.tier))},
                        {"step_prob", l.step_prob},
                        {"pruned", l.pruned},
                        {"kept", l.kept}});
    }
    rounds.push_back({{"round", round.round},
                      {"compression", round.compression},
                      {"loss", round.loss},
                      {"accuracy", round.accuracy},
                      {"layers", layers}});
  }
  doc["history"] = rounds;
  doc["final_compression"] = report.final_compression;
  doc["final_compression_pct"] = format_percent(report.final_compression);
  doc["final_accuracy"] = report.final_accuracy;
  doc["final_loss"] = report.final_loss;
  ordered_json timings = ordered_json::object();
  for (const auto& [stage, secs] : report.timings) timings[stage] = secs;
  doc["timings_seconds"] = timings;
  return doc.dump(2) + "\n";
}

ExperimentReport report_from_json(const std::string& text) {
  try {
    const auto doc = ordered_json::parse(text);
    if (doc.at("schema").get<std::string>() != kReportSchema) {
      throw FormatError("report json: unsupported schema");
    }
    ExperimentReport r;
    r.version = doc.at("version").get<std::string>();
    r.git_revision = doc.at("git_revision").get<std::string>();
    r.config = parse_config(doc.at("config").dump());
    r.baseline_loss = doc.at("baseline_loss").get<double>();
    r.margin = doc.at("margin").get<double>();
    r.baseline_accuracy = doc.at("baseline_accuracy").get<double>();
    r.num_trials = doc.at("num_trials").get<std::size_t>();
    r.failed_trials = doc.at("failed_trials").get<std::size_t>();
    for (const auto& t : doc.at("tiers")) r.tiers.push_back(parse_tier(t.get<std::string>()));
    const auto& counts = doc.at("tier_counts");
    r.personalized = counts.at("personalized").get<std::size_t>();
    r.generic = counts.at("generic").get<std::size_t>();
    r.buffer = counts.at("buffer").get<std::size_t>();
    r.effective_prob = doc.at("effective_prob").get<double>();
    for (const auto& jr : doc.at("history")) {
      RoundRecord round;
      round.round = jr.at("round").get<int>();
      round.compression = jr.at("compression").get<double>();
      round.loss = jr.at("loss").get<double>();
      round.accuracy = jr.at("accuracy").get<double>();
      for (const auto& jl : jr.at("layers")) {
        round.layers.push_back({jl.at("layer_number").get<int>(),
                                parse_tier(jl.at("tier").get<std::string>()),
                                jl.at("step_prob").get<double>(), jl.at("pruned").get<std::size_t>(),
                                jl.at("kept").get<std::size_t>()});
      }
      r.history.rounds.push_back(std::move(round));
    }
    r.final_compression = doc.at("final_compression").get<double>();
    r.final_accuracy = doc.at("final_accuracy").get<double>();
    r.final_loss = doc.at("final_loss").get<double>();
    for (const auto& [stage, secs] : doc.at("timings_seconds").items()) {
      r.timings[stage] = secs.get<double>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("report json: ") + e.what());
  }
}

std::filesystem::path emit_report(const ExperimentReport& report, const std::filesystem::path& dir,
                                  ReportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / (format == ReportFormat::kCsv ? "report.csv" : "report.json");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << (format == ReportFormat::kCsv ? report_to_csv(report) : report_to_json(report));
  if (!out) throw IoError("write to " + path.string() + " failed");
  return path;
}

}  // namespace tierprune
