#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "splitrl/config.hpp"
#include "splitrl/harness.hpp"
#include "splitrl/numfmt.hpp"

namespace splitrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRunHeader = "iteration,task_id,mean_return,episode_count,policy_loss,value_loss";
constexpr const char* kSummaryHeader = "iteration,mean_over_seeds,std_over_seeds,task_id";
constexpr const char* kFinalHeader = "task_id,mean_over_seeds,std_over_seeds";

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void close_checked(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

template <typename T>
T parse_field(const std::string& text, const fs::path& path, std::size_t line_no) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad field '" + text + "'");
  }
  return value;
}

std::vector<std::string> task_names_from(const fs::path& dir) {
  std::vector<std::string> names;
  std::ifstream in(dir / "config.json");
  if (!in) return names;
  try {
    json j;
    in >> j;
    for (const auto& t : j.at("tasks")) names.push_back(t.at("name").get<std::string>());
  } catch (const std::exception&) {
    names.clear();
  }
  return names;
}

void write_summaries(const fs::path& dir, const Summary& summary, std::span<const std::string> names) {
  write_summary_csv(dir / "summary.csv", summary);
  write_final_csv(dir / "final_performance.csv", summary);
  const auto table_path = dir / "summary.txt";
  auto out = open_out(table_path);
  out << format_final_table(summary, names);
  close_checked(out, table_path);
}

}  // namespace

fs::path run_csv_name(std::uint64_t seed) { return "run_seed" + std::to_string(seed) + ".csv"; }

void write_run_csv(const fs::path& path, const RunRecord& record) {
  auto out = open_out(path);
  out << kRunHeader << '\n';
  for (const auto& r : record.rows) {
    out << r.iteration << ',' << r.task_id << ',' << format_number(r.mean_return) << ',' << r.episode_count
        << ',' << format_number(r.policy_loss) << ',' << format_number(r.value_loss) << '\n';
  }
  close_checked(out, path);
}

RunRecord read_run_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRunHeader) {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  RunRecord record;
  const auto stem = path.stem().string();
  if (stem.rfind("run_seed", 0) == 0) record.seed = std::stoull(stem.substr(8));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 6) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    IterationRow row;
    row.iteration = parse_field<std::size_t>(f[0], path, line_no);
    row.task_id = parse_field<std::size_t>(f[1], path, line_no);
    row.mean_return = parse_field<double>(f[2], path, line_no);
    row.episode_count = parse_field<std::size_t>(f[3], path, line_no);
    row.policy_loss = parse_field<double>(f[4], path, line_no);
    row.value_loss = parse_field<double>(f[5], path, line_no);
    record.rows.push_back(row);
  }
  return record;
}

void write_summary_csv(const fs::path& path, const Summary& summary) {
  auto out = open_out(path);
  out << kSummaryHeader << '\n';
  for (const auto& r : summary.rows) {
    out << r.iteration << ',' << format_number(r.mean_over_seeds) << ',' << format_number(r.std_over_seeds) << ','
        << r.task_id << '\n';
  }
  close_checked(out, path);
}

void write_final_csv(const fs::path& path, const Summary& summary) {
  auto out = open_out(path);
  out << kFinalHeader << '\n';
  for (const auto& f : summary.final) {
    out << f.task_id << ',' << format_number(f.mean_over_seeds) << ',' << format_number(f.std_over_seeds) << '\n';
  }
  close_checked(out, path);
}

std::string format_final_table(const Summary& summary, std::span<const std::string> task_names) {
  std::vector<std::array<std::string, 3>> cells;
  cells.push_back({"task", "final_mean", "final_std"});
  for (const auto& f : summary.final) {
    std::string label;
    if (f.task_id < 0) {
      label = "average";
    } else if (static_cast<std::size_t>(f.task_id) < task_names.size()) {
      label = task_names[static_cast<std::size_t>(f.task_id)];
    } else {
      label = "task" + std::to_string(f.task_id);
    }
    std::ostringstream mean, sd;
    mean << std::fixed << std::setprecision(2) << f.mean_over_seeds;
    sd << std::fixed << std::setprecision(2) << f.std_over_seeds;
    cells.push_back({label, mean.str(), sd.str()});
  }
  std::array<std::size_t, 3> width{};
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 3; ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    out << std::left << std::setw(static_cast<int>(width[0])) << row[0];
    for (std::size_t c = 1; c < 3; ++c) out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    out << '\n';
  }
  return out.str();
}

void write_experiment(const fs::path& dir, const ExperimentConfig& config, const ExperimentResult& result) {
  fs::create_directories(dir);

  const auto config_path = dir / "config.json";
  auto cfg_out = open_out(config_path);
  cfg_out << config_to_json(config).dump(2) << '\n';
  close_checked(cfg_out, config_path);

  json manifest;
  manifest["name"] = config.name;
  manifest["variant"] = to_string(config.variant);
  manifest["dynamics"] = "surrogate point-mass environments, not rigid-body simulation";
  manifest["runs"] = json::array();
  for (const auto& rec : result.records) {
    json run;
    run["seed"] = rec.seed;
    run["csv"] = run_csv_name(rec.seed).string();
    run["env_steps_per_task"] = rec.env_steps;
    run["policy_input_dim"] = rec.policy_input_dim;
    run["policy_size"] = rec.policy_size;
    if (rec.mask) {
      run["shared_count"] = rec.mask->shared_count();
      run["mask"] = "mask_seed" + std::to_string(rec.seed) + ".txt";
    }
    manifest["runs"].push_back(run);
  }
  const auto manifest_path = dir / "manifest.json";
  auto man_out = open_out(manifest_path);
  man_out << manifest.dump(2) << '\n';
  close_checked(man_out, manifest_path);

  for (const auto& rec : result.records) {
    write_run_csv(dir / run_csv_name(rec.seed), rec);
    if (rec.mask) {
      const auto mask_path = dir / ("mask_seed" + std::to_string(rec.seed) + ".txt");
      auto out = open_out(mask_path);
      const VarianceVector variance =
          rec.metric ? *rec.metric : VarianceVector::Zero(static_cast<Eigen::Index>(rec.mask->size()));
      write_mask_artifact(out, *rec.mask, variance);
      close_checked(out, mask_path);
    }
  }

  std::vector<std::string> names;
  for (const auto& t : config.tasks) names.push_back(t.name);
  write_summaries(dir, result.summary, names);
}

Summary report_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  static const std::regex pattern(R"(run_seed(\d+)\.csv)");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), pattern)) {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw std::runtime_error("no run_seed*.csv files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> records;
  for (const auto& f : files) records.push_back(read_run_csv(f));
  const auto summary = aggregate_runs(records);
  write_summaries(dir, summary, task_names_from(dir));
  return summary;
}

}  // namespace splitrl
