// Command-line front end: run one experiment, sweep a grid, or re-aggregate
// a results directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitrl/config.hpp"
#include "splitrl/harness.hpp"
#include "splitrl/numfmt.hpp"

namespace fs = std::filesystem;
using namespace splitrl;

namespace {

std::vector<std::string> task_names(const ExperimentConfig& config) {
  std::vector<std::string> names;
  for (const auto& t : config.tasks) names.push_back(t.name);
  return names;
}

const FinalPerformance& average_row(const Summary& summary) {
  for (const auto& f : summary.final) {
    if (f.task_id < 0) return f;
  }
  throw std::runtime_error("summary has no task-averaged row");
}

int cmd_run(const std::string& config_path, const std::vector<std::uint64_t>& seeds, const std::string& out,
            bool verbose) {
  auto config = load_config(config_path);
  if (!seeds.empty()) config.seeds = seeds;
  config.validate();
  const fs::path dir = out.empty() ? fs::path(config.output_dir) : fs::path(out);
  RunOptions options;
  options.verbose = verbose;
  const auto result = run_experiment(config, options);
  write_experiment(dir, config, result);
  const auto names = task_names(config);
  std::cout << format_final_table(result.summary, names);
  std::cout << "results written to " << dir.string() << '\n';
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out, bool verbose) {
  const auto base = load_config(config_path);
  const auto cells = make_grid(base);
  const fs::path root(out);
  fs::create_directories(root);

  std::vector<std::array<std::string, 3>> table;
  table.push_back({"cell", "final_mean", "final_std"});
  const auto csv_path = root / "grid_summary.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "cell,variant,jt_iterations,sp_fraction,final_mean,final_std\n";

  RunOptions options;
  options.verbose = verbose;
  for (const auto& cell : cells) {
    std::cerr << "grid cell " << cell.name << '\n';
    const auto result = run_experiment(cell, options);
    write_experiment(root / cell.name, cell, result);
    const auto& avg = average_row(result.summary);
    csv << cell.name << ',' << to_string(cell.variant) << ',' << cell.jt_iterations << ','
        << format_number(cell.sp_fraction) << ',' << format_number(avg.mean_over_seeds) << ','
        << format_number(avg.std_over_seeds) << '\n';
    std::ostringstream m, s;
    m << std::fixed << std::setprecision(2) << avg.mean_over_seeds;
    s << std::fixed << std::setprecision(2) << avg.std_over_seeds;
    table.push_back({cell.name, m.str(), s.str()});
  }
  csv.close();
  if (!csv) throw std::runtime_error("failed writing " + csv_path.string());

  std::array<std::size_t, 3> width{};
  for (const auto& row : table) {
    for (std::size_t c = 0; c < 3; ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : table) {
    std::cout << std::left << std::setw(static_cast<int>(width[0])) << row[0];
    for (std::size_t c = 1; c < 3; ++c) std::cout << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    std::cout << '\n';
  }
  return 0;
}

int cmd_report(const std::string& in) {
  const fs::path dir(in);
  report_directory(dir);
  std::ifstream csv(dir / "final_performance.csv");
  std::cout << csv.rdbuf() << '\n';
  std::ifstream table(dir / "summary.txt");
  std::cout << table.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task PPO with gradient-guided parameter sharing"};
  app.require_subcommand(1);

  std::string config_path, out, in;
  std::vector<std::uint64_t> seeds;
  bool verbose = false;

  auto* run = app.add_subcommand("run", "Train every seed of one experiment config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seeds, "Seeds to run, overriding the config");
  run->add_option("--out", out, "Output directory (defaults to the config's output_dir)");
  run->add_flag("-v,--verbose", verbose, "Per-iteration progress on stderr");

  auto* grid = app.add_subcommand("grid", "Run the jt x sp grid and the baselines");
  grid->add_option("--config", config_path, "Base experiment config (JSON)")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", out, "Output directory")->required();
  grid->add_flag("-v,--verbose", verbose, "Per-iteration progress on stderr");

  auto* report = app.add_subcommand("report", "Re-aggregate run CSVs in a results directory");
  report->add_option("--in", in, "Results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, seeds, out, verbose);
    if (grid->parsed()) return cmd_grid(config_path, out, verbose);
    return cmd_report(in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
