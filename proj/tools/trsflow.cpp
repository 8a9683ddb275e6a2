// trsflow command line: run, resume, bench, inspect, serve, check.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include "trsflow/ckptio/checkpoint.hpp"
#include "trsflow/cli/config.hpp"
#include "trsflow/cli/runner.hpp"
#include "trsflow/steering/protocol.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::size_t at = 0;
  while (at <= s.size()) {
    const auto comma = s.find(',', at);
    const auto tok = s.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    std::size_t used = 0;
    out.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw CLI::ValidationError("bad number '" + tok + "'");
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace trsflow;
  CLI::App app{"trsflow: hierarchical-grid flow solver with checkpointing and time reversible steering"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "Run a configuration to its end time");
  std::string config_path;
  int ranks = 0;
  int aggregators = -1;
  std::string output;
  double end_time = 0.0;
  double interval = -1.0;
  bool overwrite = false;
  run_cmd->add_option("config", config_path, "TOML run file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--ranks", ranks, "Override run.ranks");
  run_cmd->add_option("--aggregators", aggregators, "Override run.aggregators");
  run_cmd->add_option("--output", output, "Override run.output");
  run_cmd->add_option("--end", end_time, "Override run.end_time");
  run_cmd->add_option("--interval", interval, "Override run.snapshot_interval");
  run_cmd->add_flag("--overwrite", overwrite, "Replace an existing output file");

  // resume
  auto* resume_cmd = app.add_subcommand("resume", "Continue a run from a snapshot");
  cli::ResumeOptions ro;
  double resume_end = -1.0;
  resume_cmd->add_option("file", ro.file, "Checkpoint file")->required()->check(CLI::ExistingFile);
  resume_cmd->add_option("--t", ro.label, "Snapshot label, e.g. 1.000000")->required();
  resume_cmd->add_flag("--branch", ro.branch, "Start a branch file (required unless --t is the latest snapshot)");
  resume_cmd->add_option("--ranks", ro.ranks, "Compute ranks")->check(CLI::PositiveNumber);
  resume_cmd->add_option("--aggregators", ro.aggregators, "Aggregators (0: one per rank)");
  resume_cmd->add_option("--end", resume_end, "End time (default: the snapshot time)");
  resume_cmd->add_option("--interval", ro.snapshot_interval, "Snapshot interval (0: only at the end)");
  resume_cmd->add_option("--output", ro.output, "Branch file path");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time snapshot writes of a fully refined domain over P and A");
  std::string bench_config;
  std::vector<int> bench_ranks{1, 2, 4, 8};
  std::vector<std::string> bench_aggs{"1", "P"};
  cli::BenchOptions bo;
  std::string csv_path;
  bench_cmd->add_option("config", bench_config, "TOML run file (geometry and objects)")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--ranks", bench_ranks, "Rank counts")->delimiter(',');
  bench_cmd->add_option("--aggregators", bench_aggs, "Aggregator counts; P means one per rank")->delimiter(',');
  bench_cmd->add_option("--depth", bo.depth, "Refinement depth (default geometry.max_depth)");
  bench_cmd->add_option("--dir", bo.dir, "Scratch directory");
  bench_cmd->add_flag("--keep", bo.keep_files, "Keep the written files");
  bench_cmd->add_option("--csv", csv_path, "CSV output file (default stdout)");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "List snapshots, ancestry and grid counts; dump a window");
  std::string inspect_file;
  std::string inspect_label;
  std::string window;
  std::int64_t budget = 100000;
  std::vector<std::string> fields;
  inspect_cmd->add_option("file", inspect_file, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--t", inspect_label, "Snapshot label");
  inspect_cmd->add_option("--window", window, "x0,y0,z0,x1,y1,z1");
  inspect_cmd->add_option("--budget", budget, "Point budget of the window")->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--fields", fields, "Fields to dump (u,v,w,p,T)")->delimiter(',');

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run with the console gateway until interrupted");
  std::string serve_config;
  int port = -1;
  std::string address = "127.0.0.1";
  serve_cmd->add_option("config", serve_config, "TOML run file")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port, "Gateway port (default $TRSFLOW_GATEWAY_PORT or 8765)");
  serve_cmd->add_option("--address", address, "Listen address");
  serve_cmd->add_flag("--overwrite", overwrite, "Replace an existing output file");

  // check
  auto* check_cmd = app.add_subcommand("check", "Validate a run file and print its canonical form");
  std::string check_config;
  check_cmd->add_option("config", check_config, "TOML run file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (run_cmd->parsed()) {
      auto cfg = cli::load_config(config_path);
      if (ranks > 0) cfg.ranks = ranks;
      if (aggregators >= 0) cfg.aggregators = aggregators;
      if (!output.empty()) cfg.output = output;
      if (end_time > 0.0) cfg.end_time = end_time;
      if (interval >= 0.0) cfg.snapshot_interval = interval;
      cfg.validate();
      const auto r = cli::run(cfg, std::cout, &g_stop, overwrite);
      return r.interrupted ? 130 : 0;
    }
    if (resume_cmd->parsed()) {
      if (resume_end >= 0.0) ro.end_time = resume_end;
      const auto r = cli::resume(ro, std::cout, &g_stop);
      return r.interrupted ? 130 : 0;
    }
    if (bench_cmd->parsed()) {
      const auto cfg = cli::load_config(bench_config);
      bo.ranks = bench_ranks;
      bo.aggregators.clear();
      for (const auto& a : bench_aggs) bo.aggregators.push_back(a == "P" || a == "p" ? 0 : std::stoi(a));
      const auto rows = cli::bench(cfg, bo, std::cerr);
      if (csv_path.empty()) {
        cli::write_bench_csv(rows, std::cout);
      } else {
        std::ofstream out(csv_path);
        cli::write_bench_csv(rows, out);
        if (!out) throw std::runtime_error("cannot write " + csv_path);
      }
      cli::write_bench_table(rows, std::cerr);
      return 0;
    }
    if (inspect_cmd->parsed()) {
      cli::InspectOptions io;
      if (!inspect_label.empty()) io.label = inspect_label;
      if (!window.empty()) {
        const auto v = parse_numbers(window);
        if (v.size() != 6) throw CLI::ValidationError("--window needs 6 numbers");
        io.window = spacetree::Box{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
      }
      io.budget = budget;
      if (!fields.empty()) {
        io.fields.clear();
        for (const auto& f : fields) io.fields.push_back(steering::field_index(f));
      }
      cli::inspect(inspect_file, io, std::cout);
      return 0;
    }
    if (serve_cmd->parsed()) {
      const auto cfg = cli::load_config(serve_config);
      const auto p = port >= 0 ? static_cast<std::uint16_t>(port) : cli::gateway_port_from_env(8765);
      cli::serve(cfg, p, g_stop, std::cout, overwrite, address);
      return 0;
    }
    if (check_cmd->parsed()) {
      std::cout << cli::to_toml(cli::load_config(check_config));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
