// frf-lab: synthetic data generation, benchmark runs and single-method estimation.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "frflab/error.hpp"
#include "frflab/harness.hpp"
#include "frflab/spectra.hpp"

namespace {

using namespace frflab;

harness::RunConfig load_config(const std::string& path, const std::string& out_dir) {
  harness::RunConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config '" + path + "'");
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("config '" + path + "' is not valid JSON: " + e.what());
    }
    harness::from_json(doc, config);
  }
  if (!out_dir.empty()) config.output_dir = out_dir;
  return config;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir) {
  const auto config = load_config(config_path, out_dir);
  const auto paths = harness::generate(config);
  std::cout << "wrote " << paths.size() << " record(s) to " << config.output_dir << '\n';
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const auto config = load_config(config_path, out_dir);
  const auto table = harness::run(config);
  harness::write_summary_csv(table, std::cout);
  return table.failures() > 0 ? 2 : 0;
}

int cmd_estimate(const std::string& data, const std::string& method, int ell, const std::string& out,
                 const std::string& json_out, int starts, bool trace) {
  std::ifstream in(data);
  if (!in) throw InvalidArgument("cannot open data file '" + data + "'");
  const auto record = spectra::read_csv(in);
  lgpr::EbOptions eb;
  eb.starts = starts;
  eb.keep_trace = trace;
  const auto est = harness::estimate(harness::parse_method(method), record, ell, {}, eb);
  std::ostringstream csv;
  write_csv(est, csv);
  if (out.empty() || out == "-") {
    std::cout << csv.str();
  } else {
    harness::write_atomic(out, csv.str());
  }
  if (!json_out.empty()) harness::write_atomic(json_out, to_json(est, trace).dump(2) + "\n");
  if (record.has_ground_truth()) {
    const auto band = harness::evaluation_band(record);
    if (!band.empty()) std::cerr << "mse_db " << harness::mse_db(est, record, band) << '\n';
  }
  return est.failures() > 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local FRF estimation lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* gen = app.add_subcommand("gen", "Generate synthetic spectra records");
  gen->add_option("--config", config_path, "Run configuration (JSON)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run the benchmark grid");
  run->add_option("--config", config_path, "Run configuration (JSON)");
  run->add_option("--out", out_dir, "Output directory")->required();

  std::string data, method = "LGPR(DPpR1)", out, json_out;
  int ell = 5;
  int starts = 0;
  bool trace = false;
  auto* est = app.add_subcommand("estimate", "Estimate the FRF of a spectra record");
  est->add_option("--data", data, "Spectra record (CSV)")->required();
  est->add_option("--method", method, "Method, e.g. LPM(2) or LGPR-DPpR1");
  est->add_option("--ell", ell, "Window half-width")->check(CLI::NonNegativeNumber);
  est->add_option("--out", out, "Estimate CSV ('-' for stdout)");
  est->add_option("--json", json_out, "Also write the estimate as JSON");
  est->add_option("--starts", starts, "Empirical-Bayes starts per window (0 = automatic)");
  est->add_flag("--trace", trace, "Embed the tuning trace in the JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(config_path, out_dir);
    if (*run) return cmd_run(config_path, out_dir);
    if (*est) return cmd_estimate(data, method, ell, out, json_out, starts, trace);
  } catch (const frflab::TuningFailed& e) {
    std::cerr << "frf-lab: " << e.what() << " [" << e.diagnostics() << "]\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "frf-lab: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
