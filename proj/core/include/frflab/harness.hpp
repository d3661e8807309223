#pragma once

// Benchmark orchestration: scenario x method x replicate grids, MSE in dB
// over the evaluation band, summary tables and per-bin plot data.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "frflab/estimate.hpp"
#include "frflab/lgpr.hpp"
#include "frflab/spectra.hpp"

namespace frflab::harness {

enum class MethodId {
  Lpm2,
  LpmMdl,
  Lrm2,
  LrmMdl,
  IlrmMdl,
  LrpmDi,
  LgprDp,
  LgprDc,
  LgprDcpR1,
  LgprDppR1,
  LgprR1,
  LgprDi,
};

/// "LPM(2)", "LGPR(DPpR1)", ...
std::string_view method_name(MethodId id);

/// Accepts "LGPR(DPpR1)" and "LGPR-DPpR1", case-insensitively.
MethodId parse_method(std::string_view name);

/// The ten methods of the comparison table.
std::vector<MethodId> default_methods();

struct Scenario {
  std::string name = "N2500";
  spectra::ExperimentConfig experiment;
  int half_width = 5;
};

struct RunConfig {
  std::vector<Scenario> scenarios{Scenario{}};
  std::vector<MethodId> methods = default_methods();
  std::size_t replicates = 20;
  std::uint64_t seed = 1;
  std::string output_dir;
  double band_max_omega = 2.0 * kPi;  // evaluation band 0 <= omega < band_max_omega
  lgpr::EbOptions eb;
  std::optional<std::vector<spectra::Mode>> modes;  // default: the lightly damped test system

  /// Throws InvalidArgument when the run cannot be performed.
  void validate() const;
  spectra::TestSystem system(double sampling_interval) const;
};

void to_json(nlohmann::json& doc, const RunConfig& config);
void from_json(const nlohmann::json& doc, RunConfig& config);

/// Excited bins with 0 <= omega < omega_max.
std::vector<std::size_t> evaluation_band(const spectra::SpectraRecord& record, double omega_max = 2.0 * kPi);

/// 10 log10 of the mean squared FRF error over the band; -inf when the error is exactly zero.
/// Failed bins are skipped. Throws InvalidArgument without ground truth or usable bins.
double mse_db(const FrfEstimate& estimate, const spectra::SpectraRecord& record, std::span<const std::size_t> band);

/// Runs one method on the listed bins of a record.
FrfEstimate estimate(MethodId method, const spectra::SpectraRecord& record, int half_width,
                     std::span<const std::size_t> bins, const lgpr::EbOptions& eb = {});

/// Record of one scenario replicate; every method sees the same data.
spectra::SpectraRecord replicate_record(const RunConfig& config, std::size_t scenario, std::size_t replicate);

/// Replicate aggregates of one method at one bin.
struct BinSeries {
  std::size_t k = 0;
  double omega = 0.0;
  double residual_rms = 0.0;       // sqrt(mean |G_hat - G|^2)
  double residual_mean = 0.0;      // mean |G_hat - G|
  double sigma2_hat_mean = 0.0;
  double sigma2_true_mean = 0.0;
  std::size_t failed = 0;
};

struct MethodSummary {
  std::string scenario;
  std::string method;
  std::size_t replicates = 0;     // with a finite MSE
  double mean_mse_db = 0.0;
  double std_mse_db = 0.0;
  double min_mse_db = 0.0;
  double max_mse_db = 0.0;
  std::size_t failed_replicates = 0;
  std::size_t failed_bins = 0;
  std::size_t ilrm_violations = 0;  // bins where the refinement raised the LOE
  std::string status = "ok";
  std::vector<double> mse_db_per_replicate;
  std::vector<BinSeries> bins;
};

struct ResultTable {
  std::vector<MethodSummary> rows;  // scenario-major, methods in configured order

  const MethodSummary* find(std::string_view scenario, MethodId method) const;
  std::size_t failures() const;     // failed replicates plus failed bins
  std::size_t ilrm_violations() const;
};

/// Runs the grid with FRF_LAB_THREADS workers (default: hardware concurrency).
/// Writes summary.csv, summary.json and bins/*.csv when output_dir is set.
ResultTable run(const RunConfig& config);

/// Generates every scenario replicate and writes the records as CSV.
std::vector<std::filesystem::path> generate(const RunConfig& config);

void write_summary_csv(const ResultTable& table, std::ostream& out);
nlohmann::json summary_json(const ResultTable& table);
void write_bins_csv(const MethodSummary& row, std::ostream& out);

/// Writes text to path through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

/// Worker count from FRF_LAB_THREADS, capped by hardware concurrency when unset.
unsigned worker_count();

}  // namespace frflab::harness
