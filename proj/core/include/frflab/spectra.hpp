#pragma once

// Synthetic experiments: periodic multisine excitation, a discretized
// lightly damped test system, calibrated output noise and the unitary DFT
// that turns the retained samples into per-bin spectra.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "frflab/types.hpp"

namespace frflab::spectra {

struct ExperimentConfig {
  std::size_t sample_count = 2500;     // N, samples kept for the DFT
  double sampling_interval = 0.1;      // T_s in seconds
  std::size_t multisine_period = 3100; // P, in samples; N <= P
  double excited_fraction = 0.4;       // of Nyquist
  double snr_db = 60.0;                // +inf disables the noise
  std::size_t warmup_periods = 5;
  std::uint64_t rng_seed = 1;

  /// Throws InvalidArgument on any violated field constraint.
  void validate() const;

  /// Number of excited bins on the period grid, floor(fraction * P/2).
  std::size_t excited_period_bins() const;

  /// Highest excited angular frequency, fraction * pi / T_s.
  double max_excited_omega() const;
};

/// Continuous-time second-order mode g*wn^2 / (s^2 + 2 zeta wn s + wn^2).
struct Mode {
  double natural_frequency = 1.0;  // rad/s
  double damping_ratio = 0.01;
  double gain = 1.0;
};

/// One discrete second-order section, a[0] == 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};

  Complex response(Complex z_inverse) const;
  bool is_stable() const;
};

/// Sum of discretized modes plus an optional direct feedthrough.
///
/// Each mode is mapped with a bilinear transform prewarped at its natural
/// frequency, so discrete resonances sit where the continuous ones do.
class TestSystem {
 public:
  TestSystem() = default;

  static TestSystem from_modes(std::vector<Mode> modes, double sampling_interval,
                               double feedthrough = 0.0);

  /// Three modes at 1.5, 3 and 5 rad/s, damping 0.005/0.003/0.008, unit gains.
  static TestSystem lightly_damped(double sampling_interval = 0.1);

  /// y = u.
  static TestSystem unit_gain(double sampling_interval = 0.1);

  const std::vector<Mode>& modes() const noexcept { return modes_; }
  const std::vector<Biquad>& sections() const noexcept { return sections_; }
  double sampling_interval() const noexcept { return sampling_interval_; }
  double feedthrough() const noexcept { return feedthrough_; }

  /// Discrete transfer function at z = exp(j omega T_s).
  Complex response(double omega) const;

  /// Zero-initial-state response to x.
  std::vector<double> filter(std::span<const double> x) const;

  bool is_stable() const;
  bool is_lightly_damped() const;  // some mode with zeta <= 0.01
  bool modes_within(double omega_max) const;

  /// Longest modal time constant 1/(zeta wn), seconds; 0 without modes.
  double slowest_time_constant() const;

 private:
  std::vector<Mode> modes_;
  std::vector<Biquad> sections_;
  double sampling_interval_ = 0.1;
  double feedthrough_ = 0.0;
};

/// Per-bin spectra on k = 0..floor(N/2).
struct SpectraRecord {
  std::vector<double> omega;  // 2 pi k / (N T_s)
  std::vector<Complex> input;
  std::vector<Complex> output;
  std::vector<bool> excited;
  std::optional<std::vector<Complex>> g_true;
  std::optional<std::vector<double>> sigma2_true;

  std::size_t bin_count() const noexcept { return omega.size(); }
  bool has_ground_truth() const noexcept { return g_true.has_value() && sigma2_true.has_value(); }

  /// Constant bin spacing 2 pi / (N T_s).
  double resolution() const;

  /// Throws InvalidArgument when column lengths disagree or the grid is not uniform.
  void validate() const;
};

/// Unitary N-point DFT, X(k) = N^{-1/2} sum_n x(n) exp(-2 pi j n k / N).
std::vector<Complex> dft(std::span<const double> x);

/// Inverse of dft for a full-length spectrum (real part returned).
std::vector<double> idft_real(std::span<const Complex> spectrum);

/// One period (P samples) of a unit-RMS, zero-DC, equal-amplitude random-phase multisine.
std::vector<double> multisine(const ExperimentConfig& config);

/// Runs the experiment and returns the spectra of the last N samples.
///
/// When noise_filter is given the disturbance is filtered white noise and the
/// ground-truth variance follows |H|^2 per bin.
SpectraRecord simulate(const TestSystem& system, const ExperimentConfig& config,
                       const TestSystem* noise_filter = nullptr);

/// Splitmix-style derivation of an independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Serialization. CSV header:
// k, omega, re_U, im_U, re_Y, im_Y, re_Gtrue, im_Gtrue, sigma2_true, excited
void write_csv(const SpectraRecord& record, std::ostream& out);
SpectraRecord read_csv(std::istream& in);
nlohmann::json to_json(const SpectraRecord& record);
SpectraRecord record_from_json(const nlohmann::json& doc);

void to_json(nlohmann::json& doc, const ExperimentConfig& config);
void from_json(const nlohmann::json& doc, ExperimentConfig& config);

}  // namespace frflab::spectra
