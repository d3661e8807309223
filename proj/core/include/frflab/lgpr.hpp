#pragma once

// Regularized local estimators: LRPM (coefficient-space MAP under the DI
// kernel) and LGPR (FRF-space MAP under any kernel), both with per-window
// empirical-Bayes tuning of the hyperparameters and the noise variance.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "frflab/cgauss.hpp"
#include "frflab/estimate.hpp"
#include "frflab/kernels.hpp"
#include "frflab/localwin.hpp"
#include "frflab/spectra.hpp"

namespace frflab::lgpr {

enum class GradientMode { Analytic, CentralDifference };

struct EbOptions {
  int starts = 0;              // 0 selects 5 * (free hyperparameters) + 1
  std::uint64_t seed = 0;      // offsets the quasi-random start sequence
  GradientMode gradient = GradientMode::Analytic;
  int max_iter = 200;
  double gtol = 1e-5;   // projected gradient in log coordinates
  double ftol = 1e-9;   // relative decrease per iteration
  bool warm_start = true;
  bool keep_trace = false;
};

struct WarmStart {
  RVector eta;
  double sigma2 = 0.0;
};

struct TunedWindow {
  std::vector<std::string> names;
  RVector eta;            // every hyperparameter, frozen ones included
  double sigma2 = 0.0;
  double nll = 0.0;
  bool converged = false; // false when no start converged and the best finite one is returned
  int starts = 0;
  int evaluations = 0;
  std::vector<StartTrace> trace;
  Complex g_hat{};
  Complex t_hat{};
};

/// Negative log marginal likelihood of the window data at (eta, sigma2).
double window_nll(const kernels::PriorModel& model, const RVector& eta, double sigma2);

/// window_nll and its partials with respect to eta(p) for p in which, then sigma2 last.
cgauss::NllValue window_nll_with_gradient(const kernels::PriorModel& model, const RVector& eta, double sigma2,
                                          const std::vector<Index>& which);

struct WindowMap {
  Complex g_hat{};
  Complex t_hat{};
  CVector g;  // over the window (FRF space), or B coefficients (coefficient space)
  CVector t;
  double conjugacy_residual = 0.0;
};

/// MAP estimates at fixed (eta, sigma2), read at the window's evaluation offset.
WindowMap map_window(const kernels::PriorModel& model, const RVector& eta, double sigma2);

/// Multistart bound-constrained minimization of window_nll over log eta and log sigma2.
/// Throws TuningFailed when no start yields a finite value.
TunedWindow eb_tune(const kernels::PriorModel& model, const EbOptions& options, const WarmStart* warm = nullptr);

struct LrpmOptions {
  int n_b = 4;
  int n_i = 4;
  double scaling = 0.0;  // 0 selects 1/resolution
  EbOptions eb;
};

struct LgprOptions {
  EbOptions eb;
  kernels::ModelOptions model{4, 4, 0.0, kernels::Space::Frf};  // used by DI only
};

/// Excited bins of the record, in increasing order.
std::vector<std::size_t> excited_bins(const spectra::SpectraRecord& record);

/// LRPM at the listed bins (all excited bins when empty). Per-bin failures are recorded.
FrfEstimate lrpm_estimate(const spectra::SpectraRecord& record, int half_width, const LrpmOptions& options = {},
                          std::span<const std::size_t> bins = {});

/// LGPR with the given kernel at the listed bins. DI is pushed forward to FRF samples.
FrfEstimate lgpr_estimate(const spectra::SpectraRecord& record, int half_width, const kernels::KernelSpec& spec,
                          const LgprOptions& options = {}, std::span<const std::size_t> bins = {});

/// "name=value;..." for a tuned window.
std::string describe(const TunedWindow& tuned);

}  // namespace frflab::lgpr
