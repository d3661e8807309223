#pragma once

// Kernel priors for local FRF estimation.
//
// DI lives on polynomial coefficients; DP, DC, R1 and their sums live on
// FRF samples over the window grid. PriorModel binds a KernelSpec to one
// window: it resolves default bounds from the window data and evaluates the
// priors of G and T together with their derivatives.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "frflab/cgauss.hpp"
#include "frflab/localwin.hpp"
#include "frflab/types.hpp"

namespace frflab::kernels {

using cgauss::AugmentedKernel;

enum class Family { DI, DP, DC, R1, DCpR1, DPpR1 };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

/// Margin inside the convergence bounds of DI and DP.
inline constexpr double kBoundMargin = 1e-6;

struct DiParams {
  double alpha_g = 1.0;
  double lambda = 0.0;
  double beta_g = 1.0;
  double kappa = 0.0;
  double alpha_t = 1.0;

  /// beta_T = alpha_T beta_G / alpha_G (0 when alpha_G = 0).
  double beta_t() const noexcept { return alpha_g > 0.0 ? alpha_t * beta_g / alpha_g : 0.0; }
};

struct DpParams {
  double alpha_g = 1.0;
  double lambda = 0.0;
  double beta_g = 1.0;
  double kappa = 0.0;
};

struct DcParams {
  double lambda = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
};

struct R1Params {
  double beta1 = 1.0;
  double beta2 = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
};

/// (1 - delta) / x_max, the DI bound on lambda and kappa.
double di_bound(double x_max);
/// (1 - delta) / x_max^2, the DP bound on lambda and kappa.
double dp_bound(double x_max);

/// Block-diagonal coefficient prior: G block of size n_b+1, then T block of size n_i+1
/// (absent for n_i = -1). lambda_max bounds lambda and kappa.
AugmentedKernel di_kernel(const DiParams& p, int n_b, int n_i, double lambda_max);

/// Entrywise alpha_G/(1 - lambda x x') +- beta_G/(1 - kappa x x') on x = alpha * omega_r.
AugmentedKernel dp_kernel(const DpParams& p, const RVector& x);

/// Diagonal-correlated kernel on absolute frequencies.
AugmentedKernel dc_kernel(const DcParams& p, const RVector& omega);

/// Second-order resonance kernel on absolute frequencies.
AugmentedKernel r1_kernel(const R1Params& p, const RVector& omega);

/// Gamma -> Phi Gamma Phi^T, C -> Phi C Phi^T.
AugmentedKernel pushforward(const AugmentedKernel& coefficients, const RMatrix& phi);

/// A kernel family with optional fixed values and bound overrides.
///
/// eta entries are frozen at the given value. bounds entries replace the
/// per-window defaults. c_T, when set, fixes the transient coupling; 0 drops
/// the transient prior.
struct KernelSpec {
  Family family = Family::DPpR1;
  std::map<std::string, double> eta;
  std::map<std::string, std::pair<double, double>> bounds;
  std::optional<double> c_t;

  static KernelSpec of(Family family) { return KernelSpec{family, {}, {}, std::nullopt}; }
};

void to_json(nlohmann::json& doc, const KernelSpec& spec);
void from_json(const nlohmann::json& doc, KernelSpec& spec);

/// Names of the hyperparameters of a family, in evaluation order.
std::vector<std::string> parameter_names(Family family);

struct Hyperparameter {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;

  bool frozen() const noexcept { return !(upper > lower); }
};

/// DI on coefficients, or DI pushed forward to FRF samples.
enum class Space { Coefficient, Frf };

struct ModelOptions {
  int n_b = 4;              // DI orders
  int n_i = 4;
  double scaling = 0.0;     // alpha; 0 selects 1/resolution
  Space di_space = Space::Coefficient;
};

/// Priors of G and T for one window.
struct PriorPair {
  AugmentedKernel g;
  AugmentedKernel t;
};

/// Sensitivity of a scalar to the priors: it changes by
/// Re sum(g_cov .* dGamma_G + g_rel .* dC_G + t_cov .* dGamma_T + t_rel .* dC_T).
struct PriorWeights {
  CMatrix g_cov, g_rel, t_cov, t_rel;
};

class PriorModel {
 public:
  PriorModel(const KernelSpec& spec, const LocalWindow& window, ModelOptions options = {});

  Family family() const noexcept { return family_; }
  Space space() const noexcept { return space_; }
  const std::vector<Hyperparameter>& parameters() const noexcept { return params_; }
  Index size() const noexcept { return static_cast<Index>(params_.size()); }

  /// Default bounds of the noise variance: window output power times [1e-12, 1e4].
  std::pair<double, double> noise_bounds() const noexcept { return noise_bounds_; }

  /// Coefficient-space regressors (DI only).
  const RegressorSet& regressors() const noexcept { return regressors_; }
  const LocalWindow& window() const noexcept { return window_; }

  /// Priors at eta (natural units, one entry per parameter). Throws InvalidArgument
  /// if eta is outside the family's domain.
  PriorPair evaluate(const RVector& eta) const;

  /// Priors and their partial derivatives with respect to eta(p) for every p in which.
  PriorPair evaluate(const RVector& eta, const std::vector<Index>& which, std::vector<PriorPair>& derivatives) const;

  /// Partials of the weighted scalar with respect to eta(p), p in which, without forming
  /// the derivative kernels. at must be evaluate(eta).
  RVector contract(const RVector& eta, const PriorPair& at, const std::vector<Index>& which,
                   const PriorWeights& weights) const;

 private:
  enum class Id { AlphaG, Lambda, BetaG, Kappa, AlphaT, LambdaDC, AlphaDC, BetaDC, Beta1, Beta2, Gamma1, Gamma2, CT };

  PriorPair build(const RVector& eta, const std::vector<Index>* which, std::vector<PriorPair>* derivatives) const;
  double value_of(const RVector& eta, Id id) const;
  Index position(Id id) const;

  Family family_;
  std::vector<Id> ids_;
  Space space_ = Space::Frf;
  std::vector<Hyperparameter> params_;
  std::pair<double, double> noise_bounds_{};
  int n_b_ = 0;
  int n_i_ = 0;
  double x_max_ = 1.0;
  RVector x_;          // alpha * offset omega
  RVector omega_;      // absolute omega
  RegressorSet regressors_;
  LocalWindow window_;
};

}  // namespace frflab::kernels
